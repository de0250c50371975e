//! Pixel ranking, insertion/deletion perturbation and curve scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::AttributionMap;
use crate::model::exec::forward;
use crate::model::graph::ModelGraph;
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 100;

/// All pixels of an H×W grid, most relevant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelRanking {
    pub height: usize,
    pub width: usize,
    pub order: Vec<(usize, usize)>,
}

impl PixelRanking {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Ranks pixels by descending value; ties keep row-major order.
pub fn rank_values(values: &Tensor) -> Result<PixelRanking> {
    let &[h, w] = values.shape() else {
        return Err(Error::InvalidShape {
            op: "rank_pixels",
            reason: format!("expected an H×W map, got {:?}", values.shape()),
        });
    };
    let v = values.data();
    let mut idx: Vec<usize> = (0..h * w).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    Ok(PixelRanking {
        height: h,
        width: w,
        order: idx.into_iter().map(|i| (i / w, i % w)).collect(),
    })
}

/// Ranks by the quantized map when present, else by the raw map.
pub fn rank_pixels(map: &AttributionMap) -> Result<PixelRanking> {
    rank_values(map.final_values())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    /// Start blank, reveal top-ranked pixels.
    Insertion,
    /// Start from the image, blank out top-ranked pixels.
    Deletion,
}

/// Input after inserting or deleting the first `n` ranked pixels (all channels),
/// with zero in normalised space as the blank value.
pub fn perturb(
    normalized: &Tensor,
    ranking: &PixelRanking,
    n: usize,
    mode: PerturbMode,
) -> Result<Tensor> {
    let (c, h, w) = normalized.chw("perturb")?;
    if (h, w) != (ranking.height, ranking.width) {
        return Err(Error::InvalidShape {
            op: "perturb",
            reason: format!(
                "image is {h}×{w}, ranking covers {}×{}",
                ranking.height, ranking.width
            ),
        });
    }
    if n > ranking.len() {
        return Err(Error::InvalidConfig(format!(
            "n = {n} exceeds {} pixels",
            ranking.len()
        )));
    }
    let mut in_set = vec![false; h * w];
    for &(r, col) in &ranking.order[..n] {
        in_set[r * w + col] = true;
    }
    let hw = h * w;
    let x = normalized.data();
    let data = (0..c * hw)
        .map(|i| {
            let keep = in_set[i % hw] == (mode == PerturbMode::Insertion);
            if keep {
                x[i]
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(vec![c, h, w], data)
}

/// Pixel counts visited by a curve with `steps` steps over `total` pixels.
pub fn step_counts(total: usize, steps: usize) -> Vec<usize> {
    let mut ns: Vec<usize> = (0..=steps)
        .map(|t| ((t as f64) * total as f64 / steps as f64).round() as usize)
        .collect();
    ns.push(0);
    ns.push(total);
    ns.sort_unstable();
    ns.dedup();
    ns
}

/// Trapezoidal area under `(x, y)` points.
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|p| (p[1].0 - p[0].0) * (p[0].1 + p[1].1) * 0.5)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub mode: PerturbMode,
    /// `(n/N, p_c)` pairs; fractions strictly increase from 0 to 1.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl EvalCurve {
    pub fn from_points(mode: PerturbMode, points: Vec<(f64, f64)>) -> Self {
        let auc = trapezoid_auc(&points);
        Self { mode, points, auc }
    }

    /// `fraction,probability` rows followed by `# auc=<value>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,probability\n");
        for (f, p) in &self.points {
            out.push_str(&format!("{f},{p}\n"));
        }
        out.push_str(&format!("# auc={}\n", self.auc));
        out
    }
}

/// Insertion or deletion curve for `class`, one forward pass per step.
pub fn curve(
    graph: &ModelGraph,
    normalized: &Tensor,
    ranking: &PixelRanking,
    class: usize,
    mode: PerturbMode,
    steps: usize,
) -> Result<EvalCurve> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "steps must be at least 2, got {steps}"
        )));
    }
    if class >= graph.num_classes {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: graph.num_classes,
        });
    }
    let total = ranking.len();
    let points = step_counts(total, steps)
        .into_iter()
        .map(|n| {
            let x = perturb(normalized, ranking, n, mode)?;
            let p = forward(graph, &x)?;
            Ok((n as f64 / total as f64, p.data()[class] as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalCurve::from_points(mode, points))
}

/// Insertion AUC minus deletion AUC.
pub fn id_score(insertion: &EvalCurve, deletion: &EvalCurve) -> f64 {
    insertion.auc - deletion.auc
}

/// Scores of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessScores {
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub id_score: f64,
}

/// Both curves for one image and attribution map.
pub fn evaluate_map(
    graph: &ModelGraph,
    normalized: &Tensor,
    map: &AttributionMap,
    class: usize,
    steps: usize,
) -> Result<(EvalCurve, EvalCurve, FaithfulnessScores)> {
    let ranking = rank_pixels(map)?;
    let ins = curve(
        graph,
        normalized,
        &ranking,
        class,
        PerturbMode::Insertion,
        steps,
    )?;
    let del = curve(
        graph,
        normalized,
        &ranking,
        class,
        PerturbMode::Deletion,
        steps,
    )?;
    let scores = FaithfulnessScores {
        insertion_auc: ins.auc,
        deletion_auc: del.auc,
        id_score: id_score(&ins, &del),
    };
    Ok((ins, del, scores))
}

/// Mean and sample standard deviation (`n − 1` denominator; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
