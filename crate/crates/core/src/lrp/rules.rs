//! Per-layer relevance redistribution rules.
//!
//! Every layer that is a linear projection (fc, conv, GAP, max-pool) moves
//! relevance from its outputs to its inputs in proportion to each input's
//! contribution `z_ij`. Biases never absorb relevance.

use crate::error::{Error, Result};
use crate::ops::ConvGeometry;
use crate::tensor::{PoolIndices, Relevance, Tensor};

/// Rule applied to one linear layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerRule {
    /// `z_ij = max(0, w_ji)·h_i`; a zero denominator spreads `R_j` uniformly over its fan-in.
    ZPlus,
    /// `z_ij = w_ji·h_i` with `ε·sign(Σz)` added to each denominator, `sign(0) = +1`.
    Epsilon(f64),
}

impl LayerRule {
    #[inline]
    fn weight(self, w: f32) -> f64 {
        match self {
            LayerRule::ZPlus => (w as f64).max(0.0),
            LayerRule::Epsilon(_) => w as f64,
        }
    }

    /// Denominator for a summed contribution `z`, or `None` when z⁺ falls back to uniform.
    #[inline]
    fn denominator(self, z: f64) -> Option<f64> {
        match self {
            LayerRule::ZPlus if z == 0.0 => None,
            LayerRule::ZPlus => Some(z),
            LayerRule::Epsilon(eps) => {
                let sign = if z >= 0.0 { 1.0 } else { -1.0 };
                Some(z + eps * sign)
            }
        }
    }
}

/// Relevance through `W·h` (`W` is E×D, `h` is flattened to D). Output takes the shape of `h`.
pub fn lrp_linear(
    h: &Tensor,
    weight: &Tensor,
    r_out: &Relevance,
    rule: LayerRule,
) -> Result<Relevance> {
    let (e, d) = match weight.shape() {
        &[e, d] => (e, d),
        s => {
            return Err(Error::InvalidShape {
                op: "lrp_linear",
                reason: format!("weight must be E×D, got {s:?}"),
            })
        }
    };
    if h.len() != d {
        return Err(Error::ShapeMismatch {
            op: "lrp_linear",
            dim: "input features".into(),
            expected: d,
            actual: h.len(),
        });
    }
    if r_out.len() != e {
        return Err(Error::ShapeMismatch {
            op: "lrp_linear",
            dim: "output relevance".into(),
            expected: e,
            actual: r_out.len(),
        });
    }
    let x = h.data();
    let mut r_in = vec![0f64; d];
    for (row, &r) in weight.data().chunks_exact(d).zip(r_out.data()) {
        if r == 0.0 {
            continue;
        }
        let z: f64 = row
            .iter()
            .zip(x)
            .map(|(&w, &v)| rule.weight(w) * v as f64)
            .sum();
        match rule.denominator(z) {
            Some(den) => {
                for ((acc, &w), &v) in r_in.iter_mut().zip(row).zip(x) {
                    *acc += rule.weight(w) * v as f64 / den * r;
                }
            }
            None => {
                let share = r / d as f64;
                r_in.iter_mut().for_each(|acc| *acc += share);
            }
        }
    }
    Relevance::new(h.shape().to_vec(), r_in)
}

/// Relevance through a convolution, viewed as the sparse linear projection it is.
///
/// Padding cells contribute nothing to numerators or denominators. A zero z⁺
/// denominator spreads that output's relevance over its in-bounds receptive field.
pub fn lrp_conv(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    r_out: &Relevance,
    rule: LayerRule,
) -> Result<Relevance> {
    let g = ConvGeometry::new("lrp_conv", input.shape(), weight, stride, padding)?;
    r_out.expect_shape("lrp_conv", "output relevance", &[g.c_out, g.h_out, g.w_out])?;
    let x = input.data();
    let wt = weight.data();
    let mut r_in = vec![0f64; input.len()];
    let rr = r_out.data();
    for o in 0..g.c_out {
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let r = rr[(o * g.h_out + oy) * g.w_out + ox];
                if r == 0.0 {
                    continue;
                }
                let rows: Vec<(usize, usize)> = (0..g.k)
                    .filter_map(|ky| g.source(oy, ky, g.h).map(|iy| (ky, iy)))
                    .collect();
                let cols: Vec<(usize, usize)> = (0..g.k)
                    .filter_map(|kx| g.source(ox, kx, g.w).map(|ix| (kx, ix)))
                    .collect();
                let mut z = 0f64;
                for c in 0..g.c_in {
                    for &(ky, iy) in &rows {
                        for &(kx, ix) in &cols {
                            let w = rule.weight(wt[((o * g.c_in + c) * g.k + ky) * g.k + kx]);
                            z += w * x[(c * g.h + iy) * g.w + ix] as f64;
                        }
                    }
                }
                match rule.denominator(z) {
                    Some(den) => {
                        for c in 0..g.c_in {
                            for &(ky, iy) in &rows {
                                for &(kx, ix) in &cols {
                                    let w =
                                        rule.weight(wt[((o * g.c_in + c) * g.k + ky) * g.k + kx]);
                                    let at = (c * g.h + iy) * g.w + ix;
                                    r_in[at] += w * x[at] as f64 / den * r;
                                }
                            }
                        }
                    }
                    None => {
                        let share = r / (g.c_in * rows.len() * cols.len()) as f64;
                        for c in 0..g.c_in {
                            for &(_, iy) in &rows {
                                for &(_, ix) in &cols {
                                    r_in[(c * g.h + iy) * g.w + ix] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Relevance::new(input.shape().to_vec(), r_in)
}

/// Winner-take-all: each pooled cell hands its relevance to its recorded argmax.
pub fn lrp_maxpool(
    indices: &PoolIndices,
    r_out: &Relevance,
    input_shape: &[usize],
) -> Result<Relevance> {
    r_out.expect_shape("lrp_maxpool", "output relevance", indices.shape())?;
    let mut r_in = Relevance::zeros(input_shape)?;
    let n = r_in.len();
    let buf = r_in.data_mut();
    for (&at, &r) in indices.data().iter().zip(r_out.data()) {
        if at >= n {
            return Err(Error::InvalidShape {
                op: "lrp_maxpool",
                reason: format!("winner offset {at} outside input of {n} cells"),
            });
        }
        buf[at] += r;
    }
    Ok(r_in)
}

/// Relevance through global average pooling (uniform weights `1/(H·W)`).
///
/// Under z⁺ a channel whose activation sum is zero or negative spreads its
/// relevance uniformly over the plane.
pub fn lrp_gap(input: &Tensor, r_out: &Relevance, rule: LayerRule) -> Result<Relevance> {
    let (c, h, w) = input.chw("lrp_gap")?;
    r_out.expect_shape("lrp_gap", "output relevance", &[c])?;
    let hw = h * w;
    let inv = 1.0 / hw as f64;
    let mut r_in = Vec::with_capacity(input.len());
    for (plane, &r) in input.data().chunks_exact(hw).zip(r_out.data()) {
        let z: f64 = plane.iter().map(|&v| v as f64 * inv).sum();
        let den = match rule {
            LayerRule::ZPlus if z <= 0.0 => None,
            _ => rule.denominator(z),
        };
        match den {
            Some(den) => r_in.extend(plane.iter().map(|&v| v as f64 * inv / den * r)),
            None => r_in.extend(std::iter::repeat_n(r * inv, hw)),
        }
    }
    Relevance::new(vec![c, h, w], r_in)
}

/// ReLU and batch-norm hand relevance through unchanged.
pub fn passthrough(r: &Relevance) -> Relevance {
    r.clone()
}
