use serde::Serialize;

use crate::lrp::RelevanceState;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointDeviation {
    pub label: String,
    pub sum_r: f64,
    pub p_c: f64,
    pub relative_deviation: f64,
}

/// Checkpoint sums set against the seeded probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub rows: Vec<CheckpointDeviation>,
}

impl ConservationReport {
    pub fn max_relative_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.relative_deviation)
            .fold(0.0, f64::max)
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.rows.iter().all(|r| r.relative_deviation <= tolerance)
    }
}

/// `|Σ R − p_c| / max(p_c, 1e-12)` at every recorded checkpoint.
pub fn conservation_report(state: &RelevanceState, p_c: f64) -> ConservationReport {
    let rows = state
        .checkpoint_sums
        .iter()
        .map(|(label, sum)| CheckpointDeviation {
            label: label.clone(),
            sum_r: *sum,
            p_c,
            relative_deviation: (sum - p_c).abs() / p_c.max(1e-12),
        })
        .collect();
    ConservationReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Relevance;

    fn state(sums: &[f64]) -> RelevanceState {
        RelevanceState {
            current: Relevance::zeros(&[1]).unwrap(),
            checkpoint_sums: sums
                .iter()
                .enumerate()
                .map(|(i, &s)| (format!("c{i}"), s))
                .collect(),
        }
    }

    #[test]
    fn exact_sums_have_no_deviation() {
        let r = conservation_report(&state(&[0.3, 0.3, 0.3]), 0.3);
        assert!(r.rows.iter().all(|d| d.relative_deviation == 0.0));
        assert!(r.within(0.0));
    }

    #[test]
    fn one_percent_high() {
        let r = conservation_report(&state(&[0.5, 0.505]), 0.5);
        assert!((r.rows[1].relative_deviation - 0.01).abs() < 1e-12);
        assert!((r.max_relative_deviation() - 0.01).abs() < 1e-12);
        assert!(!r.within(1e-3));
    }
}
