//! Relevance Splitting at the merge of a Bottleneck's skip and main paths.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Relevance, Tensor};

/// Below this `|h_m| + |h_s|`, ratio splitting falls back to an even split.
pub const RATIO_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splitting {
    /// `R_s = R_m = R/2`.
    Symmetric,
    /// `R_s = R·|h_s| / (|h_m| + |h_s|)`, `R_m` takes the rest.
    Ratio,
}

/// Divides merge relevance `r` into `(R_s, R_m)` for the skip and main paths.
///
/// `R_m` is always computed as `R − R_s`, so the two shares add back to `R`
/// to within one rounding. With `include_identity = false`, identity skips
/// receive nothing.
pub fn split_relevance(
    r: &Relevance,
    h_s: &Tensor,
    h_m: &Tensor,
    splitting: Splitting,
    include_identity: bool,
    skip_is_identity: bool,
) -> Result<(Relevance, Relevance)> {
    h_s.expect_shape("split_relevance", "h_s", r.shape())?;
    h_m.expect_shape("split_relevance", "h_m", r.shape())?;
    if skip_is_identity && !include_identity {
        return Ok((Relevance::zeros(r.shape())?, r.clone()));
    }
    let skip_fraction = |s: f32, m: f32| -> f64 {
        match splitting {
            Splitting::Symmetric => 0.5,
            Splitting::Ratio => {
                let (s, m) = ((s as f64).abs(), (m as f64).abs());
                if s + m < RATIO_GUARD {
                    0.5
                } else {
                    s / (s + m)
                }
            }
        }
    };
    let (r_s, r_m): (Vec<f64>, Vec<f64>) = r
        .data()
        .iter()
        .zip(h_s.data().iter().zip(h_m.data()))
        .map(|(&ri, (&s, &m))| {
            let rs = ri * skip_fraction(s, m);
            (rs, ri - rs)
        })
        .unzip();
    Ok((
        Relevance::new(r.shape().to_vec(), r_s)?,
        Relevance::new(r.shape().to_vec(), r_m)?,
    ))
}
