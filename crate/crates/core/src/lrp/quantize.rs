//! Heat Quantization of the channel-summed input relevance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Relevance, Tensor};

/// How a bin index is turned back into a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizeMode {
    /// `min + b·Q`, the formula taken literally.
    Paper,
    /// `min + b·(max − min)/Q`, the lower edge of bin `b`.
    Binwidth,
    /// No quantization; the raw map is used as is.
    Off,
}

/// Bin index of every element: `min(⌊(v − min)/step⌋, Q − 1)` with `step = (max − min)/Q`.
///
/// Returns `None` for a constant map.
pub fn bin_indices(raw: &Tensor, bins: usize) -> Option<Vec<usize>> {
    let (min, max) = min_max(raw);
    if max <= min || bins == 0 {
        return None;
    }
    let step = (max - min) / bins as f64;
    Some(
        raw.data()
            .iter()
            .map(|&v| (((v as f64 - min) / step).floor() as usize).min(bins - 1))
            .collect(),
    )
}

fn min_max(raw: &Tensor) -> (f64, f64) {
    raw.data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        })
}

/// Quantizes `raw` into `bins` levels. A constant map is returned unchanged.
pub fn heat_quantize(raw: &Tensor, bins: usize, mode: QuantizeMode) -> Result<Tensor> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "quantization needs at least one bin".into(),
        ));
    }
    if mode == QuantizeMode::Off {
        return Ok(raw.clone());
    }
    let Some(idx) = bin_indices(raw, bins) else {
        return Ok(raw.clone());
    };
    let (min, max) = min_max(raw);
    let step = (max - min) / bins as f64;
    let level = |b: usize| -> f64 {
        match mode {
            QuantizeMode::Paper => min + (b * bins) as f64,
            QuantizeMode::Binwidth => min + b as f64 * step,
            QuantizeMode::Off => unreachable!("handled above"),
        }
    };
    Tensor::new(
        raw.shape().to_vec(),
        idx.into_iter().map(|b| level(b) as f32).collect(),
    )
}

/// Element-wise sum over the channel axis of a C×H×W relevance tensor.
pub fn channel_sum(r0: &Relevance) -> Result<Relevance> {
    let (_, h, w) = r0.chw("channel_sum")?;
    let hw = h * w;
    let mut out = vec![0f64; hw];
    for plane in r0.data().chunks_exact(hw) {
        for (acc, &v) in out.iter_mut().zip(plane) {
            *acc += v;
        }
    }
    Relevance::new(vec![h, w], out)
}

/// H×W attribution: the channel-summed input relevance and, optionally, its quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub raw: Tensor,
    pub quantized: Option<Tensor>,
    pub mode: QuantizeMode,
    pub bins: usize,
}

impl AttributionMap {
    /// Builds a map from raw values, quantizing unless `mode` is [`QuantizeMode::Off`].
    pub fn new(raw: Tensor, mode: QuantizeMode, bins: usize) -> Self {
        let quantized = match mode {
            QuantizeMode::Off => None,
            _ => heat_quantize(&raw, bins.max(1), mode).ok(),
        };
        Self {
            raw,
            quantized,
            mode,
            bins,
        }
    }

    pub fn from_relevance(r0: &Relevance, mode: QuantizeMode, bins: usize) -> Result<Self> {
        let summed = channel_sum(r0)?;
        let raw = Tensor::new(
            summed.shape().to_vec(),
            summed.data().iter().map(|&v| f32::from_f64(v)).collect(),
        )?;
        Ok(Self::new(raw, mode, bins))
    }

    /// Quantized values when present, raw values otherwise.
    pub fn final_values(&self) -> &Tensor {
        self.quantized.as_ref().unwrap_or(&self.raw)
    }

    pub fn height(&self) -> usize {
        self.raw.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.raw.shape()[1]
    }
}
