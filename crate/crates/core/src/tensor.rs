//! Dense row-major tensors.
//!
//! Activations and weights are stored as `f32`. Relevance is carried as
//! `f64` ([`Relevance`]) so that conservation audits are not limited by
//! single-precision rounding of large, mixed-sign shares.

use crate::error::{Error, Result};

/// Element types a [`Tensor`] may hold.
pub trait Element: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Rank 1..=4 row-major array. Images are channel-first (C×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Relevance scores, aligned element-for-element with some activation tensor.
pub type Relevance = Tensor<f64>;

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::InvalidShape {
            op: "tensor",
            reason: format!("rank {} outside 1..=4", shape.len()),
        });
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidShape {
            op: "tensor",
            reason: format!("extent {pos} is zero"),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                dim: "data length".into(),
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![T::default(); n],
        })
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn from_slice(shape: &[usize], data: &[T]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same buffer under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    /// Interprets the tensor as C×H×W.
    pub fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidShape {
                op,
                reason: format!("expected a C×H×W tensor, got shape {:?}", self.shape),
            }),
        }
    }

    pub(crate) fn expect_shape(&self, op: &'static str, what: &str, shape: &[usize]) -> Result<()> {
        if self.shape.len() != shape.len() {
            return Err(Error::InvalidShape {
                op,
                reason: format!("{what}: expected shape {shape:?}, got {:?}", self.shape),
            });
        }
        for (axis, (&want, &got)) in shape.iter().zip(&self.shape).enumerate() {
            if want != got {
                return Err(Error::ShapeMismatch {
                    op,
                    dim: format!("{what} axis {axis}"),
                    expected: want,
                    actual: got,
                });
            }
        }
        Ok(())
    }
}

impl Relevance {
    /// Elementwise sum of two relevance tensors of identical shape.
    pub fn add(&self, other: &Relevance) -> Result<Relevance> {
        other.expect_shape("relevance add", "rhs", &self.shape)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// Winner offsets recorded by max pooling, one per pooled output cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<usize>,
}

impl PoolIndices {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Flat offsets into the pooling input.
    pub fn data(&self) -> &[usize] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn rejects_bad_rank_and_zero_extent() {
        assert!(Tensor::<f32>::zeros(&[]).is_err());
        assert!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f32>::zeros(&[3, 0]).is_err());
    }

    #[test]
    fn sum_accumulates_in_f64() {
        let t = Tensor::<f32>::filled(&[1000], 0.1).unwrap();
        assert!((t.sum() - 100.0).abs() < 1e-4);
    }
}
