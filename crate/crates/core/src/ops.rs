//! Forward operators.
//!
//! Convolution is cross-correlation (no kernel flip). Every reduction
//! accumulates in `f64` and rounds once to `f32`.

use crate::error::{Error, Result};
use crate::tensor::{PoolIndices, Tensor};

/// Output extent of a sliding window; errors unless it is a positive integer.
pub fn output_extent(
    op: &'static str,
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidShape {
            op,
            reason: "kernel and stride must be positive".into(),
        });
    }
    let padded = extent + 2 * padding;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::NonIntegralExtent {
            op,
            extent,
            padding,
            kernel,
            stride,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Geometry shared by convolution forward and its relevance backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub(crate) fn new(
        op: &'static str,
        input_shape: &[usize],
        weight: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (c_in, h, w) = match input_shape {
            &[c, h, w] => (c, h, w),
            _ => {
                return Err(Error::InvalidShape {
                    op,
                    reason: format!("input must be C×H×W, got {input_shape:?}"),
                })
            }
        };
        let (c_out, wc, kh, kw) = match weight.shape() {
            &[o, c, kh, kw] => (o, c, kh, kw),
            s => {
                return Err(Error::InvalidShape {
                    op,
                    reason: format!("weight must be C_out×C_in×k×k, got {s:?}"),
                })
            }
        };
        if wc != c_in {
            return Err(Error::ShapeMismatch {
                op,
                dim: "input channels".into(),
                expected: wc,
                actual: c_in,
            });
        }
        if kh != kw {
            return Err(Error::ShapeMismatch {
                op,
                dim: "kernel width".into(),
                expected: kh,
                actual: kw,
            });
        }
        let h_out = output_extent(op, h, kh, stride, padding)?;
        let w_out = output_extent(op, w, kw, stride, padding)?;
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            padding,
            h_out,
            w_out,
        })
    }

    /// Input coordinate for output position `o` and kernel tap `t`, if inside the image.
    #[inline]
    pub(crate) fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        (o * self.stride + t)
            .checked_sub(self.padding)
            .filter(|&i| i < extent)
    }
}

pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new("conv2d", input.shape(), weight, stride, padding)?;
    if let Some(b) = bias {
        b.expect_shape("conv2d", "bias", &[g.c_out])?;
    }
    let x = input.data();
    let wt = weight.data();
    let mut out = Vec::with_capacity(g.c_out * g.h_out * g.w_out);
    for o in 0..g.c_out {
        let b = bias.map_or(0.0, |b| b.data()[o] as f64);
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let mut acc = b;
                for c in 0..g.c_in {
                    for ky in 0..g.k {
                        let Some(iy) = g.source(oy, ky, g.h) else {
                            continue;
                        };
                        for kx in 0..g.k {
                            let Some(ix) = g.source(ox, kx, g.w) else {
                                continue;
                            };
                            let wv = wt[((o * g.c_in + c) * g.k + ky) * g.k + kx] as f64;
                            acc += wv * x[(c * g.h + iy) * g.w + ix] as f64;
                        }
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

/// Max pooling with padding cells treated as −∞. Ties go to the lowest flat offset.
pub fn maxpool_forward(
    input: &Tensor,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w) = input.chw("maxpool")?;
    let h_out = output_extent("maxpool", h, k, stride, padding)?;
    let w_out = output_extent("maxpool", w, k, stride, padding)?;
    let x = input.data();
    let n = c * h_out * w_out;
    let mut values = Vec::with_capacity(n);
    let mut winners = Vec::with_capacity(n);
    for ch in 0..c {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best: Option<(f32, usize)> = None;
                // Row-major scan of the window visits offsets in increasing order,
                // so a strict comparison keeps the lowest offset on ties.
                for ky in 0..k {
                    let Some(iy) = (oy * stride + ky).checked_sub(padding).filter(|&i| i < h)
                    else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = (ox * stride + kx).checked_sub(padding).filter(|&i| i < w)
                        else {
                            continue;
                        };
                        let off = (ch * h + iy) * w + ix;
                        let v = x[off];
                        if best.is_none_or(|(bv, _)| v > bv) {
                            best = Some((v, off));
                        }
                    }
                }
                let (v, off) = best.ok_or(Error::WindowInPadding { row: oy, col: ox })?;
                values.push(v);
                winners.push(off);
            }
        }
    }
    let shape = vec![c, h_out, w_out];
    Ok((
        Tensor::new(shape.clone(), values)?,
        PoolIndices {
            shape,
            data: winners,
        },
    ))
}

/// Global average pooling C×H×W → C.
pub fn gap_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw("gap")?;
    let hw = h * w;
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
        .collect();
    Tensor::new(vec![c], out)
}

/// Affine map `W·x + b`. Inputs of any rank are flattened row-major.
pub fn fc_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (e, d) = match weight.shape() {
        &[e, d] => (e, d),
        s => {
            return Err(Error::InvalidShape {
                op: "fc",
                reason: format!("weight must be E×D, got {s:?}"),
            })
        }
    };
    if input.len() != d {
        return Err(Error::ShapeMismatch {
            op: "fc",
            dim: "input features".into(),
            expected: d,
            actual: input.len(),
        });
    }
    if let Some(b) = bias {
        b.expect_shape("fc", "bias", &[e])?;
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(d)
        .enumerate()
        .map(|(j, row)| {
            let b = bias.map_or(0.0, |b| b.data()[j] as f64);
            let dot: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
            (b + dot) as f32
        })
        .collect();
    Tensor::new(vec![e], out)
}

/// Batch-norm parameters for one layer, borrowed from the model.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub mean: &'a Tensor,
    pub var: &'a Tensor,
    pub eps: f64,
}

pub fn bn_forward(input: &Tensor, p: BatchNormParams<'_>) -> Result<Tensor> {
    let (c, h, w) = input.chw("batchnorm")?;
    for (name, t) in [
        ("gamma", p.gamma),
        ("beta", p.beta),
        ("mean", p.mean),
        ("var", p.var),
    ] {
        t.expect_shape("batchnorm", name, &[c])?;
    }
    if p.eps < 0.0 || !p.eps.is_finite() {
        return Err(Error::InvalidShape {
            op: "batchnorm",
            reason: format!("eps must be finite and non-negative, got {}", p.eps),
        });
    }
    if let Some((ch, &v)) = p.var.data().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeVariance {
            channel: ch,
            value: v,
        });
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(input.len());
    for (ch, plane) in input.data().chunks_exact(hw).enumerate() {
        let scale = p.gamma.data()[ch] as f64 / (p.var.data()[ch] as f64 + p.eps).sqrt();
        let mean = p.mean.data()[ch] as f64;
        let beta = p.beta.data()[ch] as f64;
        out.extend(
            plane
                .iter()
                .map(|&v| ((v as f64 - mean) * scale + beta) as f32),
        );
    }
    Tensor::new(vec![c, h, w], out)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Numerically stabilised softmax over a rank-1 tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 1 {
        return Err(Error::InvalidShape {
            op: "softmax",
            reason: format!("expected a vector, got shape {:?}", input.shape()),
        });
    }
    let max = input
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = input
        .data()
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(
        input.shape().to_vec(),
        exps.iter().map(|e| (e / total) as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_slice(&[1, 1, 1], &[2.0]).unwrap();
        let w = Tensor::from_slice(&[1, 1, 1, 1], &[1.0]).unwrap();
        let y = conv2d_forward(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let x = Tensor::zeros(&[2, 4, 4]).unwrap();
        let w = random(&[3, 2, 3, 3], 1);
        let b = Tensor::from_slice(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let y = conv2d_forward(&x, &w, Some(&b), 1, 1).unwrap();
        for (o, plane) in y.data().chunks(16).enumerate() {
            assert!(plane.iter().all(|&v| v == b.data()[o]));
        }
    }

    #[test]
    fn conv_all_ones_window_sums() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0).unwrap();
        let y = conv2d_forward(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn conv_errors_name_the_dimension() {
        let x = Tensor::zeros(&[2, 4, 4]).unwrap();
        let w = Tensor::zeros(&[1, 3, 3, 3]).unwrap();
        let err = conv2d_forward(&x, &w, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let w = Tensor::zeros(&[1, 2, 3, 3]).unwrap();
        assert!(matches!(
            conv2d_forward(&x, &w, None, 2, 0),
            Err(Error::NonIntegralExtent { .. })
        ));
    }

    #[test]
    fn maxpool_basic_and_ties() {
        let x = Tensor::from_slice(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool_forward(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.data(), &[3]);

        let x = Tensor::filled(&[1, 4, 4], 7.0).unwrap();
        let (y, idx) = maxpool_forward(&x, 2, 2, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert_eq!(idx.data(), &[0, 2, 8, 10]);
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let x = random(&[1, 4, 4], 11);
        let (y, idx) = maxpool_forward(&x, 2, 2, 0).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let cells = [
                    (2 * oy) * 4 + 2 * ox,
                    (2 * oy) * 4 + 2 * ox + 1,
                    (2 * oy + 1) * 4 + 2 * ox,
                    (2 * oy + 1) * 4 + 2 * ox + 1,
                ];
                let best = cells
                    .iter()
                    .copied()
                    .fold(f32::NEG_INFINITY, |m, c| m.max(x.data()[c]));
                assert_eq!(y.data()[oy * 2 + ox], best);
                assert_eq!(x.data()[idx.data()[oy * 2 + ox]], best);
            }
        }
    }

    #[test]
    fn maxpool_all_padding_window_errors() {
        let x = Tensor::zeros(&[1, 1, 1]).unwrap();
        assert!(matches!(
            maxpool_forward(&x, 1, 1, 1),
            Err(Error::WindowInPadding { .. })
        ));
    }

    #[test]
    fn gap_means() {
        let x = Tensor::from_slice(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap_forward(&x).unwrap().data(), &[2.5]);
        let x = random(&[3, 5, 5], 3);
        let y = gap_forward(&x).unwrap();
        for c in 0..3 {
            let s: f64 = x.data()[c * 25..(c + 1) * 25]
                .iter()
                .map(|&v| v as f64)
                .sum();
            assert!(((s / 25.0) as f32 - y.data()[c]).abs() < 1e-7);
        }
    }

    #[test]
    fn fc_cases() {
        let x = Tensor::from_slice(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let eye = Tensor::from_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(fc_forward(&x, &eye, None).unwrap().data(), x.data());

        let b = Tensor::from_slice(&[2], &[0.25, -0.75]).unwrap();
        let w = random(&[2, 3], 5);
        let zero = Tensor::zeros(&[3]).unwrap();
        assert_eq!(fc_forward(&zero, &w, Some(&b)).unwrap().data(), b.data());

        let x = random(&[3], 6);
        let y = fc_forward(&x, &w, Some(&b)).unwrap();
        for j in 0..2 {
            let dot = b.data()[j] as f64
                + (0..3)
                    .map(|i| w.data()[j * 3 + i] as f64 * x.data()[i] as f64)
                    .sum::<f64>();
            assert!((y.data()[j] as f64 - dot).abs() < 1e-6);
        }
        assert!(fc_forward(&Tensor::zeros(&[4]).unwrap(), &w, None).is_err());
    }

    #[test]
    fn bn_cases() {
        let ones = Tensor::filled(&[2], 1.0).unwrap();
        let zeros = Tensor::zeros(&[2]).unwrap();
        let x = random(&[2, 3, 3], 8);
        let id = BatchNormParams {
            gamma: &ones,
            beta: &zeros,
            mean: &zeros,
            var: &ones,
            eps: 0.0,
        };
        assert_eq!(bn_forward(&x, id).unwrap().data(), x.data());

        let mean = Tensor::from_slice(&[2], &[0.3, -0.2]).unwrap();
        let beta = Tensor::from_slice(&[2], &[1.5, 2.5]).unwrap();
        let gamma = random(&[2], 9);
        let var = Tensor::from_slice(&[2], &[0.5, 2.0]).unwrap();
        let mut at_mean = Tensor::zeros(&[2, 2, 2]).unwrap();
        for (i, v) in at_mean.data_mut().iter_mut().enumerate() {
            *v = mean.data()[i / 4];
        }
        let p = BatchNormParams {
            gamma: &gamma,
            beta: &beta,
            mean: &mean,
            var: &var,
            eps: 1e-5,
        };
        let y = bn_forward(&at_mean, p).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            assert_eq!(v, beta.data()[i / 4]);
        }

        let y = bn_forward(&x, p).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            let c = i / 9;
            let want = (x.data()[i] as f64 - mean.data()[c] as f64)
                / (var.data()[c] as f64 + 1e-5).sqrt()
                * gamma.data()[c] as f64
                + beta.data()[c] as f64;
            assert!((v as f64 - want).abs() < 1e-6);
        }

        let bad = Tensor::from_slice(&[2], &[1.0, -0.1]).unwrap();
        let p = BatchNormParams { var: &bad, ..p };
        assert!(matches!(
            bn_forward(&x, p),
            Err(Error::NegativeVariance { channel: 1, .. })
        ));
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::from_slice(&[3], &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::filled(&[5], -3.0).unwrap();
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        let r = random(&[2, 3, 3], 4);
        assert_eq!(relu_forward(&relu_forward(&r)), relu_forward(&r));
    }

    #[test]
    fn softmax_cases() {
        let x = Tensor::from_slice(&[2], &[0.0, 0.0]).unwrap();
        assert_eq!(softmax(&x).unwrap().data(), &[0.5, 0.5]);

        let x = random(&[6], 12);
        let shifted = x.map(|v| v + 37.0);
        let (a, b) = (softmax(&x).unwrap(), softmax(&shifted).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-6);
        }

        let x = Tensor::from_slice(&[3], &[1f32.ln(), 2f32.ln(), 3f32.ln()]).unwrap();
        let y = softmax(&x).unwrap();
        for (p, want) in y.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((*p as f64 - want).abs() < 1e-6);
        }
    }
}
