//! Exact reference implementations backing every verification path: integer
//! GEMM (inner-product and outer-product routes), direct convolution, the
//! closed-form offset algebra, and per-tensor symmetric quantization.
//!
//! Accumulation uses i64 throughout. With |I| <= 15 and |W| <= 8 a single
//! product is at most 120, so overflow would need more than 7.6e16
//! accumulation cycles; every supported K is far below that.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::matrix::{Matrix, Tensor3, Tensor4};

/// Exact integer matrix product, row-by-column.
pub fn gemm_exact(a: &Matrix<i32>, b: &Matrix<i32>) -> Result<Matrix<i64>> {
    if a.cols() != b.rows() {
        return Err(SimError::Shape {
            context: "gemm inner dimension",
            expected: (a.cols(), a.cols()),
            actual: (b.rows(), b.rows()),
        });
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0i64;
            for k in 0..a.cols() {
                acc += a[(i, k)] as i64 * b[(k, j)] as i64;
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// The same product evaluated as a sum of rank-1 outer products between the
/// columns of `a` and the rows of `b`. Must agree with [`gemm_exact`].
pub fn gemm_outer_product(a: &Matrix<i32>, b: &Matrix<i32>) -> Result<Matrix<i64>> {
    if a.cols() != b.rows() {
        return Err(SimError::Shape {
            context: "gemm inner dimension",
            expected: (a.cols(), a.cols()),
            actual: (b.rows(), b.rows()),
        });
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for k in 0..a.cols() {
        for i in 0..a.rows() {
            let left = a[(i, k)] as i64;
            for j in 0..b.cols() {
                out[(i, j)] += left * b[(k, j)] as i64;
            }
        }
    }
    Ok(out)
}

/// Convolution layer geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Square kernel side.
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.height == 0
            || self.width == 0
            || self.kernel == 0
            || self.out_channels == 0
            || self.stride == 0
        {
            return Err(SimError::Config(
                "convolution dimensions and stride must be positive".into(),
            ));
        }
        if self.out_height() == 0 || self.out_width() == 0 {
            return Err(SimError::Config(
                "convolution output has no pixels; kernel larger than padded input".into(),
            ));
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }

    /// Accumulation depth of the lowered product: C * kernel^2.
    pub fn k(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Output pixels per image.
    pub fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn check_tensors(&self, activations: &Tensor3<i32>, filters: &Tensor4<i32>) -> Result<()> {
        self.validate()?;
        if activations.channels != self.in_channels
            || activations.height != self.height
            || activations.width != self.width
        {
            return Err(SimError::Shape {
                context: "activation tensor",
                expected: (self.in_channels, self.height * self.width),
                actual: (activations.channels, activations.height * activations.width),
            });
        }
        if filters.count != self.out_channels
            || filters.channels != self.in_channels
            || filters.height != self.kernel
            || filters.width != self.kernel
        {
            return Err(SimError::Shape {
                context: "filter tensor",
                expected: (
                    self.out_channels,
                    self.in_channels * self.kernel * self.kernel,
                ),
                actual: (
                    filters.count,
                    filters.channels * filters.height * filters.width,
                ),
            });
        }
        Ok(())
    }
}

/// Direct nested-loop integer convolution; the reference for every lowered
/// execution path.
pub fn conv_exact(
    spec: &ConvLayerSpec,
    activations: &Tensor3<i32>,
    filters: &Tensor4<i32>,
) -> Result<Tensor3<i64>> {
    spec.check_tensors(activations, filters)?;
    let (oh, ow) = (spec.out_height(), spec.out_width());
    let mut out = Tensor3::zeros(spec.out_channels, oh, ow);
    for m in 0..spec.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0i64;
                for c in 0..spec.in_channels {
                    for ky in 0..spec.kernel {
                        for kx in 0..spec.kernel {
                            let iy = (y * spec.stride + ky) as isize - spec.padding as isize;
                            let ix = (x * spec.stride + kx) as isize - spec.padding as isize;
                            if iy < 0
                                || ix < 0
                                || iy >= spec.height as isize
                                || ix >= spec.width as isize
                            {
                                continue;
                            }
                            acc += *activations.get(c, iy as usize, ix as usize) as i64
                                * *filters.get(m, c, ky, kx) as i64;
                        }
                    }
                }
                *out.get_mut(m, y, x) = acc;
            }
        }
    }
    Ok(out)
}

/// Closed-form offset accumulation: `sum_k (I_k + i_m) * (W_k + w_c)`.
pub fn mismatch_closed_form(inputs: &[i32], weights: &[i32], i_m: f64, w_c: f64) -> f64 {
    inputs
        .iter()
        .zip(weights)
        .map(|(&i, &w)| (i as f64 + i_m) * (w as f64 + w_c))
        .sum()
}

/// Per-tensor symmetric quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSpec {
    /// Bit width N. Inputs carry an extra sign bit, so their codes span
    /// +/-(2^N - 1); weights are two's complement.
    pub bits: u32,
    /// Real value of one code step.
    pub scale: f64,
    /// Restrict weight codes to the symmetric range +/-(2^(N-1) - 1).
    pub symmetric: bool,
    /// Lowest representable code.
    pub code_min: i32,
    /// Highest representable code.
    pub code_max: i32,
}

impl QuantSpec {
    /// Quantizer for input activations: sign plus N-bit magnitude.
    pub fn for_inputs(max_abs: f64, bits: u32) -> Self {
        let limit = (1i32 << bits) - 1;
        let scale = if max_abs > 0.0 {
            max_abs / limit as f64
        } else {
            1.0
        };
        Self {
            bits,
            scale,
            symmetric: true,
            code_min: -limit,
            code_max: limit,
        }
    }

    /// Quantizer for weights: N-bit two's complement, optionally clipped to
    /// the symmetric range.
    pub fn for_weights(max_abs: f64, bits: u32, symmetric: bool) -> Self {
        let half = 1i32 << (bits - 1);
        let (code_min, code_max) = if symmetric {
            (-(half - 1), half - 1)
        } else {
            (-half, half - 1)
        };
        let limit = code_max.max(-code_min);
        let scale = if max_abs > 0.0 {
            max_abs / limit as f64
        } else {
            1.0
        };
        Self {
            bits,
            scale,
            symmetric,
            code_min,
            code_max,
        }
    }

    /// Digital shift that maps signed weights onto thermometer units.
    pub fn weight_shift(&self) -> i32 {
        1 << (self.bits - 1)
    }

    pub fn quantize(&self, x: f64) -> i32 {
        ((x / self.scale).round() as i64).clamp(self.code_min as i64, self.code_max as i64) as i32
    }

    pub fn dequantize(&self, code: i32) -> f64 {
        code as f64 * self.scale
    }
}
