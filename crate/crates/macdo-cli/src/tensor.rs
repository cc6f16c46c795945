//! The on-disk tensor format: a JSON document with a dtype tag, a shape, and
//! flat row-major data. int32 tensors carry raw codes; float64 tensors are
//! quantized on ingestion.

use serde::{Deserialize, Serialize};

use macdo::matrix::{Matrix, Tensor3, Tensor4};
use macdo::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "int32")]
    Int32,
    #[serde(rename = "float64")]
    Float64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorFile {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn validate(&self) -> Result<(), SimError> {
        let expected: usize = self.shape.iter().product();
        if self.data.len() != expected {
            return Err(SimError::Config(format!(
                "tensor data length {} does not match shape {:?}",
                self.data.len(),
                self.shape
            )));
        }
        if self.dtype == Dtype::Int32 {
            for &v in &self.data {
                if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
                    return Err(SimError::Config(format!(
                        "int32 tensor holds non-integer value {v}"
                    )));
                }
            }
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config("tensor holds a non-finite value".into()));
        }
        Ok(())
    }

    pub fn from_values(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            dtype: Dtype::Float64,
            shape,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    fn int_data(&self) -> Vec<i32> {
        self.data.iter().map(|&v| v as i32).collect()
    }

    /// Integer codes of a 2-D tensor; float64 data is quantized with `quant`.
    pub fn codes_2d(&self, quant: impl Fn(f64) -> i32) -> Result<Matrix<i32>, SimError> {
        if self.rank() != 2 {
            return Err(SimError::Config(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        let data = match self.dtype {
            Dtype::Int32 => self.int_data(),
            Dtype::Float64 => self.data.iter().map(|&v| quant(v)).collect(),
        };
        Matrix::from_vec(self.shape[0], self.shape[1], data)
    }

    /// Integer codes of `[C, H, W]` or `[B, C, H, W]` activations.
    pub fn codes_batch_3d(
        &self,
        quant: impl Fn(f64) -> i32,
    ) -> Result<Vec<Tensor3<i32>>, SimError> {
        let (batch, dims) = match self.rank() {
            3 => (1, [self.shape[0], self.shape[1], self.shape[2]]),
            4 => (self.shape[0], [self.shape[1], self.shape[2], self.shape[3]]),
            _ => {
                return Err(SimError::Config(format!(
                    "expected a rank-3 or rank-4 activation tensor, got shape {:?}",
                    self.shape
                )))
            }
        };
        let data: Vec<i32> = match self.dtype {
            Dtype::Int32 => self.int_data(),
            Dtype::Float64 => self.data.iter().map(|&v| quant(v)).collect(),
        };
        let per_image = dims[0] * dims[1] * dims[2];
        (0..batch)
            .map(|b| {
                Tensor3::from_vec(
                    dims[0],
                    dims[1],
                    dims[2],
                    data[b * per_image..(b + 1) * per_image].to_vec(),
                )
            })
            .collect()
    }

    /// Integer codes of `[M, C, R, R]` filters.
    pub fn codes_4d(&self, quant: impl Fn(f64) -> i32) -> Result<Tensor4<i32>, SimError> {
        if self.rank() != 4 {
            return Err(SimError::Config(format!(
                "expected a rank-4 filter tensor, got shape {:?}",
                self.shape
            )));
        }
        let data = match self.dtype {
            Dtype::Int32 => self.int_data(),
            Dtype::Float64 => self.data.iter().map(|&v| quant(v)).collect(),
        };
        Tensor4::from_vec(
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            data,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_and_integrality_are_validated() {
        let t = TensorFile {
            dtype: Dtype::Int32,
            shape: vec![2, 2],
            data: vec![1.0, 2.0, 3.0],
        };
        assert!(t.validate().is_err());
        let t = TensorFile {
            dtype: Dtype::Int32,
            shape: vec![2],
            data: vec![1.5, 2.0],
        };
        assert!(t.validate().is_err());
        let t = TensorFile {
            dtype: Dtype::Float64,
            shape: vec![2],
            data: vec![1.5, 2.0],
        };
        assert!(t.validate().is_ok());
    }

    #[test]
    fn batch_split_is_per_image() {
        let t = TensorFile {
            dtype: Dtype::Int32,
            shape: vec![2, 1, 2, 2],
            data: (0..8).map(f64::from).collect(),
        };
        t.validate().unwrap();
        let images = t.codes_batch_3d(|v| v as i32).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(*images[1].get(0, 0, 0), 4);
    }
}
