//! Sampling of the per-cell error sources: input-referred offset mismatch,
//! optional linear spatial gradients, common-centroid replication averaging,
//! and the weight offset contributed by bank parasitics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, WEIGHT_SHIFT};
use crate::error::{Result, SimError};
use crate::matrix::Matrix;

/// Specification of the per-cell input-offset mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchSpec {
    /// RMS of the per-cell input-referred offset (V). Default: 0 (ideal).
    pub sigma_im: f64,
    /// Common-centroid replication factor; 1 (no replication) or 4 (each
    /// logical cell realized by four copies mirrored about both array axes).
    pub centroid_replicas: u32,
    /// Optional linear spatial drift as (volts per cell pitch in x, in y),
    /// measured from the array center.
    pub gradient: Option<[f64; 2]>,
    /// Seed for the mismatch draw; the same seed reproduces the same grid.
    pub seed: u64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        Self {
            sigma_im: 0.0,
            centroid_replicas: 1,
            gradient: None,
            seed: 1,
        }
    }
}

impl MismatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_im < 0.0 {
            return Err(SimError::Config(format!(
                "sigma_im must be >= 0, got {}",
                self.sigma_im
            )));
        }
        if self.centroid_replicas != 1 && self.centroid_replicas != 4 {
            return Err(SimError::Config(format!(
                "centroid_replicas must be 1 or 4, got {}",
                self.centroid_replicas
            )));
        }
        Ok(())
    }
}

/// Samples an R x C grid of input-offset voltages.
///
/// Each entry is the mean of `centroid_replicas` independent Normal(0,
/// sigma_im) draws plus the gradient evaluated at the replica positions.
/// With four replicas the copies sit at the four sign combinations of the
/// cell's centered coordinates, so a purely linear gradient cancels exactly.
pub fn sample_mismatch(rows: usize, cols: usize, spec: &MismatchSpec) -> Result<Matrix<f64>> {
    spec.validate()?;
    let k = spec.centroid_replicas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = if spec.sigma_im > 0.0 {
        Some(Normal::new(0.0, spec.sigma_im).expect("sigma validated"))
    } else {
        None
    };
    let [gx, gy] = spec.gradient.unwrap_or([0.0, 0.0]);

    let mut grid = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut sum = 0.0;
            for _ in 0..k {
                if let Some(n) = &normal {
                    sum += n.sample(&mut rng);
                }
            }
            let mut v = sum / k as f64;
            if k == 1 {
                // Centered coordinates in cell pitches.
                let xc = j as f64 - (cols as f64 - 1.0) / 2.0;
                let yc = i as f64 - (rows as f64 - 1.0) / 2.0;
                v += gx * xc + gy * yc;
            }
            // k == 4: the mirrored replica positions average the linear
            // gradient to its value at the common centroid, which is zero.
            grid[(i, j)] = v;
        }
    }
    Ok(grid)
}

/// Weight offset from bank parasitics, in weight-code units: W_o = C_par /
/// C_unit. The total effective offset seen by a stored weight is
/// `W_c = W_o + 2^(N-1)`.
pub fn weight_offset(params: &DeviceParams) -> f64 {
    params.c_par / params.c_unit
}

/// Total effective weight offset W_c = W_o + 2^(N-1).
pub fn weight_offset_total(params: &DeviceParams) -> f64 {
    weight_offset(params) + WEIGHT_SHIFT as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stddev(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn zero_sigma_zero_gradient_gives_zero_grid() {
        let spec = MismatchSpec::default();
        let grid = sample_mismatch(8, 8, &spec).unwrap();
        assert!(grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_reproduces_grid() {
        let spec = MismatchSpec {
            sigma_im: 1e-4,
            centroid_replicas: 4,
            gradient: None,
            seed: 99,
        };
        let a = sample_mismatch(16, 16, &spec).unwrap();
        let b = sample_mismatch(16, 16, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn four_replicas_halve_the_spread() {
        let base = MismatchSpec {
            sigma_im: 1e-3,
            centroid_replicas: 1,
            gradient: None,
            seed: 5,
        };
        let quad = MismatchSpec {
            centroid_replicas: 4,
            ..base.clone()
        };
        let a = sample_mismatch(100, 100, &base).unwrap();
        let b = sample_mismatch(100, 100, &quad).unwrap();
        let ratio = stddev(b.data()) / stddev(a.data());
        assert!((ratio - 0.5).abs() < 0.05, "ratio = {ratio}");
    }

    #[test]
    fn linear_gradient_cancels_under_four_replicas() {
        let spec = MismatchSpec {
            sigma_im: 0.0,
            centroid_replicas: 4,
            gradient: Some([3e-4, -2e-4]),
            seed: 1,
        };
        let grid = sample_mismatch(9, 9, &spec).unwrap();
        assert!(grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_gradient_applies_without_replication() {
        let spec = MismatchSpec {
            sigma_im: 0.0,
            centroid_replicas: 1,
            gradient: Some([1e-4, 0.0]),
            seed: 1,
        };
        let grid = sample_mismatch(3, 3, &spec).unwrap();
        assert!((grid[(0, 0)] + 1e-4).abs() < 1e-18);
        assert_eq!(grid[(1, 1)], 0.0);
        assert!((grid[(2, 2)] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn neighboring_cells_are_uncorrelated() {
        let spec = MismatchSpec {
            sigma_im: 1e-3,
            centroid_replicas: 1,
            gradient: None,
            seed: 11,
        };
        let grid = sample_mismatch(100, 100, &spec).unwrap();
        let d = grid.data();
        let n = d.len() - 1;
        let mx = d[..n].iter().sum::<f64>() / n as f64;
        let my = d[1..].iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..n {
            cov += (d[i] - mx) * (d[i + 1] - my);
            vx += (d[i] - mx) * (d[i] - mx);
            vy += (d[i + 1] - my) * (d[i + 1] - my);
        }
        let corr = cov / (vx.sqrt() * vy.sqrt());
        assert!(corr.abs() < 0.05, "corr = {corr}");
    }

    #[test]
    fn weight_offset_examples() {
        let mut p = DeviceParams::default();
        assert!((weight_offset(&p) - 0.25).abs() < 1e-15);
        assert!((weight_offset_total(&p) - 8.25).abs() < 1e-15);
        p.c_par = 0.0;
        assert_eq!(weight_offset(&p), 0.0);
        assert_eq!(weight_offset_total(&p), 8.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = MismatchSpec {
            centroid_replicas: 2,
            ..MismatchSpec::default()
        };
        assert!(sample_mismatch(4, 4, &spec).is_err());
        let spec = MismatchSpec {
            sigma_im: -1.0,
            ..MismatchSpec::default()
        };
        assert!(sample_mismatch(4, 4, &spec).is_err());
    }
}
