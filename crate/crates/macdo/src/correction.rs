//! Offset cancellation: digital correction with one-and-zero calibration,
//! and analog chopping.
//!
//! With per-cell input offsets and the shifted weight codes, a run
//! accumulates `sum((I + I_m) * (W + W_c))` per cell. Digital correction
//! subtracts the three offset terms using calibrated constants and the code
//! sums tracked alongside the run. Chopping executes every cycle twice with
//! negated operands so the cross terms cancel in analog, leaving a single
//! constant subtraction.

use serde::{Deserialize, Serialize};

use crate::array::{ArrayState, TileOptions};
use crate::error::{Result, SimError};
use crate::matrix::Matrix;

/// Calibrated offset constants for one array configuration. Reusable across
/// runs as long as the device parameters and mismatch realization stay
/// fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    pub rows: usize,
    pub cols: usize,
    /// Per-cell input offset in value units (input LSBs).
    pub i_m: Matrix<f64>,
    /// Per-column effective weight offset in weight-code units, including
    /// the 2^(N-1) shift.
    pub w_c: Vec<f64>,
    /// Per-cell product `i_m * w_c`, accumulated once per cycle.
    pub im_wc: Matrix<f64>,
}

impl CalibrationConstants {
    /// Constants of an ideal array: zero input offsets, weight offset equal
    /// to the digital shift alone.
    pub fn ideal(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            i_m: Matrix::zeros(rows, cols),
            w_c: vec![8.0; cols],
            im_wc: Matrix::zeros(rows, cols),
        }
    }

    /// Applies the digital correction to a value-unit grid, using the code
    /// sums accumulated during the run.
    pub fn correct_grid(
        &self,
        raw: &Matrix<f64>,
        sum_inputs: &[i64],
        sum_weights: &[i64],
        k: u32,
    ) -> Matrix<f64> {
        Matrix::from_fn(raw.rows(), raw.cols(), |i, j| {
            digital_correct(
                raw[(i, j)],
                sum_inputs[i],
                sum_weights[j],
                self.i_m[(i, j)],
                self.w_c[j],
                k,
            )
        })
    }

    /// Applies the chopping correction to a grid holding the accumulated
    /// `OUT + OUT'` sums of `k` logical cycles.
    pub fn correct_grid_chop(&self, raw_sum: &Matrix<f64>, k: u32) -> Matrix<f64> {
        Matrix::from_fn(raw_sum.rows(), raw_sum.cols(), |i, j| {
            chop_correct_accumulated(raw_sum[(i, j)], self.im_wc[(i, j)], k)
        })
    }
}

/// Digital correction for one cell:
/// `sum(I*W) = sum(OUT) - I_m*sum(W) - W_c*sum(I) - K*I_m*W_c`.
pub fn digital_correct(
    raw_sum: f64,
    sum_inputs: i64,
    sum_weights: i64,
    i_m: f64,
    w_c: f64,
    k: u32,
) -> f64 {
    raw_sum - i_m * sum_weights as f64 - w_c * sum_inputs as f64 - k as f64 * i_m * w_c
}

/// Chopping correction for one cell, given the normal and negated halves of
/// `k` logical cycles: `(OUT + OUT' - 2K*I_m*W_c) / 2`.
pub fn chop_correct(out_normal: f64, out_negated: f64, im_wc: f64, k: u32) -> f64 {
    chop_correct_accumulated(out_normal + out_negated, im_wc, k)
}

/// Chopping correction when both halves already accumulated in one cell.
pub fn chop_correct_accumulated(out_sum: f64, im_wc: f64, k: u32) -> f64 {
    (out_sum - 2.0 * k as f64 * im_wc) / 2.0
}

/// Calibrates per-cell and per-column offset constants from two test tiles:
/// (a) all-zero inputs against unit weights, and (b) unit inputs against
/// zero weights, each accumulated over `k_cal` cycles and observed pre-ADC.
///
/// Per cell this yields `a = I_m*(1 + W_c)` and `b = (1 + I_m)*W_c`, which
/// solve to the positive root of `W_c^2 + (1 + a - b)*W_c - b = 0`. Column
/// W_c estimates are averaged down each column (the bank is shared), then
/// `I_m = a / (1 + W_c)`.
pub fn calibrate(
    array: &mut ArrayState,
    k_cal: u32,
    noise_seed: Option<u64>,
) -> Result<CalibrationConstants> {
    if k_cal == 0 {
        return Err(SimError::Calibration(
            "k_cal must be >= 1; zero cycles give a singular system".into(),
        ));
    }
    let (rows, cols) = (array.rows(), array.cols());
    let value_lsb = array.params.value_lsb();
    let k = k_cal as usize;

    let run_tile = |array: &mut ArrayState, input_code: i32, weight_code: i32, tag: u64| {
        let inputs = Matrix::filled(rows, k, input_code);
        let weights = Matrix::filled(k, cols, weight_code);
        let opts = TileOptions {
            chop: false,
            noise_seed: noise_seed.map(|s| crate::exec::derive_seed(s, &[tag])),
        };
        array.run_gemm_tile(&inputs, &weights, opts)
    };

    // Tile (a): inputs 0, weights 1. Tile (b): inputs 1, weights 0.
    let run_a = run_tile(array, 0, 1, 0)?;
    let run_b = run_tile(array, 1, 0, 1)?;

    let per_cycle = |v: f64| v / value_lsb / k_cal as f64;
    let mut w_c_cells = Matrix::zeros(rows, cols);
    let mut a_vals = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let a = per_cycle(run_a.analog[(i, j)]);
            let b = per_cycle(run_b.analog[(i, j)]);
            let half_lin = (1.0 + a - b) / 2.0;
            let disc = half_lin * half_lin + b;
            if disc < 0.0 {
                return Err(SimError::Calibration(format!(
                    "negative discriminant at cell ({i}, {j}); offsets outside the \
                     solvable range"
                )));
            }
            w_c_cells[(i, j)] = -half_lin + disc.sqrt();
            a_vals[(i, j)] = a;
        }
    }

    let mut w_c = vec![0.0; cols];
    for (j, w) in w_c.iter_mut().enumerate() {
        *w = (0..rows).map(|i| w_c_cells[(i, j)]).sum::<f64>() / rows as f64;
    }
    if w_c.iter().any(|w| (1.0 + w).abs() < 1e-9) {
        return Err(SimError::Calibration(
            "singular column offset (W_c = -1)".into(),
        ));
    }

    let i_m = Matrix::from_fn(rows, cols, |i, j| a_vals[(i, j)] / (1.0 + w_c[j]));
    let im_wc = Matrix::from_fn(rows, cols, |i, j| i_m[(i, j)] * w_c[j]);
    Ok(CalibrationConstants {
        rows,
        cols,
        i_m,
        w_c,
        im_wc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceParams;
    use crate::nonideality::{sample_mismatch, weight_offset_total, MismatchSpec};

    fn ideal_params() -> DeviceParams {
        DeviceParams {
            c_par: 0.0,
            sigma_cell_noise: 0.0,
            ..DeviceParams::default()
        }
    }

    #[test]
    fn digital_correct_worked_example() {
        // I = [1, 2], W = [3, -1], I_m = 0.1, W_c = 8:
        // raw = 1.1*11 + 2.1*7 = 26.8, corrected = 1.0 = sum(I*W).
        let corrected = digital_correct(26.8, 3, 2, 0.1, 8.0, 2);
        assert!((corrected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn digital_correct_without_input_offset() {
        // I_m = 0 reduces the correction to raw - W_c * sum(I).
        let raw = 123.4;
        assert_eq!(digital_correct(raw, 5, 9, 0.0, 8.0, 3), raw - 8.0 * 5.0);
    }

    #[test]
    fn chop_correct_worked_example() {
        // I = 3, W = 2, I_m = 0.1, W_c = 8: OUT = 31, OUT' = -17.4,
        // sum = 13.6 = 2*(6 + 0.8), corrected = 6.
        let out: f64 = (3.0 + 0.1) * (2.0 + 8.0);
        let out_neg: f64 = (-3.0 + 0.1) * (-2.0 + 8.0);
        assert!((out - 31.0).abs() < 1e-12);
        assert!((out_neg + 17.4).abs() < 1e-12);
        assert!((out + out_neg - 13.6).abs() < 1e-12);
        let corrected = chop_correct(out, out_neg, 0.1 * 8.0, 1);
        assert!((corrected - 6.0).abs() < 1e-12);
    }

    #[test]
    fn chop_correct_vanishing_cross_term() {
        assert_eq!(chop_correct(10.0, 2.0, 0.0, 5), 6.0);
    }

    #[test]
    fn calibration_of_ideal_array_recovers_shift_only() {
        let mut array = ArrayState::new(4, 4, ideal_params()).unwrap();
        let consts = calibrate(&mut array, 8, None).unwrap();
        for &w in &consts.w_c {
            assert!((w - 8.0).abs() < 1e-9);
        }
        assert!(consts.i_m.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn calibration_recovers_injected_offsets() {
        let params = DeviceParams {
            sigma_cell_noise: 0.0,
            ..DeviceParams::default()
        };
        let spec = MismatchSpec {
            sigma_im: 0.1 * params.v_lsb,
            centroid_replicas: 1,
            gradient: None,
            seed: 77,
        };
        let grid = sample_mismatch(6, 6, &spec).unwrap();
        let mut array = ArrayState::with_mismatch(6, 6, params.clone(), &grid).unwrap();
        let consts = calibrate(&mut array, 16, None).unwrap();

        let w_c_true = weight_offset_total(&params);
        for &w in &consts.w_c {
            assert!((w - w_c_true).abs() < 1e-6, "w_c = {w}");
        }
        for i in 0..6 {
            for j in 0..6 {
                let injected = grid[(i, j)] / params.v_lsb;
                assert!((consts.i_m[(i, j)] - injected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn calibration_with_noise_averages_down() {
        let params = DeviceParams::default();
        let k_cal = 64;
        let mut array = ArrayState::new(8, 8, params.clone()).unwrap();
        let consts = calibrate(&mut array, k_cal, Some(5)).unwrap();
        let w_c_true = weight_offset_total(&params);
        // Readout noise in value units, reduced by the cycle count and the
        // column average; 3x that bound is the acceptance window.
        let sigma_value = params.sigma_cell_noise / params.value_lsb();
        let bound = 3.0 * sigma_value / (k_cal as f64).sqrt();
        for &w in &consts.w_c {
            assert!((w - w_c_true).abs() < bound, "w_c = {w}, bound = {bound}");
        }
    }

    #[test]
    fn zero_cycle_calibration_is_an_error() {
        let mut array = ArrayState::new(2, 2, ideal_params()).unwrap();
        assert!(matches!(
            calibrate(&mut array, 0, None),
            Err(SimError::Calibration(_))
        ));
    }
}
