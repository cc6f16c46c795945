//! The array engine: an R x C grid of charge-steering cells driven in
//! lockstep. Every cycle broadcasts one input vector across the rows and one
//! weight vector across the column banks, accumulating a rank-1 outer
//! product into the stored differentials. Results are read back row by row
//! through the column ADCs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{adc_read_sat, dac_convert, CellState, DeviceParams, WeightBankState};
use crate::error::{Result, SimError};
use crate::exec::derive_seed;
use crate::matrix::Matrix;

/// Event counters feeding the energy ledger and the timing model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    /// Cell MAC events (every cell in every cycle, masked or not).
    pub cell_macs: u64,
    /// Global MAC phases executed.
    pub mac_cycles: u64,
    /// Cells precharged.
    pub precharge_cells: u64,
    /// Precharge phases executed (one per tile).
    pub precharge_phases: u64,
    /// ADC conversions performed.
    pub adc_conversions: u64,
    /// Rows sampled during readout (one readout slot each).
    pub readout_rows: u64,
    /// Conversions that clamped to an extreme code.
    pub saturations: u64,
}

impl RunCounters {
    pub fn merge(&mut self, other: &RunCounters) {
        self.cell_macs += other.cell_macs;
        self.mac_cycles += other.mac_cycles;
        self.precharge_cells += other.precharge_cells;
        self.precharge_phases += other.precharge_phases;
        self.adc_conversions += other.adc_conversions;
        self.readout_rows += other.readout_rows;
        self.saturations += other.saturations;
    }
}

/// One tile executed on the array: the stored analog grid, its ADC codes,
/// the digital code sums accumulated alongside the run, and the event
/// counters the tile generated.
#[derive(Debug, Clone)]
pub struct TileRun {
    /// Differential voltages per cell (V), observed pre-ADC.
    pub analog: Matrix<f64>,
    /// ADC codes per cell.
    pub codes: Matrix<i32>,
    /// Sum of driven input codes per row.
    pub sum_inputs: Vec<i64>,
    /// Sum of driven weight codes per column.
    pub sum_weights: Vec<i64>,
    /// MAC cycles executed for this tile (2K when chopped).
    pub cycles: u32,
    pub counters: RunCounters,
}

/// Options for one tile run.
#[derive(Debug, Clone, Copy, Default)]
pub struct TileOptions {
    /// Follow every cycle with its negated twin so additive offsets cancel
    /// in the accumulated sum. Doubles the MAC count per logical cycle.
    pub chop: bool,
    /// When set, one noise realization is applied to every cell after the
    /// MAC cycles and before readout.
    pub noise_seed: Option<u64>,
}

/// State of one simulated array.
#[derive(Debug, Clone)]
pub struct ArrayState {
    rows: usize,
    cols: usize,
    cells: Vec<CellState>,
    col_banks: Vec<WeightBankState>,
    /// Per-cell input-referred offset (V), added to the DAC output.
    mismatch: Vec<f64>,
    pub params: DeviceParams,
    pub counters: RunCounters,
}

impl ArrayState {
    /// Ideal array: no mismatch. Cells start precharged; the precharge is
    /// not counted against the ledger.
    pub fn new(rows: usize, cols: usize, params: DeviceParams) -> Result<Self> {
        params.validate()?;
        if rows == 0 || cols == 0 {
            return Err(SimError::Config("array dimensions must be positive".into()));
        }
        let cell = CellState::precharged(&params);
        let bank = WeightBankState::from_units(0, &params)?;
        Ok(Self {
            rows,
            cols,
            cells: vec![cell; rows * cols],
            col_banks: vec![bank; cols],
            mismatch: vec![0.0; rows * cols],
            params,
            counters: RunCounters::default(),
        })
    }

    /// Array with a per-cell input-offset grid (V).
    pub fn with_mismatch(
        rows: usize,
        cols: usize,
        params: DeviceParams,
        mismatch: &Matrix<f64>,
    ) -> Result<Self> {
        if mismatch.rows() != rows || mismatch.cols() != cols {
            return Err(SimError::Shape {
                context: "mismatch grid",
                expected: (rows, cols),
                actual: (mismatch.rows(), mismatch.cols()),
            });
        }
        let mut array = Self::new(rows, cols, params)?;
        array.mismatch = mismatch.data().to_vec();
        Ok(array)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> &CellState {
        &self.cells[row * self.cols + col]
    }

    pub fn col_banks(&self) -> &[WeightBankState] {
        &self.col_banks
    }

    /// Reset and precharge phase over the whole grid.
    pub fn precharge_all(&mut self) {
        for cell in &mut self.cells {
            cell.precharge(&self.params);
        }
        self.counters.precharge_cells += (self.rows * self.cols) as u64;
        self.counters.precharge_phases += 1;
    }

    /// One outer-product cycle: inputs broadcast along rows, weight codes
    /// along columns. All cells step in lockstep, so `mac_count` stays
    /// identical across the grid.
    pub fn outer_product_cycle(&mut self, inputs: &[i32], weights: &[i32]) -> Result<()> {
        if inputs.len() != self.rows {
            return Err(SimError::Shape {
                context: "cycle input vector",
                expected: (self.rows, 1),
                actual: (inputs.len(), 1),
            });
        }
        if weights.len() != self.cols {
            return Err(SimError::Shape {
                context: "cycle weight vector",
                expected: (self.cols, 1),
                actual: (weights.len(), 1),
            });
        }
        for (j, &w) in weights.iter().enumerate() {
            self.col_banks[j] = WeightBankState::from_weight_code(w, &self.params)?;
        }
        let mut v_ins = Vec::with_capacity(self.rows);
        for &code in inputs {
            v_ins.push(dac_convert(code, &self.params)?);
        }
        for (i, &v_row) in v_ins.iter().enumerate() {
            for j in 0..self.cols {
                let idx = i * self.cols + j;
                let v_in = v_row + self.mismatch[idx];
                self.cells[idx]
                    .mac_step(v_in, &self.col_banks[j], &self.params)
                    .map_err(|fault| fault.at(i, j))?;
            }
        }
        self.counters.cell_macs += (self.rows * self.cols) as u64;
        self.counters.mac_cycles += 1;
        Ok(())
    }

    /// Stored differential voltages, observed without disturbing the cells.
    pub fn analog_grid(&self) -> Matrix<f64> {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.cell(i, j).v_out())
    }

    /// Row-wise ADC readout: V_Q then V_QN are sampled per row and the
    /// difference quantized by the column ADCs. Non-destructive; saturated
    /// conversions are counted, not reported as errors.
    pub fn readout(&mut self) -> Matrix<i32> {
        let mut codes = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let cell = self.cell(i, j);
                // Two-phase sample-and-hold: V_Q first, then V_QN.
                let sampled_q = cell.v_q();
                let sampled_qn = cell.v_qn();
                let (code, saturated) = adc_read_sat(sampled_qn - sampled_q, &self.params);
                codes[(i, j)] = code;
                self.counters.adc_conversions += 1;
                if saturated {
                    self.counters.saturations += 1;
                }
            }
            self.counters.readout_rows += 1;
        }
        codes
    }

    /// Applies one noise realization to every cell. Per-cell streams are
    /// derived from the seed and the cell position, so the outcome does not
    /// depend on iteration or thread order.
    pub fn apply_noise_all(&mut self, seed: u64) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                let s = derive_seed(seed, &[i as u64, j as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                self.cells[i * self.cols + j].apply_noise(&self.params, &mut rng);
            }
        }
    }

    /// Runs one output-stationary tile: precharge, K outer-product cycles
    /// (cycle k drives input column k and weight row k), optional noise,
    /// then readout.
    pub fn run_gemm_tile(
        &mut self,
        inputs: &Matrix<i32>,
        weights: &Matrix<i32>,
        opts: TileOptions,
    ) -> Result<TileRun> {
        if inputs.rows() != self.rows {
            return Err(SimError::Shape {
                context: "tile input matrix rows",
                expected: (self.rows, inputs.cols()),
                actual: (inputs.rows(), inputs.cols()),
            });
        }
        if weights.cols() != self.cols {
            return Err(SimError::Shape {
                context: "tile weight matrix cols",
                expected: (weights.rows(), self.cols),
                actual: (weights.rows(), weights.cols()),
            });
        }
        if inputs.cols() != weights.rows() {
            return Err(SimError::Shape {
                context: "tile inner dimension",
                expected: (inputs.cols(), inputs.cols()),
                actual: (weights.rows(), weights.rows()),
            });
        }
        let k = inputs.cols() as u32;
        let cycles_needed = if opts.chop { 2 * k } else { k };
        if cycles_needed > self.params.max_mac_ops {
            return Err(SimError::Budget {
                requested: cycles_needed,
                budget: self.params.max_mac_ops,
                chopped: opts.chop,
            });
        }

        let before = self.counters;
        self.precharge_all();
        let mut sum_inputs = vec![0i64; self.rows];
        let mut sum_weights = vec![0i64; self.cols];
        let drive = |array: &mut Self,
                     in_vec: &[i32],
                     w_vec: &[i32],
                     sum_i: &mut [i64],
                     sum_w: &mut [i64]|
         -> Result<()> {
            array.outer_product_cycle(in_vec, w_vec)?;
            for (s, &c) in sum_i.iter_mut().zip(in_vec) {
                *s += c as i64;
            }
            for (s, &c) in sum_w.iter_mut().zip(w_vec) {
                *s += c as i64;
            }
            Ok(())
        };

        for step in 0..k as usize {
            let in_vec = inputs.col(step);
            let w_vec = weights.row(step).to_vec();
            drive(self, &in_vec, &w_vec, &mut sum_inputs, &mut sum_weights)?;
            if opts.chop {
                let in_neg: Vec<i32> = in_vec.iter().map(|&c| -c).collect();
                let w_neg: Vec<i32> = w_vec.iter().map(|&c| -c).collect();
                drive(self, &in_neg, &w_neg, &mut sum_inputs, &mut sum_weights)?;
            }
        }

        if let Some(seed) = opts.noise_seed {
            self.apply_noise_all(seed);
        }
        let analog = self.analog_grid();
        let codes = self.readout();

        let mut counters = self.counters;
        // Report only this tile's events.
        counters.cell_macs -= before.cell_macs;
        counters.mac_cycles -= before.mac_cycles;
        counters.precharge_cells -= before.precharge_cells;
        counters.precharge_phases -= before.precharge_phases;
        counters.adc_conversions -= before.adc_conversions;
        counters.readout_rows -= before.readout_rows;
        counters.saturations -= before.saturations;

        Ok(TileRun {
            analog,
            codes,
            sum_inputs,
            sum_weights,
            cycles: cycles_needed,
            counters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_params() -> DeviceParams {
        DeviceParams {
            c_par: 0.0,
            sigma_cell_noise: 0.0,
            ..DeviceParams::default()
        }
    }

    /// Converts a stored grid to value units and removes the weight-shift
    /// contribution, the digital bookkeeping every readout applies.
    fn value_grid(run: &TileRun, params: &DeviceParams) -> Matrix<f64> {
        let vlsb = params.value_lsb();
        Matrix::from_fn(run.analog.rows(), run.analog.cols(), |i, j| {
            run.analog[(i, j)] / vlsb - 8.0 * run.sum_inputs[i] as f64
        })
    }

    #[test]
    fn zero_cycle_is_zero_everywhere() {
        let mut array = ArrayState::new(2, 2, ideal_params()).unwrap();
        array.outer_product_cycle(&[0, 0], &[0, 0]).unwrap();
        assert!(array.analog_grid().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cycle_outer_product() {
        let mut array = ArrayState::new(2, 2, ideal_params()).unwrap();
        let inputs = Matrix::from_vec(2, 1, vec![1, 2]).unwrap();
        let weights = Matrix::from_vec(1, 2, vec![3, -1]).unwrap();
        let run = array
            .run_gemm_tile(&inputs, &weights, TileOptions::default())
            .unwrap();
        let values = value_grid(&run, &array.params);
        let expected = [[3.0, -1.0], [6.0, -2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((values[(i, j)] - expected[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_vectors_touch_one_cell() {
        let mut array = ArrayState::new(4, 4, ideal_params()).unwrap();
        let inputs = Matrix::from_fn(4, 1, |i, _| if i == 2 { 1 } else { 0 });
        let weights = Matrix::from_fn(1, 4, |_, j| if j == 1 { 1 } else { 0 });
        let run = array
            .run_gemm_tile(&inputs, &weights, TileOptions::default())
            .unwrap();
        let values = value_grid(&run, &array.params);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if (i, j) == (2, 1) { 1.0 } else { 0.0 };
                assert!((values[(i, j)] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lockstep_mac_counts() {
        let mut array = ArrayState::new(3, 5, ideal_params()).unwrap();
        for _ in 0..4 {
            array
                .outer_product_cycle(&[1, 0, -2], &[0, 1, 2, 3, -4])
                .unwrap();
        }
        for i in 0..3 {
            for j in 0..5 {
                assert_eq!(array.cell(i, j).mac_count, 4);
            }
        }
    }

    #[test]
    fn cycle_order_does_not_matter() {
        let p = ideal_params();
        let inputs: Vec<[i32; 3]> = vec![[1, -2, 3], [4, 5, -6], [7, 0, 2], [-1, 1, 1]];
        let weights: Vec<[i32; 3]> = vec![[2, -3, 4], [0, 1, -2], [5, 5, 5], [-7, 2, 0]];
        let run_order = |order: &[usize]| {
            let mut array = ArrayState::new(3, 3, p.clone()).unwrap();
            array.precharge_all();
            for &k in order {
                array.outer_product_cycle(&inputs[k], &weights[k]).unwrap();
            }
            array.analog_grid()
        };
        let a = run_order(&[0, 1, 2, 3]);
        let b = run_order(&[3, 1, 0, 2]);
        for (x, y) in a.iter().zip(b.iter()) {
            let scale = x.abs().max(1e-30);
            assert!((x - y).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn readout_is_non_destructive_and_counts_conversions() {
        let mut array = ArrayState::new(16, 16, ideal_params()).unwrap();
        let inputs = Matrix::filled(16, 4, 5);
        let weights = Matrix::filled(4, 16, 3);
        let run = array
            .run_gemm_tile(&inputs, &weights, TileOptions::default())
            .unwrap();
        assert_eq!(run.counters.adc_conversions, 256);
        let adc_energy = run.counters.adc_conversions as f64 * array.params.e_adc;
        assert!((adc_energy - 256.0 * 0.89e-12).abs() < 1e-24);
        let again = array.readout();
        assert_eq!(run.codes, again);
    }

    #[test]
    fn headroom_fault_carries_coordinates() {
        let mut p = ideal_params();
        p.max_mac_ops = 2;
        let mut array = ArrayState::new(2, 2, p).unwrap();
        array.precharge_all();
        array.outer_product_cycle(&[1, 1], &[1, 1]).unwrap();
        array.outer_product_cycle(&[1, 1], &[1, 1]).unwrap();
        let err = array.outer_product_cycle(&[1, 1], &[1, 1]).unwrap_err();
        match err {
            SimError::Headroom {
                row,
                col,
                mac_count,
                ..
            } => {
                assert_eq!((row, col), (0, 0));
                assert_eq!(mac_count, 3);
            }
            other => panic!("expected headroom error, got {other}"),
        }
    }

    #[test]
    fn budget_checks_chop_doubling() {
        let mut p = ideal_params();
        p.max_mac_ops = 10;
        let mut array = ArrayState::new(2, 2, p).unwrap();
        let inputs = Matrix::filled(2, 6, 1);
        let weights = Matrix::filled(6, 2, 1);
        // 6 cycles fit plainly but not chopped.
        assert!(array
            .run_gemm_tile(&inputs, &weights, TileOptions::default())
            .is_ok());
        let err = array
            .run_gemm_tile(
                &inputs,
                &weights,
                TileOptions {
                    chop: true,
                    noise_seed: None,
                },
            )
            .unwrap_err();
        assert!(matches!(err, SimError::Budget { chopped: true, .. }));
    }

    #[test]
    fn dimension_mismatches_are_shape_errors() {
        let mut array = ArrayState::new(2, 2, ideal_params()).unwrap();
        assert!(matches!(
            array.outer_product_cycle(&[1], &[1, 1]),
            Err(SimError::Shape { .. })
        ));
        let inputs = Matrix::filled(3, 2, 1);
        let weights = Matrix::filled(2, 2, 1);
        assert!(matches!(
            array.run_gemm_tile(&inputs, &weights, TileOptions::default()),
            Err(SimError::Shape { .. })
        ));
    }

    #[test]
    fn noise_seed_reproduces_codes() {
        let p = DeviceParams::default();
        let inputs = Matrix::filled(4, 8, 7);
        let weights = Matrix::filled(8, 4, 5);
        let opts = TileOptions {
            chop: false,
            noise_seed: Some(123),
        };
        let mut a = ArrayState::new(4, 4, p.clone()).unwrap();
        let mut b = ArrayState::new(4, 4, p).unwrap();
        let ra = a.run_gemm_tile(&inputs, &weights, opts).unwrap();
        let rb = b.run_gemm_tile(&inputs, &weights, opts).unwrap();
        assert_eq!(ra.codes, rb.codes);
        assert_eq!(ra.analog, rb.analog);
    }

    #[test]
    fn full_tile_keeps_every_cell_busy() {
        let mut array = ArrayState::new(16, 16, ideal_params()).unwrap();
        let inputs = Matrix::filled(16, 24, 2);
        let weights = Matrix::filled(24, 16, -1);
        array
            .run_gemm_tile(&inputs, &weights, TileOptions::default())
            .unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(array.cell(i, j).mac_count, 24);
            }
        }
    }
}
