//! Lowering of convolutions and general matrix products onto tiled
//! output-stationary outer-product schedules, and the executor that runs a
//! schedule tile by tile.
//!
//! The row dimension of the lowered product maps to output pixels, the
//! column dimension to output channels. Partial tiles park unused rows on
//! input code 0 and unused columns on the zero-unit weight code; the
//! parasitic gain still acts on masked columns, exactly as the hardware
//! cannot gate it, and correction removes it. Inner dimensions longer than
//! the accumulation budget split into balanced chunks whose partial sums are
//! re-accumulated digitally.

use serde::{Deserialize, Serialize};

use crate::array::{ArrayState, RunCounters, TileOptions};
use crate::correction::{calibrate, CalibrationConstants};
use crate::device::{DeviceParams, WEIGHT_CODE_MIN, WEIGHT_SHIFT};
use crate::error::{Result, SimError};
use crate::exec::{derive_seed, map_indexed, map_indexed_serial};
use crate::matrix::{Matrix, Tensor3, Tensor4};
use crate::metrics::RunReport;
use crate::nonideality::{sample_mismatch, MismatchSpec};
use crate::oracle::ConvLayerSpec;

/// Which offset-cancellation scheme the executor applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionMode {
    /// Raw results; only the known digital weight shift is unwound.
    #[serde(rename = "none")]
    None,
    /// Digital correction from calibrated constants and the code sums.
    #[serde(rename = "digital")]
    Digital,
    /// Chopped execution plus the single calibrated constant subtraction.
    #[serde(rename = "digital+chop")]
    DigitalChop,
}

/// Where output values are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadoutPath {
    /// Differential cell voltages observed directly (verification mode).
    #[serde(rename = "pre-adc")]
    PreAdc,
    /// Quantized ADC codes, dequantized back to values (realistic mode).
    #[serde(rename = "adc")]
    Adc,
}

/// Mapping from ADC codes back to value units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AdcDequant {
    /// Mid-rise reconstruction through the known code-to-volts mapping.
    #[serde(rename = "analytic")]
    Analytic,
    /// Affine map fitted from calibration samples.
    #[serde(rename = "fitted")]
    Affine { gain: f64, offset: f64 },
}

/// One array-sized piece of the lowered product. Operand data sits in the
/// top-left `active_rows x active_cols` corner; the rest is masked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tile {
    pub row_start: usize,
    pub active_rows: usize,
    pub col_start: usize,
    pub active_cols: usize,
    pub k: usize,
    /// Per-cycle input vectors, one column per cycle (array_rows x k).
    pub inputs: Matrix<i32>,
    /// Per-cycle weight vectors, one row per cycle (k x array_cols).
    pub weights: Matrix<i32>,
}

/// A full lowering of one product onto the array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TiledSchedule {
    pub array_rows: usize,
    pub array_cols: usize,
    pub out_rows: usize,
    pub out_cols: usize,
    pub k_total: usize,
    pub tiles: Vec<Tile>,
    /// Active cell-cycles over physical cell-cycles.
    pub utilization: f64,
    /// Mean per-tile cell utilization.
    pub utilization_tile_mean: f64,
    /// Mean active-column fraction over column chunks.
    pub column_utilization: f64,
    /// Useful MACs in the schedule.
    pub active_macs: u64,
}

/// Tiling controls.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleOptions {
    /// Accumulation budget per tile (MAC phases between precharges).
    pub budget: u32,
    /// Chopped execution: halves the usable budget and masks columns with
    /// weight code 0 so the negated twin stays representable.
    pub chop: bool,
}

impl ScheduleOptions {
    pub fn new(budget: u32, chop: bool) -> Self {
        Self { budget, chop }
    }

    fn k_max(&self) -> Result<usize> {
        let k = if self.chop {
            self.budget / 2
        } else {
            self.budget
        };
        if k == 0 {
            return Err(SimError::Budget {
                requested: 1,
                budget: self.budget,
                chopped: self.chop,
            });
        }
        Ok(k as usize)
    }
}

/// Splits `total` into near-equal chunks of at most `max` each.
fn balanced_chunks(total: usize, max: usize) -> Vec<usize> {
    if total == 0 {
        return Vec::new();
    }
    let n = total.div_ceil(max);
    let base = total / n;
    let rem = total % n;
    (0..n).map(|i| base + usize::from(i < rem)).collect()
}

/// Partitions the rows of `inputs` and the columns of `weights` into
/// array-sized tiles, splitting the inner dimension at the accumulation
/// budget.
pub fn tile_schedule(
    inputs: &Matrix<i32>,
    weights: &Matrix<i32>,
    array_dims: (usize, usize),
    opts: &ScheduleOptions,
) -> Result<TiledSchedule> {
    if inputs.cols() != weights.rows() {
        return Err(SimError::Shape {
            context: "schedule inner dimension",
            expected: (inputs.cols(), inputs.cols()),
            actual: (weights.rows(), weights.rows()),
        });
    }
    let (rows_arr, cols_arr) = array_dims;
    if rows_arr == 0 || cols_arr == 0 {
        return Err(SimError::Config("array dimensions must be positive".into()));
    }
    let out_rows = inputs.rows();
    let out_cols = weights.cols();
    let k_total = inputs.cols();
    let mask_weight = if opts.chop { 0 } else { WEIGHT_CODE_MIN };

    let mut tiles = Vec::new();
    if out_rows > 0 && out_cols > 0 && k_total > 0 {
        let k_chunks = balanced_chunks(k_total, opts.k_max()?);
        let mut row_start = 0;
        while row_start < out_rows {
            let active_rows = (out_rows - row_start).min(rows_arr);
            let mut col_start = 0;
            while col_start < out_cols {
                let active_cols = (out_cols - col_start).min(cols_arr);
                let mut k_start = 0;
                for &k in &k_chunks {
                    let tile_inputs = Matrix::from_fn(rows_arr, k, |i, c| {
                        if i < active_rows {
                            inputs[(row_start + i, k_start + c)]
                        } else {
                            0
                        }
                    });
                    let tile_weights = Matrix::from_fn(k, cols_arr, |c, j| {
                        if j < active_cols {
                            weights[(k_start + c, col_start + j)]
                        } else {
                            mask_weight
                        }
                    });
                    tiles.push(Tile {
                        row_start,
                        active_rows,
                        col_start,
                        active_cols,
                        k,
                        inputs: tile_inputs,
                        weights: tile_weights,
                    });
                    k_start += k;
                }
                col_start += active_cols;
            }
            row_start += active_rows;
        }
    }

    Ok(finalize_schedule(
        rows_arr, cols_arr, out_rows, out_cols, k_total, tiles,
    ))
}

fn finalize_schedule(
    array_rows: usize,
    array_cols: usize,
    out_rows: usize,
    out_cols: usize,
    k_total: usize,
    tiles: Vec<Tile>,
) -> TiledSchedule {
    let mut active_cc: u128 = 0;
    let mut physical_cc: u128 = 0;
    let mut tile_util_sum = 0.0;
    let cells = (array_rows * array_cols) as f64;
    for t in &tiles {
        active_cc += (t.active_rows * t.active_cols * t.k) as u128;
        physical_cc += (array_rows * array_cols * t.k) as u128;
        tile_util_sum += (t.active_rows * t.active_cols) as f64 / cells;
    }
    // Column chunks repeat across row chunks and k splits; average over the
    // distinct column partitions only.
    let mut col_fracs = Vec::new();
    let mut seen_cols = std::collections::BTreeSet::new();
    for t in &tiles {
        if seen_cols.insert(t.col_start) {
            col_fracs.push(t.active_cols as f64 / array_cols as f64);
        }
    }
    let utilization = if physical_cc > 0 {
        active_cc as f64 / physical_cc as f64
    } else {
        0.0
    };
    let utilization_tile_mean = if tiles.is_empty() {
        0.0
    } else {
        tile_util_sum / tiles.len() as f64
    };
    let column_utilization = if col_fracs.is_empty() {
        0.0
    } else {
        col_fracs.iter().sum::<f64>() / col_fracs.len() as f64
    };
    TiledSchedule {
        array_rows,
        array_cols,
        out_rows,
        out_cols,
        k_total,
        tiles,
        utilization,
        utilization_tile_mean,
        column_utilization,
        active_macs: active_cc as u64,
    }
}

/// im2col lowering of one image: the input matrix has one row per output
/// pixel and `C * kernel^2` columns; the weight matrix has the same inner
/// dimension and one column per output channel. Their product equals the
/// convolution output.
pub fn conv_to_matrices(
    spec: &ConvLayerSpec,
    activations: &Tensor3<i32>,
    filters: &Tensor4<i32>,
) -> Result<(Matrix<i32>, Matrix<i32>)> {
    let inputs = conv_input_matrix(spec, activations)?;
    let weights = conv_weight_matrix(spec, filters)?;
    Ok((inputs, weights))
}

/// The im2col input matrix of one image (out_pixels x K).
pub fn conv_input_matrix(spec: &ConvLayerSpec, activations: &Tensor3<i32>) -> Result<Matrix<i32>> {
    spec.validate()?;
    if activations.channels != spec.in_channels
        || activations.height != spec.height
        || activations.width != spec.width
    {
        return Err(SimError::Shape {
            context: "activation tensor",
            expected: (spec.in_channels, spec.height * spec.width),
            actual: (activations.channels, activations.height * activations.width),
        });
    }
    let (oh, ow) = (spec.out_height(), spec.out_width());
    let k_side = spec.kernel;
    Ok(Matrix::from_fn(oh * ow, spec.k(), |p, col| {
        let (y, x) = (p / ow, p % ow);
        let c = col / (k_side * k_side);
        let ky = (col / k_side) % k_side;
        let kx = col % k_side;
        let iy = (y * spec.stride + ky) as isize - spec.padding as isize;
        let ix = (x * spec.stride + kx) as isize - spec.padding as isize;
        if iy < 0 || ix < 0 || iy >= spec.height as isize || ix >= spec.width as isize {
            0
        } else {
            *activations.get(c, iy as usize, ix as usize)
        }
    }))
}

/// The flattened weight matrix (K x out_channels).
pub fn conv_weight_matrix(spec: &ConvLayerSpec, filters: &Tensor4<i32>) -> Result<Matrix<i32>> {
    spec.validate()?;
    if filters.count != spec.out_channels
        || filters.channels != spec.in_channels
        || filters.height != spec.kernel
        || filters.width != spec.kernel
    {
        return Err(SimError::Shape {
            context: "filter tensor",
            expected: (
                spec.out_channels,
                spec.in_channels * spec.kernel * spec.kernel,
            ),
            actual: (
                filters.count,
                filters.channels * filters.height * filters.width,
            ),
        });
    }
    let k_side = spec.kernel;
    Ok(Matrix::from_fn(spec.k(), spec.out_channels, |row, m| {
        let c = row / (k_side * k_side);
        let ky = (row / k_side) % k_side;
        let kx = row % k_side;
        *filters.get(m, c, ky, kx)
    }))
}

/// Schedules a batch of images. With `pack_images` the rows of consecutive
/// images stream through the array back to back, so residual row tiles fill
/// up with the next image; otherwise each image schedules independently.
pub fn schedule_conv_batch(
    spec: &ConvLayerSpec,
    batch: &[Tensor3<i32>],
    filters: &Tensor4<i32>,
    array_dims: (usize, usize),
    opts: &ScheduleOptions,
    pack_images: bool,
) -> Result<TiledSchedule> {
    let weights = conv_weight_matrix(spec, filters)?;
    let pixels = spec.out_pixels();
    if pack_images {
        let mut stacked = Matrix::zeros(batch.len() * pixels, spec.k());
        for (b, image) in batch.iter().enumerate() {
            let rows = conv_input_matrix(spec, image)?;
            for p in 0..pixels {
                for c in 0..spec.k() {
                    stacked[(b * pixels + p, c)] = rows[(p, c)];
                }
            }
        }
        tile_schedule(&stacked, &weights, array_dims, opts)
    } else {
        let mut tiles = Vec::new();
        for (b, image) in batch.iter().enumerate() {
            let rows = conv_input_matrix(spec, image)?;
            let part = tile_schedule(&rows, &weights, array_dims, opts)?;
            for mut t in part.tiles {
                t.row_start += b * pixels;
                tiles.push(t);
            }
        }
        Ok(finalize_schedule(
            array_dims.0,
            array_dims.1,
            batch.len() * pixels,
            spec.out_channels,
            spec.k(),
            tiles,
        ))
    }
}

/// A reusable array configuration: device parameters, grid size, and one
/// sampled mismatch realization shared by every tile run.
#[derive(Debug, Clone)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub params: DeviceParams,
    pub mismatch: Matrix<f64>,
}

impl ArrayConfig {
    /// Ideal array: no mismatch.
    pub fn ideal(rows: usize, cols: usize, params: DeviceParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            rows,
            cols,
            params,
            mismatch: Matrix::zeros(rows, cols),
        })
    }

    /// Array with mismatch sampled from `spec`.
    pub fn with_mismatch_spec(
        rows: usize,
        cols: usize,
        params: DeviceParams,
        spec: &MismatchSpec,
    ) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            rows,
            cols,
            params,
            mismatch: sample_mismatch(rows, cols, spec)?,
        })
    }

    pub fn build(&self) -> Result<ArrayState> {
        ArrayState::with_mismatch(self.rows, self.cols, self.params.clone(), &self.mismatch)
    }
}

/// Execution options for a schedule.
#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub correction: CorrectionMode,
    pub path: ReadoutPath,
    /// Apply one stored-voltage noise realization per tile.
    pub noise: bool,
    /// Base seed for the per-tile noise streams.
    pub seed: u64,
    /// Calibrated constants; when absent and a correcting mode is selected,
    /// the executor calibrates once up front.
    pub constants: Option<CalibrationConstants>,
    /// Cycles per calibration tile for the in-line calibration.
    pub k_cal: u32,
    pub dequant: AdcDequant,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            correction: CorrectionMode::None,
            path: ReadoutPath::PreAdc,
            noise: false,
            seed: 1,
            constants: None,
            k_cal: 64,
            dequant: AdcDequant::Analytic,
        }
    }
}

// Tags separating the executor's derived seed streams.
const SEED_TILE: u64 = 0x7149;
const SEED_CAL: u64 = 0xCA11;

/// Runs every tile of the schedule, applies the selected correction, and
/// assembles the output matrix in value units. Partial sums from split inner
/// dimensions are added digitally. Tiles run in parallel when the `parallel`
/// feature is enabled; outputs are identical either way.
pub fn execute_schedule(
    schedule: &TiledSchedule,
    config: &ArrayConfig,
    opts: &ExecOptions,
) -> Result<(Matrix<f64>, RunReport)> {
    execute_impl(schedule, config, opts, true)
}

/// Sequential twin of [`execute_schedule`], kept as the benchmark baseline.
pub fn execute_schedule_serial(
    schedule: &TiledSchedule,
    config: &ArrayConfig,
    opts: &ExecOptions,
) -> Result<(Matrix<f64>, RunReport)> {
    execute_impl(schedule, config, opts, false)
}

fn execute_impl(
    schedule: &TiledSchedule,
    config: &ArrayConfig,
    opts: &ExecOptions,
    parallel: bool,
) -> Result<(Matrix<f64>, RunReport)> {
    if schedule.array_rows != config.rows || schedule.array_cols != config.cols {
        return Err(SimError::Shape {
            context: "schedule vs array dimensions",
            expected: (config.rows, config.cols),
            actual: (schedule.array_rows, schedule.array_cols),
        });
    }
    let constants = match opts.correction {
        CorrectionMode::None => None,
        _ => Some(match &opts.constants {
            Some(c) => {
                if c.rows != config.rows || c.cols != config.cols {
                    return Err(SimError::Shape {
                        context: "calibration constants",
                        expected: (config.rows, config.cols),
                        actual: (c.rows, c.cols),
                    });
                }
                c.clone()
            }
            None => {
                let mut array = config.build()?;
                let noise_seed = opts.noise.then(|| derive_seed(opts.seed, &[SEED_CAL]));
                calibrate(&mut array, opts.k_cal, noise_seed)?
            }
        }),
    };

    let run_tile = |idx: usize, tile: &Tile| -> Result<(Matrix<f64>, RunCounters)> {
        let mut array = config.build()?;
        let chop = opts.correction == CorrectionMode::DigitalChop;
        let noise_seed = opts
            .noise
            .then(|| derive_seed(opts.seed, &[SEED_TILE, idx as u64]));
        let run = array.run_gemm_tile(
            &tile.inputs,
            &tile.weights,
            TileOptions { chop, noise_seed },
        )?;

        let value_lsb = config.params.value_lsb();
        let adc_lsb = config.params.adc_lsb();
        let raw = Matrix::from_fn(config.rows, config.cols, |i, j| match opts.path {
            ReadoutPath::PreAdc => run.analog[(i, j)] / value_lsb,
            ReadoutPath::Adc => match opts.dequant {
                AdcDequant::Analytic => (run.codes[(i, j)] as f64 + 0.5) * adc_lsb / value_lsb,
                AdcDequant::Affine { gain, offset } => gain * run.codes[(i, j)] as f64 + offset,
            },
        });

        let k = tile.k as u32;
        let corrected = match (&opts.correction, &constants) {
            (CorrectionMode::None, _) => Matrix::from_fn(config.rows, config.cols, |i, j| {
                raw[(i, j)] - f64::from(WEIGHT_SHIFT) * run.sum_inputs[i] as f64
            }),
            (CorrectionMode::Digital, Some(c)) => {
                c.correct_grid(&raw, &run.sum_inputs, &run.sum_weights, k)
            }
            (CorrectionMode::DigitalChop, Some(c)) => c.correct_grid_chop(&raw, k),
            _ => unreachable!("constants resolved above"),
        };

        let active = Matrix::from_fn(tile.active_rows, tile.active_cols, |i, j| corrected[(i, j)]);
        Ok((active, run.counters))
    };

    let results = if parallel {
        map_indexed(&schedule.tiles, run_tile)
    } else {
        map_indexed_serial(&schedule.tiles, run_tile)
    };

    let mut output = Matrix::zeros(schedule.out_rows, schedule.out_cols);
    let mut counters = RunCounters::default();
    for (tile, result) in schedule.tiles.iter().zip(results) {
        let (values, tile_counters) = result?;
        for i in 0..tile.active_rows {
            for j in 0..tile.active_cols {
                output[(tile.row_start + i, tile.col_start + j)] += values[(i, j)];
            }
        }
        counters.merge(&tile_counters);
    }

    let report = RunReport::from_execution(
        &counters,
        schedule.active_macs,
        schedule.utilization,
        schedule.utilization_tile_mean,
        schedule.column_utilization,
        config.rows,
        config.cols,
        &config.params,
    );
    Ok((output, report))
}
