//! The batch commands: gemm, conv, mult-surface, sweep, and calibrate.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use macdo::correction::{calibrate, CalibrationConstants};
use macdo::device::{dac_convert, CellState, WeightBankState};
use macdo::exec::{derive_seed, map_indexed};
use macdo::mapper::{
    execute_schedule, schedule_conv_batch, tile_schedule, AdcDequant, ArrayConfig, ExecOptions,
    ReadoutPath, ScheduleOptions, TiledSchedule,
};
use macdo::matrix::Matrix;
use macdo::metrics::scale_estimate;
use macdo::nonideality::weight_offset;
use macdo::oracle::{conv_exact, gemm_exact, ConvLayerSpec, QuantSpec};
use macdo::{ArrayState, SimError, TileOptions};

use crate::config::{DequantMode, ExperimentConfig};
use crate::errors::{CliError, CliResult};
use crate::report::{
    ensure_out_dir, error_stats, fmt_f64, write_json, write_text, ErrorStats, RunDocument,
    SurfaceDocument,
};
use crate::tensor::{Dtype, TensorFile};

// Seed stream tags.
const SEED_WORKLOAD: u64 = 0x3011;
const SEED_DEQUANT: u64 = 0xDE0;
const SEED_SURFACE: u64 = 0x50F;

pub fn load_tensor(path: &Path) -> CliResult<TensorFile> {
    let body = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let tensor: TensorFile = serde_json::from_str(&body)
        .map_err(|e| CliError::Usage(format!("parsing {}: {e}", path.display())))?;
    tensor.validate()?;
    Ok(tensor)
}

/// Quantizer for one operand: raw pass-through for integer tensors, a
/// per-tensor symmetric fit for float tensors.
fn input_quant(cfg: &ExperimentConfig, tensor: &TensorFile) -> QuantSpec {
    match tensor.dtype {
        Dtype::Int32 => {
            let mut q = QuantSpec::for_inputs(1.0, cfg.quant.bits);
            q.scale = 1.0;
            q
        }
        Dtype::Float64 => QuantSpec::for_inputs(tensor.max_abs(), cfg.quant.bits),
    }
}

fn weight_quant(cfg: &ExperimentConfig, tensor: &TensorFile) -> QuantSpec {
    // Chopped execution needs every weight's negation representable, which
    // the symmetric range guarantees. Raw integer tensors otherwise span the
    // full two's-complement range of the bank.
    match tensor.dtype {
        Dtype::Int32 => {
            let mut q = QuantSpec::for_weights(1.0, cfg.quant.bits, cfg.chop());
            q.scale = 1.0;
            q
        }
        Dtype::Float64 => QuantSpec::for_weights(
            tensor.max_abs(),
            cfg.quant.bits,
            cfg.quant.symmetric || cfg.chop(),
        ),
    }
}

fn check_codes(m: &Matrix<i32>, q: &QuantSpec, kind: &'static str) -> CliResult<()> {
    for &v in m.iter() {
        if v < q.code_min || v > q.code_max {
            return Err(CliError::Sim(SimError::CodeRange {
                kind,
                value: v,
                min: q.code_min,
                max: q.code_max,
            }));
        }
    }
    Ok(())
}

fn build_array_config(cfg: &ExperimentConfig) -> CliResult<ArrayConfig> {
    Ok(ArrayConfig::with_mismatch_spec(
        cfg.array.rows,
        cfg.array.cols,
        cfg.device.clone(),
        &cfg.mismatch,
    )?)
}

fn load_constants(cfg: &ExperimentConfig) -> CliResult<Option<CalibrationConstants>> {
    let Some(path) = &cfg.calibration.constants_file else {
        return Ok(None);
    };
    let body = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let constants: CalibrationConstants = serde_json::from_str(&body)
        .map_err(|e| CliError::Usage(format!("parsing {}: {e}", path.display())))?;
    Ok(Some(constants))
}

/// Least-squares affine fit of value units against ADC codes, sampled from a
/// seeded calibration product with known codes. Residual gain and offset
/// errors of the array fold into the fitted pair.
fn fit_dequant(cfg: &ExperimentConfig, array_cfg: &ArrayConfig) -> CliResult<AdcDequant> {
    let params = &array_cfg.params;
    let k = (cfg.budget() as usize).min(48);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SEED_DEQUANT]));
    let limit = (1i32 << cfg.quant.bits) - 1;
    let half = 1i32 << (cfg.quant.bits - 1);
    let inputs = Matrix::from_fn(cfg.array.rows, k, |_, _| rng.random_range(-limit..=limit));
    let weights = Matrix::from_fn(k, cfg.array.cols, |_, _| {
        rng.random_range(-(half - 1)..=(half - 1))
    });

    let mut array = array_cfg.build()?;
    let run = array.run_gemm_tile(
        &inputs,
        &weights,
        TileOptions {
            chop: false,
            noise_seed: cfg.noise.then(|| derive_seed(cfg.seed, &[SEED_DEQUANT, 1])),
        },
    )?;

    let w_o = weight_offset(params);
    let mut n = 0.0;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..cfg.array.rows {
        for j in 0..cfg.array.cols {
            let mut reference = 0.0;
            for c in 0..k {
                reference += inputs[(i, c)] as f64 * (weights[(c, j)] as f64 + 8.0 + w_o);
            }
            let x = run.codes[(i, j)] as f64;
            n += 1.0;
            sx += x;
            sy += reference;
            sxx += x * x;
            sxy += x * reference;
        }
    }
    let var = sxx - sx * sx / n;
    if var.abs() < 1e-12 {
        return Err(CliError::Sim(SimError::Calibration(
            "degenerate dequantization fit: all calibration codes identical".into(),
        )));
    }
    let gain = (sxy - sx * sy / n) / var;
    let offset = (sy - gain * sx) / n;
    Ok(AdcDequant::Affine { gain, offset })
}

fn exec_options(cfg: &ExperimentConfig, array_cfg: &ArrayConfig) -> CliResult<ExecOptions> {
    let dequant = match (cfg.readout, cfg.dequant) {
        (ReadoutPath::Adc, DequantMode::Fitted) => fit_dequant(cfg, array_cfg)?,
        _ => AdcDequant::Analytic,
    };
    Ok(ExecOptions {
        correction: cfg.correction,
        path: cfg.readout,
        noise: cfg.noise,
        seed: cfg.seed,
        constants: load_constants(cfg)?,
        k_cal: cfg.calibration.k_cal,
        dequant,
    })
}

fn maybe_emit_schedule(cfg: &ExperimentConfig, schedule: &TiledSchedule) -> CliResult<()> {
    if cfg.schedule.emit_schedule {
        ensure_out_dir(&cfg.out_dir)?;
        write_json(&cfg.out_dir, "schedule.json", schedule)?;
    }
    Ok(())
}

pub fn cmd_gemm(cfg: &ExperimentConfig, a_path: &Path, b_path: &Path) -> CliResult<()> {
    let a_file = load_tensor(a_path)?;
    let b_file = load_tensor(b_path)?;
    let qa = input_quant(cfg, &a_file);
    let qb = weight_quant(cfg, &b_file);
    let a = a_file.codes_2d(|v| qa.quantize(v))?;
    let b = b_file.codes_2d(|v| qb.quantize(v))?;
    check_codes(&a, &qa, "input")?;
    check_codes(&b, &qb, "weight")?;

    let array_cfg = build_array_config(cfg)?;
    let schedule = tile_schedule(
        &a,
        &b,
        (cfg.array.rows, cfg.array.cols),
        &ScheduleOptions::new(cfg.budget(), cfg.chop()),
    )?;
    maybe_emit_schedule(cfg, &schedule)?;
    let opts = exec_options(cfg, &array_cfg)?;
    let (values, run) = execute_schedule(&schedule, &array_cfg, &opts)?;

    let oracle = gemm_exact(&a, &b)?;
    let stats = error_stats(&values, &oracle);
    let scale = qa.scale * qb.scale;
    let output = TensorFile::from_values(
        vec![values.rows(), values.cols()],
        values.iter().map(|&v| v * scale).collect(),
    );

    ensure_out_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir, "output.json", &output)?;
    let doc = RunDocument {
        command: "gemm",
        config: cfg,
        layer: None,
        batch: None,
        run,
        oracle_error: stats,
    };
    let path = write_json(&cfg.out_dir, "report.json", &doc)?;
    println!(
        "gemm {}x{}x{}: max |err| = {} code units, report {}",
        a.rows(),
        a.cols(),
        b.cols(),
        fmt_f64(stats.max_abs),
        path.display()
    );
    Ok(())
}

pub fn cmd_conv(cfg: &ExperimentConfig, act_path: &Path, filt_path: &Path) -> CliResult<()> {
    let act_file = load_tensor(act_path)?;
    let filt_file = load_tensor(filt_path)?;
    let qa = input_quant(cfg, &act_file);
    let qw = weight_quant(cfg, &filt_file);
    let batch = act_file.codes_batch_3d(|v| qa.quantize(v))?;
    let filters = filt_file.codes_4d(|v| qw.quantize(v))?;

    if filters.height != filters.width {
        return Err(CliError::Usage(format!(
            "filters must be square, got {}x{}",
            filters.height, filters.width
        )));
    }
    let first = batch
        .first()
        .ok_or_else(|| CliError::Usage("activation tensor holds no images".into()))?;
    let spec = ConvLayerSpec {
        in_channels: first.channels,
        height: first.height,
        width: first.width,
        kernel: filters.height,
        out_channels: filters.count,
        stride: cfg.layer.stride,
        padding: cfg.layer.padding,
    };
    spec.validate()?;
    if filters.channels != spec.in_channels {
        return Err(CliError::Sim(SimError::Shape {
            context: "filter channels",
            expected: (spec.in_channels, 0),
            actual: (filters.channels, 0),
        }));
    }
    for image in &batch {
        check_codes_tensor(image.data(), &qa, "input")?;
    }
    check_codes_tensor(filters.data(), &qw, "weight")?;

    let array_cfg = build_array_config(cfg)?;
    let schedule = schedule_conv_batch(
        &spec,
        &batch,
        &filters,
        (cfg.array.rows, cfg.array.cols),
        &ScheduleOptions::new(cfg.budget(), cfg.chop()),
        cfg.schedule.pack_images,
    )?;
    maybe_emit_schedule(cfg, &schedule)?;
    let opts = exec_options(cfg, &array_cfg)?;
    let (values, run) = execute_schedule(&schedule, &array_cfg, &opts)?;

    // Oracle and output tensor, image-major.
    let (oh, ow) = (spec.out_height(), spec.out_width());
    let pixels = spec.out_pixels();
    let mut oracle = Matrix::zeros(values.rows(), values.cols());
    for (b, image) in batch.iter().enumerate() {
        let direct = conv_exact(&spec, image, &filters)?;
        for m in 0..spec.out_channels {
            for p in 0..pixels {
                oracle[(b * pixels + p, m)] = *direct.get(m, p / ow, p % ow);
            }
        }
    }
    let stats = error_stats(&values, &oracle);

    let scale = qa.scale * qw.scale;
    let mut data = vec![0.0; batch.len() * spec.out_channels * pixels];
    for b in 0..batch.len() {
        for m in 0..spec.out_channels {
            for p in 0..pixels {
                data[((b * spec.out_channels + m) * oh + p / ow) * ow + p % ow] =
                    values[(b * pixels + p, m)] * scale;
            }
        }
    }
    let output = TensorFile::from_values(vec![batch.len(), spec.out_channels, oh, ow], data);

    ensure_out_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir, "output.json", &output)?;
    let doc = RunDocument {
        command: "conv",
        config: cfg,
        layer: Some(spec),
        batch: Some(batch.len()),
        run,
        oracle_error: stats,
    };
    let path = write_json(&cfg.out_dir, "report.json", &doc)?;
    println!(
        "conv {} images, utilization {} (columns {}), max |err| = {} code units, report {}",
        batch.len(),
        fmt_f64(doc.run.utilization),
        fmt_f64(doc.run.column_utilization),
        fmt_f64(stats.max_abs),
        path.display()
    );
    Ok(())
}

fn check_codes_tensor(data: &[i32], q: &QuantSpec, kind: &'static str) -> CliResult<()> {
    for &v in data {
        if v < q.code_min || v > q.code_max {
            return Err(CliError::Sim(SimError::CodeRange {
                kind,
                value: v,
                min: q.code_min,
                max: q.code_max,
            }));
        }
    }
    Ok(())
}

/// Accumulates every input x weight-unit combination 50 times in a single
/// cell and reports the analog error surface against the nominal linear
/// model. Weight units drive the bank directly, so the parasitic offset
/// shows up as accumulation drift in the zero-weight column.
pub fn cmd_mult_surface(cfg: &ExperimentConfig) -> CliResult<()> {
    const ACCUMULATIONS: u32 = 50;
    let params = &cfg.device;
    let mut csv =
        String::from("input_code,weight_units,v_out_mv,v_ideal_mv,abs_err_mv,rel_err_pct\n");
    let mut max_abs_mv = 0.0f64;
    let mut max_rel_pct = 0.0f64;
    for input_code in 0..=15i32 {
        for units in 0..=15u32 {
            let bank = WeightBankState::from_units(units, params)?;
            let v_in = dac_convert(input_code, params)?;
            let mut cell = CellState::precharged(params);
            for _ in 0..ACCUMULATIONS {
                cell.mac_step(v_in, &bank, params).map_err(SimError::from)?;
            }
            if cfg.noise {
                let seed = derive_seed(cfg.seed, &[SEED_SURFACE, input_code as u64, units as u64]);
                cell.apply_noise(params, &mut ChaCha8Rng::seed_from_u64(seed));
            }
            let v_out = cell.v_out();
            let v_ideal =
                ACCUMULATIONS as f64 * input_code as f64 * units as f64 * params.value_lsb();
            let abs_err_mv = (v_out - v_ideal) * 1e3;
            max_abs_mv = max_abs_mv.max(abs_err_mv.abs());
            let rel = if v_ideal != 0.0 {
                let pct = (v_out - v_ideal) / v_ideal * 100.0;
                max_rel_pct = max_rel_pct.max(pct.abs());
                fmt_f64(pct)
            } else {
                String::new()
            };
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                input_code,
                units,
                fmt_f64(v_out * 1e3),
                fmt_f64(v_ideal * 1e3),
                fmt_f64(abs_err_mv),
                rel
            ));
        }
    }

    ensure_out_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir, "surface.csv", &csv)?;
    let doc = SurfaceDocument {
        command: "mult-surface",
        config: cfg,
        accumulations: ACCUMULATIONS,
        max_abs_err_mv: max_abs_mv,
        max_rel_err_pct: max_rel_pct,
    };
    let path = write_json(&cfg.out_dir, "report.json", &doc)?;
    println!(
        "mult-surface: 256 combinations x{ACCUMULATIONS}, max |err| = {} mV ({} %), report {}",
        fmt_f64(max_abs_mv),
        fmt_f64(max_rel_pct),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    #[value(name = "sigma_im")]
    SigmaIm,
    #[value(name = "f_clk")]
    FClk,
    #[value(name = "array_dims")]
    ArrayDims,
    #[value(name = "seed")]
    Seed,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            Self::SigmaIm => "sigma_im",
            Self::FClk => "f_clk",
            Self::ArrayDims => "array_dims",
            Self::Seed => "seed",
        }
    }

    fn default_values(self, cfg: &ExperimentConfig) -> Vec<String> {
        match self {
            Self::SigmaIm => [0.0, 0.25, 0.5, 1.0, 2.0]
                .iter()
                .map(|f| fmt_f64(f * cfg.device.v_lsb))
                .collect(),
            Self::FClk => [12.5e6, 25e6, 50e6, 100e6, 200e6]
                .iter()
                .map(|&f| fmt_f64(f))
                .collect(),
            Self::ArrayDims => ["16x16", "32x32", "64x128", "128x256", "256x512"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            Self::Seed => (1..=8).map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    value: String,
    max_abs_err: f64,
    rmse: f64,
    throughput_ops: f64,
    avg_power_w: f64,
    efficiency_ops_per_w: f64,
}

/// One synthetic workload run under a point-modified configuration.
fn run_workload_point(cfg: &ExperimentConfig) -> CliResult<(ErrorStats, macdo::RunReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SEED_WORKLOAD]));
    let limit = (1i32 << cfg.quant.bits) - 1;
    // Symmetric weight range keeps every point chop-safe.
    let wmax = (1i32 << (cfg.quant.bits - 1)) - 1;
    let a = Matrix::from_fn(cfg.workload.rows, cfg.workload.k, |_, _| {
        rng.random_range(-limit..=limit)
    });
    let b = Matrix::from_fn(cfg.workload.k, cfg.workload.cols, |_, _| {
        rng.random_range(-wmax..=wmax)
    });
    let array_cfg = build_array_config(cfg)?;
    let schedule = tile_schedule(
        &a,
        &b,
        (cfg.array.rows, cfg.array.cols),
        &ScheduleOptions::new(cfg.budget(), cfg.chop()),
    )?;
    let opts = exec_options(cfg, &array_cfg)?;
    let (values, run) = execute_schedule(&schedule, &array_cfg, &opts)?;
    let oracle = gemm_exact(&a, &b)?;
    Ok((error_stats(&values, &oracle), run))
}

pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> CliResult<()> {
    let values = if values.is_empty() {
        axis.default_values(cfg)
    } else {
        values.to_vec()
    };

    let points: Vec<CliResult<SweepRow>> = map_indexed(&values, |_, token| {
        let mut point = cfg.clone();
        match axis {
            SweepAxis::SigmaIm => {
                point.mismatch.sigma_im = parse_f64(token)?;
            }
            SweepAxis::FClk => {
                point.device.f_clk = parse_f64(token)?;
            }
            SweepAxis::Seed => {
                let seed = token
                    .parse::<u64>()
                    .map_err(|_| CliError::Usage(format!("invalid seed '{token}'")))?;
                point.seed = seed;
                point.mismatch.seed = derive_seed(seed, &[1]);
            }
            SweepAxis::ArrayDims => {}
        }
        let (stats, run) = run_workload_point(&point)?;
        let run = if axis == SweepAxis::ArrayDims {
            let dims = parse_dims(token)?;
            scale_estimate(
                &run,
                (cfg.array.rows, cfg.array.cols),
                dims,
                &cfg.power_fractions,
            )?
        } else {
            run
        };
        Ok(SweepRow {
            value: token.clone(),
            max_abs_err: stats.max_abs,
            rmse: stats.rmse,
            throughput_ops: run.throughput,
            avg_power_w: run.avg_power,
            efficiency_ops_per_w: run.efficiency,
        })
    });

    let mut csv = format!(
        "{},max_abs_err,rmse,throughput_ops,avg_power_w,efficiency_ops_per_w\n",
        axis.name()
    );
    for point in points {
        let row = point?;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.value,
            fmt_f64(row.max_abs_err),
            fmt_f64(row.rmse),
            fmt_f64(row.throughput_ops),
            fmt_f64(row.avg_power_w),
            fmt_f64(row.efficiency_ops_per_w)
        ));
    }
    ensure_out_dir(&cfg.out_dir)?;
    let path = write_text(&cfg.out_dir, "sweep.csv", &csv)?;
    println!(
        "sweep {} over {} points, {}",
        axis.name(),
        values.len(),
        path.display()
    );
    Ok(())
}

fn parse_f64(token: &str) -> CliResult<f64> {
    token
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("invalid numeric value '{token}'")))
}

fn parse_dims(token: &str) -> CliResult<(usize, usize)> {
    let (r, c) = token
        .split_once('x')
        .ok_or_else(|| CliError::Usage(format!("invalid dims '{token}', expected RxC")))?;
    let rows = r
        .parse::<usize>()
        .map_err(|_| CliError::Usage(format!("invalid dims '{token}'")))?;
    let cols = c
        .parse::<usize>()
        .map_err(|_| CliError::Usage(format!("invalid dims '{token}'")))?;
    Ok((rows, cols))
}

pub fn cmd_calibrate(cfg: &ExperimentConfig) -> CliResult<()> {
    let array_cfg = build_array_config(cfg)?;
    let mut array: ArrayState = array_cfg.build()?;
    let noise_seed = cfg.noise.then(|| derive_seed(cfg.seed, &[0xCA11]));
    let constants = calibrate(&mut array, cfg.calibration.k_cal, noise_seed)?;

    ensure_out_dir(&cfg.out_dir)?;
    let path = write_json(&cfg.out_dir, "constants.json", &constants)?;
    let mut csv = String::new();
    for i in 0..array_cfg.mismatch.rows() {
        let row: Vec<String> = (0..array_cfg.mismatch.cols())
            .map(|j| fmt_f64(array_cfg.mismatch[(i, j)]))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_text(&cfg.out_dir, "mismatch.csv", &csv)?;
    let w_c_mean = constants.w_c.iter().sum::<f64>() / constants.w_c.len() as f64;
    println!(
        "calibrate: k_cal = {}, mean W_c = {}, constants {}",
        cfg.calibration.k_cal,
        fmt_f64(w_c_mean),
        path.display()
    );
    Ok(())
}
