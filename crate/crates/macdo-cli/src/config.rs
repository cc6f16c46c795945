//! Experiment configuration: one JSON document with full defaults, overlaid
//! by command-line flags. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use macdo::device::DeviceParams;
use macdo::mapper::{CorrectionMode, ReadoutPath};
use macdo::metrics::PowerFractions;
use macdo::nonideality::MismatchSpec;
use macdo::SimError;

/// How ADC codes map back to values: the analytic mid-rise reconstruction,
/// or an affine map fitted from a calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DequantMode {
    #[serde(rename = "analytic")]
    Analytic,
    #[serde(rename = "fitted")]
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayDims {
    pub rows: usize,
    pub cols: usize,
}

impl Default for ArrayDims {
    fn default() -> Self {
        Self { rows: 16, cols: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub bits: u32,
    pub symmetric: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            symmetric: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Fill residual row tiles with the next image's rows.
    pub pack_images: bool,
    /// Accumulation budget override; the device budget when absent.
    pub budget: Option<u32>,
    /// Also write the expanded schedule next to the reports.
    pub emit_schedule: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Cycles per calibration tile.
    pub k_cal: u32,
    /// Reuse constants from a previous `calibrate` run instead of
    /// calibrating in-process.
    pub constants_file: Option<PathBuf>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            k_cal: 64,
            constants_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerConfig {
    pub stride: usize,
    pub padding: usize,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

/// Synthetic GEMM workload used by sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            k: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub device: DeviceParams,
    pub mismatch: MismatchSpec,
    pub quant: QuantConfig,
    pub array: ArrayDims,
    pub correction: CorrectionMode,
    pub readout: ReadoutPath,
    /// Apply one stored-voltage noise realization per tile.
    pub noise: bool,
    pub dequant: DequantMode,
    pub schedule: ScheduleConfig,
    pub calibration: CalibrationConfig,
    pub power_fractions: PowerFractions,
    pub workload: WorkloadConfig,
    pub layer: LayerConfig,
    pub seed: u64,
    /// Where reports are written. A location, not an experiment parameter:
    /// skipped from report echoes so runs compare byte-identical across
    /// output directories.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            device: DeviceParams::default(),
            mismatch: MismatchSpec::default(),
            quant: QuantConfig::default(),
            array: ArrayDims::default(),
            correction: CorrectionMode::None,
            readout: ReadoutPath::PreAdc,
            noise: false,
            dequant: DequantMode::Analytic,
            schedule: ScheduleConfig::default(),
            calibration: CalibrationConfig::default(),
            power_fractions: PowerFractions::default(),
            workload: WorkloadConfig::default(),
            layer: LayerConfig::default(),
            seed: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Effective accumulation budget per tile.
    pub fn budget(&self) -> u32 {
        self.schedule.budget.unwrap_or(self.device.max_mac_ops)
    }

    pub fn chop(&self) -> bool {
        self.correction == CorrectionMode::DigitalChop
    }

    /// Cross-field validation; returns device warnings on success.
    pub fn validate(&self) -> Result<Vec<String>, SimError> {
        let warnings = self.device.validate()?;
        self.mismatch.validate()?;
        self.power_fractions.validate()?;
        if self.array.rows == 0 || self.array.cols == 0 {
            return Err(SimError::Config("array dimensions must be positive".into()));
        }
        if self.quant.bits == 0 || self.quant.bits > 4 {
            return Err(SimError::Config(format!(
                "quant.bits must be in [1, 4] for a 4-bit array, got {}",
                self.quant.bits
            )));
        }
        let budget = self.budget();
        if budget == 0 || budget > self.device.max_mac_ops {
            return Err(SimError::Config(format!(
                "schedule.budget must be in [1, {}]",
                self.device.max_mac_ops
            )));
        }
        if self.chop() && budget < 2 {
            return Err(SimError::Budget {
                requested: 2,
                budget,
                chopped: true,
            });
        }
        // The chopped workload budget is knowable now; file-driven inner
        // dimensions are checked when the schedule is built.
        if self.chop() && self.workload.k as u32 * 2 > budget {
            return Err(SimError::Budget {
                requested: self.workload.k as u32 * 2,
                budget,
                chopped: true,
            });
        }
        if self.calibration.k_cal == 0 || self.calibration.k_cal > self.device.max_mac_ops {
            return Err(SimError::Config(format!(
                "calibration.k_cal must be in [1, {}]",
                self.device.max_mac_ops
            )));
        }
        Ok(warnings)
    }
}
