//! Behavioral simulation of a charge-steering DRAM MAC array.
//!
//! The crate models the full analog compute path — input DAC, differential
//! charge-steering cells, thermometer tail-capacitor weight banks, and the
//! readout ADC — together with the error sources of a real array (parasitic
//! weight offset, per-cell mismatch, stored-voltage noise, headroom limits)
//! and the two offset-cancellation schemes that recover exact products. A
//! lowering layer maps convolutions and general matrix products onto tiled
//! output-stationary outer-product schedules, and a metrics layer accounts
//! energy, power, throughput, and array-size scaling.
//!
//! Tile execution, sweeps, and Monte Carlo trials are data-parallel via
//! rayon when the `parallel` feature (default) is enabled; disabling it
//! yields a dependency-free sequential build with identical outputs.

pub mod array;
pub mod correction;
pub mod device;
pub mod error;
pub mod exec;
pub mod mapper;
pub mod matrix;
pub mod metrics;
pub mod nonideality;
pub mod oracle;

pub use array::{ArrayState, RunCounters, TileOptions, TileRun};
pub use correction::{calibrate, CalibrationConstants};
pub use device::{CellState, DeviceParams, WeightBankState};
pub use error::{Result, SimError};
pub use mapper::{
    execute_schedule, execute_schedule_serial, tile_schedule, ArrayConfig, CorrectionMode,
    ExecOptions, ReadoutPath, TiledSchedule,
};
pub use matrix::{Matrix, Tensor3, Tensor4};
pub use metrics::{efficiency, scale_estimate, PowerFractions, RunReport};
pub use nonideality::MismatchSpec;
pub use oracle::{conv_exact, gemm_exact, ConvLayerSpec, QuantSpec};
