//! Simulation error types.

use std::fmt;

/// Errors raised by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// A cell exhausted its voltage headroom or its accumulation budget.
    Headroom {
        row: usize,
        col: usize,
        mac_count: u32,
        v_min: f64,
    },
    /// An input or weight code is outside its representable range.
    CodeRange {
        kind: &'static str,
        value: i32,
        min: i32,
        max: i32,
    },
    /// Operand dimensions do not line up.
    Shape {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    /// Requested cycle count exceeds the accumulation budget.
    Budget {
        requested: u32,
        budget: u32,
        chopped: bool,
    },
    /// The calibration system could not be solved.
    Calibration(String),
    /// Invalid parameter or configuration value.
    Config(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Headroom {
                row,
                col,
                mac_count,
                v_min,
            } => write!(
                f,
                "headroom exhausted at cell ({row}, {col}): mac_count={mac_count}, \
                 min node voltage {v_min:.6} V"
            ),
            Self::CodeRange {
                kind,
                value,
                min,
                max,
            } => write!(f, "{kind} code {value} outside [{min}, {max}]"),
            Self::Shape {
                context,
                expected,
                actual,
            } => write!(
                f,
                "{context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            Self::Budget {
                requested,
                budget,
                chopped,
            } => {
                let phase = if *chopped {
                    " (chopping doubles MAC cycles)"
                } else {
                    ""
                };
                write!(
                    f,
                    "{requested} MAC cycles exceed the accumulation budget of {budget}{phase}; \
                     split the inner dimension into smaller tiles"
                )
            }
            Self::Calibration(msg) => write!(f, "calibration failed: {msg}"),
            Self::Config(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for SimError {}

/// Headroom fault reported by a single cell, before the array attaches coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadroomFault {
    pub mac_count: u32,
    pub v_min: f64,
}

impl HeadroomFault {
    pub fn at(self, row: usize, col: usize) -> SimError {
        SimError::Headroom {
            row,
            col,
            mac_count: self.mac_count,
            v_min: self.v_min,
        }
    }
}

impl From<HeadroomFault> for SimError {
    fn from(fault: HeadroomFault) -> Self {
        fault.at(0, 0)
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
