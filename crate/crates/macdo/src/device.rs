//! Behavioral models of the four analog building blocks: input DAC,
//! charge-steering cell, thermometer-coded tail-capacitor weight bank, and
//! readout ADC.
//!
//! A cell is two 1T1C DRAM cells holding a differential result. Each MAC
//! cycle discharges the pair through a differential pair whose gain is set by
//! the ratio of the enabled tail capacitance to the cell capacitance, so the
//! stored differential voltage accumulates `v_in * A_v` per cycle.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HeadroomFault, Result, SimError};

/// Largest input magnitude code (sign + 4-bit magnitude).
pub const INPUT_CODE_MAX: i32 = 15;
/// Weight code range, 4-bit two's complement.
pub const WEIGHT_CODE_MIN: i32 = -8;
pub const WEIGHT_CODE_MAX: i32 = 7;
/// Digital shift applied to weight codes before they reach the array
/// (2^(N-1) for N = 4), so negative weights become thermometer unit counts.
pub const WEIGHT_SHIFT: i32 = 8;

/// Optional gain-compression hook. Each MAC increment is multiplied by
/// `1 - alpha * (v_out / v_ref)^2`, clamped at zero, evaluated at the stored
/// differential voltage before the increment. The default model is identity
/// (no compression).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainCompression {
    /// Compression strength; 0 disables the hook.
    pub alpha: f64,
    /// Reference voltage scale (V).
    pub v_ref: f64,
}

impl GainCompression {
    #[inline]
    pub fn factor(&self, v_out: f64) -> f64 {
        let x = v_out / self.v_ref;
        (1.0 - self.alpha * x * x).max(0.0)
    }
}

/// Physical and circuit constants of the test array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    /// Cell capacitance C_D (F). Default: 100e-15
    pub c_d: f64,
    /// One tail-bank unit capacitor (F). Default: 8e-15
    pub c_unit: f64,
    /// Thermometer units per column bank. Default: 15 (4-bit magnitude range)
    pub tail_units: u32,
    /// Parasitic capacitance on the bit-line and bank (F); the source of the
    /// weight offset. Default: 2e-15
    pub c_par: f64,
    /// Supply voltage (V). Default: 1.2
    pub v_dd: f64,
    /// Operating clock (Hz). Default: 12.5e6
    pub f_clk: f64,
    /// Differential DAC step per input LSB (V). Default: 37.5e-6
    pub v_lsb: f64,
    /// RMS noise on a stored differential result (V). Applied once per run,
    /// split evenly across the two cell nodes. Default: 264.3e-6
    pub sigma_cell_noise: f64,
    /// Minimum allowed single-ended node voltage before headroom exhaustion
    /// (V). Default: 0.2
    pub v_floor: f64,
    /// Common-mode drop per MAC per enabled tail unit (V). Default: 0.267e-3
    pub cm_droop_per_unit: f64,
    /// Accumulation budget per cell between precharges. Default: 200
    pub max_mac_ops: u32,
    /// ADC resolution (bits). Default: 6
    pub adc_bits: u32,
    /// ADC differential full scale (V); codes span +/- this value.
    /// Default: 0.3
    pub adc_fullscale: f64,
    /// Energy per cell MAC (J). Default: 10.6e-15
    pub e_mac: f64,
    /// Energy per ADC conversion (J). Default: 0.89e-12
    pub e_adc: f64,
    /// Precharge energy per cell per tile (J); both cell capacitors charged
    /// to V_DD. Default: 144e-15 (= 2 * 1/2 * C_D * V_DD^2)
    pub e_precharge_cell: f64,
    /// Row-controller energy per row per MAC cycle (J). Default: 4.0e-15
    pub e_row_ctrl_cycle: f64,
    /// R-string DAC energy per row per MAC cycle (J). Default: 6.0e-15
    pub e_r_dac_cycle: f64,
    /// Column-controller energy per column per MAC cycle (J).
    /// Default: 5.14e-15
    pub e_col_ctrl_cycle: f64,
    /// Optional per-unit tail capacitance schedule (F), length `tail_units`.
    /// Default: uniform `c_unit`.
    pub tail_unit_caps: Option<Vec<f64>>,
    /// Optional gain-compression hook; identity when absent.
    pub gain_compression: Option<GainCompression>,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            c_d: 100e-15,
            c_unit: 8e-15,
            tail_units: 15,
            c_par: 2e-15,
            v_dd: 1.2,
            f_clk: 12.5e6,
            v_lsb: 37.5e-6,
            sigma_cell_noise: 264.3e-6,
            v_floor: 0.2,
            cm_droop_per_unit: 0.267e-3,
            max_mac_ops: 200,
            adc_bits: 6,
            adc_fullscale: 0.3,
            e_mac: 10.6e-15,
            e_adc: 0.89e-12,
            e_precharge_cell: 144e-15,
            e_row_ctrl_cycle: 4.0e-15,
            e_r_dac_cycle: 6.0e-15,
            e_col_ctrl_cycle: 5.14e-15,
            tail_unit_caps: None,
            gain_compression: None,
        }
    }
}

impl DeviceParams {
    /// Validates the parameter set. Hard violations are errors; soft ones
    /// (tail capacitance outside the characterized sizing range) come back
    /// as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive: [(&str, f64); 9] = [
            ("c_d", self.c_d),
            ("c_unit", self.c_unit),
            ("v_dd", self.v_dd),
            ("f_clk", self.f_clk),
            ("v_lsb", self.v_lsb),
            ("adc_fullscale", self.adc_fullscale),
            ("e_mac", self.e_mac),
            ("e_adc", self.e_adc),
            ("v_floor", self.v_floor),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(SimError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("c_par", self.c_par),
            ("sigma_cell_noise", self.sigma_cell_noise),
            ("cm_droop_per_unit", self.cm_droop_per_unit),
        ] {
            if v < 0.0 {
                return Err(SimError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.adc_bits < 1 {
            return Err(SimError::Config("adc_bits must be >= 1".into()));
        }
        if self.adc_bits > 24 {
            return Err(SimError::Config("adc_bits must be <= 24".into()));
        }
        if self.max_mac_ops < 1 {
            return Err(SimError::Config("max_mac_ops must be >= 1".into()));
        }
        if let Some(caps) = &self.tail_unit_caps {
            if caps.len() != self.tail_units as usize {
                return Err(SimError::Config(format!(
                    "tail_unit_caps has {} entries, expected tail_units = {}",
                    caps.len(),
                    self.tail_units
                )));
            }
            if caps.iter().any(|&c| c <= 0.0) {
                return Err(SimError::Config(
                    "tail_unit_caps entries must be > 0".into(),
                ));
            }
        }

        let mut warnings = Vec::new();
        let check_unit = |c: f64, warnings: &mut Vec<String>| {
            if !(6.8e-15..=9.6e-15).contains(&c) {
                warnings.push(format!(
                    "tail unit capacitance {c:e} F outside the characterized range \
                     [6.8e-15, 9.6e-15]"
                ));
            }
        };
        match &self.tail_unit_caps {
            Some(caps) => {
                for &c in caps {
                    check_unit(c, &mut warnings);
                }
            }
            None => check_unit(self.c_unit, &mut warnings),
        }
        Ok(warnings)
    }

    /// Dimensionless gain contributed by one nominal tail unit: 2*C_unit/C_D.
    #[inline]
    pub fn a_lsb(&self) -> f64 {
        2.0 * self.c_unit / self.c_d
    }

    /// Differential volts per accumulated value unit (one input LSB times one
    /// weight LSB).
    #[inline]
    pub fn value_lsb(&self) -> f64 {
        self.v_lsb * self.a_lsb()
    }

    /// ADC step size (V).
    #[inline]
    pub fn adc_lsb(&self) -> f64 {
        2.0 * self.adc_fullscale / (1u64 << self.adc_bits) as f64
    }

    /// Extreme ADC codes.
    #[inline]
    pub fn adc_code_range(&self) -> (i32, i32) {
        let half = 1i32 << (self.adc_bits - 1);
        (-half, half - 1)
    }
}

/// Differential pair of stored cell voltages plus the accumulation count.
/// `v_out = v_qn - v_q` is the sign convention used project-wide.
///
/// Stored internally as (common mode, differential): the differential is
/// microvolt-scale on top of volt-scale node voltages, and tracking it
/// directly keeps the accumulation exact instead of losing it to
/// cancellation between two near-equal node values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// Common-mode node voltage (V).
    cm: f64,
    /// Stored differential result v_qn - v_q (V).
    diff: f64,
    pub mac_count: u32,
}

impl CellState {
    /// A freshly precharged cell: both nodes at V_DD, zero accumulations.
    pub fn precharged(params: &DeviceParams) -> Self {
        Self {
            cm: params.v_dd,
            diff: 0.0,
            mac_count: 0,
        }
    }

    /// Cell with explicit node voltages.
    pub fn from_nodes(v_q: f64, v_qn: f64, mac_count: u32) -> Self {
        Self {
            cm: (v_q + v_qn) / 2.0,
            diff: v_qn - v_q,
            mac_count,
        }
    }

    #[inline]
    pub fn v_q(&self) -> f64 {
        self.cm - self.diff / 2.0
    }

    #[inline]
    pub fn v_qn(&self) -> f64 {
        self.cm + self.diff / 2.0
    }

    /// Stored differential MAC result (V).
    #[inline]
    pub fn v_out(&self) -> f64 {
        self.diff
    }

    /// Reset and precharge phase: both capacitors back to V_DD.
    pub fn precharge(&mut self, params: &DeviceParams) {
        self.cm = params.v_dd;
        self.diff = 0.0;
        self.mac_count = 0;
    }

    /// One MAC phase: the differential result grows by `v_in * A_v` while the
    /// common mode droops in proportion to the enabled tail units. Fails when
    /// either node crosses the headroom floor or the accumulation budget is
    /// exceeded.
    pub fn mac_step(
        &mut self,
        v_in: f64,
        bank: &WeightBankState,
        params: &DeviceParams,
    ) -> std::result::Result<(), HeadroomFault> {
        let gain = compute_gain(bank, params);
        let compression = params.gain_compression.map_or(1.0, |g| g.factor(self.diff));
        self.diff += v_in * gain * compression;
        self.cm -= bank.enabled_units() as f64 * params.cm_droop_per_unit;
        self.mac_count += 1;

        let v_min = self.cm - self.diff.abs() / 2.0;
        if v_min < params.v_floor || self.mac_count > params.max_mac_ops {
            return Err(HeadroomFault {
                mac_count: self.mac_count,
                v_min,
            });
        }
        Ok(())
    }

    /// Adds one realization of the stored-voltage noise. `sigma_cell_noise`
    /// is the differential output-referred RMS, so each node receives an
    /// independent draw at sigma/sqrt(2). Nodes stay clamped to [0, V_DD].
    pub fn apply_noise<R: Rng>(&mut self, params: &DeviceParams, rng: &mut R) {
        if params.sigma_cell_noise == 0.0 {
            return;
        }
        let per_node = Normal::new(0.0, params.sigma_cell_noise / std::f64::consts::SQRT_2)
            .expect("sigma validated non-negative");
        let v_q = (self.v_q() + per_node.sample(rng)).clamp(0.0, params.v_dd);
        let v_qn = (self.v_qn() + per_node.sample(rng)).clamp(0.0, params.v_dd);
        self.cm = (v_q + v_qn) / 2.0;
        self.diff = v_qn - v_q;
    }
}

/// Thermometer-coded tail capacitor bank of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBankState {
    enabled_units: u32,
    /// Total tail capacitance seen by the cell: enabled units plus the
    /// always-present parasitic (F).
    effective_c_t: f64,
}

impl WeightBankState {
    /// Bank with `units` thermometer units enabled.
    pub fn from_units(units: u32, params: &DeviceParams) -> Result<Self> {
        if units > params.tail_units {
            return Err(SimError::CodeRange {
                kind: "tail unit",
                value: units as i32,
                min: 0,
                max: params.tail_units as i32,
            });
        }
        let unit_sum = match &params.tail_unit_caps {
            Some(caps) => caps[..units as usize].iter().sum::<f64>(),
            None => units as f64 * params.c_unit,
        };
        Ok(Self {
            enabled_units: units,
            effective_c_t: unit_sum + params.c_par,
        })
    }

    /// Bank driven by a signed weight code; the digital 2^(N-1) shift maps
    /// the code onto a unit count.
    pub fn from_weight_code(code: i32, params: &DeviceParams) -> Result<Self> {
        if !(WEIGHT_CODE_MIN..=WEIGHT_CODE_MAX).contains(&code) {
            return Err(SimError::CodeRange {
                kind: "weight",
                value: code,
                min: WEIGHT_CODE_MIN,
                max: WEIGHT_CODE_MAX,
            });
        }
        Self::from_units((code + WEIGHT_SHIFT) as u32, params)
    }

    #[inline]
    pub fn enabled_units(&self) -> u32 {
        self.enabled_units
    }

    #[inline]
    pub fn effective_c_t(&self) -> f64 {
        self.effective_c_t
    }
}

/// Converts a signed input code into a differential input voltage. Negative
/// codes flip the polarity of the differential pair drive.
pub fn dac_convert(input_code: i32, params: &DeviceParams) -> Result<f64> {
    if input_code.abs() > INPUT_CODE_MAX {
        return Err(SimError::CodeRange {
            kind: "input",
            value: input_code,
            min: -INPUT_CODE_MAX,
            max: INPUT_CODE_MAX,
        });
    }
    Ok(input_code as f64 * params.v_lsb)
}

/// Differential voltage gain of a cell driven by `bank`: 2*C_T/C_D.
#[inline]
pub fn compute_gain(bank: &WeightBankState, params: &DeviceParams) -> f64 {
    2.0 * bank.effective_c_t() / params.c_d
}

/// Mid-rise uniform quantizer over [-adc_fullscale, +adc_fullscale].
/// Out-of-range inputs clamp silently to the extreme codes.
pub fn adc_read(v_diff: f64, params: &DeviceParams) -> i32 {
    adc_read_sat(v_diff, params).0
}

/// Like [`adc_read`] but also reports whether the input saturated.
pub fn adc_read_sat(v_diff: f64, params: &DeviceParams) -> (i32, bool) {
    let (min_code, max_code) = params.adc_code_range();
    let raw = (v_diff / params.adc_lsb()).floor();
    // floor() of any finite f64 fits the comparison below without overflow
    if raw < min_code as f64 {
        (min_code, true)
    } else if raw > max_code as f64 {
        (max_code, true)
    } else {
        (raw as i32, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn defaults() -> DeviceParams {
        DeviceParams::default()
    }

    #[test]
    fn dac_zero_and_extremes() {
        let p = defaults();
        assert_eq!(dac_convert(0, &p).unwrap(), 0.0);
        assert!((dac_convert(15, &p).unwrap() - 562.5e-6).abs() < 1e-18);
        assert!((dac_convert(-15, &p).unwrap() + 562.5e-6).abs() < 1e-18);
        assert!(dac_convert(16, &p).is_err());
        assert!(dac_convert(-16, &p).is_err());
    }

    #[test]
    fn dac_antisymmetry() {
        let p = defaults();
        for code in -15..=15 {
            assert_eq!(
                dac_convert(-code, &p).unwrap(),
                -dac_convert(code, &p).unwrap()
            );
        }
    }

    #[test]
    fn gain_law_examples() {
        let mut p = defaults();
        p.c_par = 0.0;
        let empty = WeightBankState::from_units(0, &p).unwrap();
        assert_eq!(compute_gain(&empty, &p), 0.0);
        let two = WeightBankState::from_units(2, &p).unwrap();
        assert!((compute_gain(&two, &p) - 0.32).abs() < 1e-15);

        let p = defaults();
        let full = WeightBankState::from_units(15, &p).unwrap();
        assert!((compute_gain(&full, &p) - 2.44).abs() < 1e-12);
    }

    #[test]
    fn gain_is_strictly_monotone_in_units() {
        let p = defaults();
        let mut prev = -1.0;
        for units in 0..=p.tail_units {
            let g = compute_gain(&WeightBankState::from_units(units, &p).unwrap(), &p);
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn gain_with_nonuniform_tail_schedule() {
        let mut p = defaults();
        p.tail_unit_caps = Some((0..15).map(|i| 6.8e-15 + i as f64 * 0.2e-15).collect());
        p.c_par = 0.0;
        let bank = WeightBankState::from_units(3, &p).unwrap();
        let expected = 2.0 * (6.8e-15 + 7.0e-15 + 7.2e-15) / p.c_d;
        assert!((compute_gain(&bank, &p) - expected).abs() < 1e-15);
    }

    #[test]
    fn mac_step_zero_input_droops_only() {
        let p = defaults();
        let bank = WeightBankState::from_units(15, &p).unwrap();
        let mut cell = CellState::precharged(&p);
        cell.mac_step(0.0, &bank, &p).unwrap();
        assert_eq!(cell.v_out(), 0.0);
        assert_eq!(cell.mac_count, 1);
        let droop = 15.0 * p.cm_droop_per_unit;
        assert!((cell.v_q() - (p.v_dd - droop)).abs() < 1e-15);
        assert!((cell.v_qn() - (p.v_dd - droop)).abs() < 1e-15);
    }

    #[test]
    fn mac_step_single_increment() {
        // One step at v_in = 100 uV and A_v = 2.0 must move v_out by 200 uV.
        let mut p = defaults();
        p.c_par = 0.0;
        p.c_unit = 10e-15; // 10 units * 2*10f/100f = 2.0
        let bank = WeightBankState::from_units(10, &p).unwrap();
        assert_eq!(compute_gain(&bank, &p), 2.0);
        let mut cell = CellState::precharged(&p);
        cell.mac_step(100e-6, &bank, &p).unwrap();
        assert!((cell.v_out() - 200e-6).abs() < 1e-15);
    }

    #[test]
    fn accumulation_headline_150_macs() {
        // 150 max-code MACs at the unit-only gain (A_v = 2.4) land at 202.5 mV.
        let mut p = defaults();
        p.c_par = 0.0;
        let bank = WeightBankState::from_units(15, &p).unwrap();
        let v_in = dac_convert(15, &p).unwrap();
        let mut cell = CellState::precharged(&p);
        for _ in 0..150 {
            cell.mac_step(v_in, &bank, &p).unwrap();
        }
        assert!((cell.v_out().abs() - 202.5e-3).abs() < 1e-12);
        // Independent route: 150 * I * W * v_lsb * a_lsb.
        let by_codes = 150.0 * 225.0 * 0.16 * 37.5e-6;
        assert!((cell.v_out().abs() - by_codes).abs() < 1e-12);
    }

    #[test]
    fn headroom_budget_allows_200_and_faults_on_201() {
        let p = defaults();
        let bank = WeightBankState::from_units(15, &p).unwrap();
        let v_in = dac_convert(15, &p).unwrap();
        let mut cell = CellState::precharged(&p);
        for _ in 0..200 {
            cell.mac_step(v_in, &bank, &p).unwrap();
        }
        assert!(cell.v_q().min(cell.v_qn()) >= p.v_floor);
        let fault = cell.mac_step(v_in, &bank, &p).unwrap_err();
        assert_eq!(fault.mac_count, 201);
    }

    #[test]
    fn headroom_voltage_floor_faults() {
        let mut p = defaults();
        p.v_floor = 1.15;
        let bank = WeightBankState::from_units(15, &p).unwrap();
        let mut cell = CellState::precharged(&p);
        let mut failed = false;
        for _ in 0..50 {
            if cell.mac_step(0.0, &bank, &p).is_err() {
                failed = true;
                break;
            }
        }
        assert!(
            failed,
            "droop should cross a 1.15 V floor well before 50 MACs"
        );
    }

    #[test]
    fn precharge_resets_and_is_idempotent() {
        let p = defaults();
        let bank = WeightBankState::from_units(7, &p).unwrap();
        let mut cell = CellState::precharged(&p);
        cell.mac_step(dac_convert(9, &p).unwrap(), &bank, &p)
            .unwrap();
        assert!(cell.v_out().abs() > 0.0);
        cell.precharge(&p);
        assert_eq!(cell, CellState::precharged(&p));
        cell.precharge(&p);
        assert_eq!(cell, CellState::precharged(&p));
        assert_eq!(cell.v_out(), 0.0);
    }

    #[test]
    fn adc_examples() {
        let p = defaults();
        assert_eq!(adc_read(0.0, &p), 0);
        assert_eq!(adc_read(p.adc_fullscale, &p), 31);
        assert_eq!(adc_read(1.0, &p), 31);
        assert_eq!(adc_read(-1.0, &p), -32);
        let lsb = p.adc_lsb();
        assert_eq!(adc_read(3.4 * lsb, &p), 3);
        assert_eq!(adc_read(0.2025, &p), 21);
        assert!(adc_read_sat(1.0, &p).1);
        assert!(!adc_read_sat(0.1, &p).1);
    }

    #[test]
    fn adc_is_monotone() {
        let p = defaults();
        let mut prev = i32::MIN;
        let mut v = -0.4;
        while v <= 0.4 {
            let code = adc_read(v, &p);
            assert!(code >= prev);
            prev = code;
            v += 1.7e-3;
        }
    }

    #[test]
    fn noise_zero_sigma_is_identity_and_seeds_are_deterministic() {
        let mut p = defaults();
        p.sigma_cell_noise = 0.0;
        let mut cell = CellState::precharged(&p);
        let before = cell;
        cell.apply_noise(&p, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(cell, before);

        let p = defaults();
        let mut a = CellState::precharged(&p);
        let mut b = CellState::precharged(&p);
        a.apply_noise(&p, &mut ChaCha8Rng::seed_from_u64(42));
        b.apply_noise(&p, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn noise_rms_matches_differential_sigma() {
        let p = defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            // Nodes away from the clamp boundaries.
            let mut cell = CellState::from_nodes(0.6, 0.6, 0);
            cell.apply_noise(&p, &mut rng);
            sum_sq += cell.v_out() * cell.v_out();
        }
        let rms = (sum_sq / n as f64).sqrt();
        assert!((rms - p.sigma_cell_noise).abs() / p.sigma_cell_noise < 0.02);
    }

    #[test]
    fn mac_bilinearity_over_all_code_pairs() {
        // Increment is bilinear in (input code, enabled units) plus the
        // constant parasitic term; checked exhaustively at 1e-12 relative.
        let p = defaults();
        for code in 0..=15 {
            let v_in = dac_convert(code, &p).unwrap();
            for units in 0..=15u32 {
                let bank = WeightBankState::from_units(units, &p).unwrap();
                let mut cell = CellState::precharged(&p);
                cell.mac_step(v_in, &bank, &p).unwrap();
                let closed = v_in * 2.0 * (units as f64 * p.c_unit + p.c_par) / p.c_d;
                let err = (cell.v_out() - closed).abs();
                let scale = closed.abs().max(1e-30);
                assert!(err / scale < 1e-12 || err < 1e-18);
            }
        }
    }

    #[test]
    fn validation_flags_out_of_range_tail_units() {
        let mut p = defaults();
        assert!(p.validate().unwrap().is_empty());
        p.c_unit = 5e-15;
        assert_eq!(p.validate().unwrap().len(), 1);
        p.c_unit = -1.0;
        assert!(p.validate().is_err());
        let mut p = defaults();
        p.max_mac_ops = 0;
        assert!(p.validate().is_err());
        let mut p = defaults();
        p.tail_unit_caps = Some(vec![8e-15; 3]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn params_json_rejects_unknown_keys_and_fills_defaults() {
        let p: DeviceParams = serde_json::from_str("{\"v_dd\": 1.1}").unwrap();
        assert_eq!(p.v_dd, 1.1);
        assert_eq!(p.c_d, 100e-15);
        assert!(serde_json::from_str::<DeviceParams>("{\"vdd\": 1.1}").is_err());
    }

    #[test]
    fn gain_compression_scales_increment() {
        let mut p = defaults();
        p.gain_compression = Some(GainCompression {
            alpha: 0.5,
            v_ref: 0.1,
        });
        let bank = WeightBankState::from_units(15, &p).unwrap();
        let v_in = dac_convert(15, &p).unwrap();
        let mut cell = CellState::precharged(&p);
        // First step sees v_out = 0, so the factor is exactly 1.
        cell.mac_step(v_in, &bank, &p).unwrap();
        let first = cell.v_out();
        cell.mac_step(v_in, &bank, &p).unwrap();
        let second = cell.v_out() - first;
        assert!(second < first);
    }
}
