//! Property tests for the algebraic invariants that hold across modules:
//! superposition and order invariance of the accumulation, quantizer
//! monotonicity, lowering equivalence, tiling conservation, and the offset
//! identities the correction schemes rely on.

use proptest::prelude::*;

use macdo::correction::chop_correct;
use macdo::device::{adc_read, dac_convert, CellState, DeviceParams, WeightBankState};
use macdo::mapper::{tile_schedule, ScheduleOptions};
use macdo::matrix::Matrix;
use macdo::oracle::{gemm_exact, gemm_outer_product, mismatch_closed_form, QuantSpec};

fn ideal_params() -> DeviceParams {
    DeviceParams {
        c_par: 0.0,
        sigma_cell_noise: 0.0,
        ..DeviceParams::default()
    }
}

proptest! {
    /// k accumulations equal the closed-form sum of v_i * A_i, in any order.
    #[test]
    fn superposition_and_permutation_invariance(
        steps in prop::collection::vec((0i32..=15, 0u32..=15), 1..40),
        swap in any::<u64>(),
    ) {
        let p = ideal_params();
        let run = |order: &[(i32, u32)]| {
            let mut cell = CellState::precharged(&p);
            for &(code, units) in order {
                let bank = WeightBankState::from_units(units, &p).unwrap();
                cell.mac_step(dac_convert(code, &p).unwrap(), &bank, &p).unwrap();
            }
            cell.v_out()
        };
        let expected: f64 = steps
            .iter()
            .map(|&(code, units)| {
                code as f64 * p.v_lsb * 2.0 * units as f64 * p.c_unit / p.c_d
            })
            .sum();
        let forward = run(&steps);
        let mut shuffled = steps.clone();
        if shuffled.len() > 1 {
            let i = (swap as usize) % shuffled.len();
            shuffled.swap(0, i);
            shuffled.reverse();
        }
        let backward = run(&shuffled);
        let scale = expected.abs().max(1e-18);
        prop_assert!((forward - expected).abs() / scale < 1e-12);
        prop_assert!((backward - expected).abs() / scale < 1e-12);
    }

    /// The DAC is antisymmetric and the ADC is monotone.
    #[test]
    fn dac_antisymmetry_adc_monotonicity(a in -15i32..=15, v1 in -0.4f64..0.4, v2 in -0.4f64..0.4) {
        let p = DeviceParams::default();
        prop_assert_eq!(dac_convert(-a, &p).unwrap(), -dac_convert(a, &p).unwrap());
        let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        prop_assert!(adc_read(lo, &p) <= adc_read(hi, &p));
    }

    /// Outer-product and inner-product GEMM routes agree exactly.
    #[test]
    fn gemm_routes_agree(
        m in 1usize..=12,
        k in 1usize..=12,
        n in 1usize..=12,
        seed in any::<u32>(),
    ) {
        let mut state = seed as u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 31) as i32 - 15
        };
        let a = Matrix::from_fn(m, k, |_, _| next());
        let b = Matrix::from_fn(k, n, |_, _| next().clamp(-8, 7));
        prop_assert_eq!(gemm_exact(&a, &b).unwrap(), gemm_outer_product(&a, &b).unwrap());
    }

    /// The chop identity OUT + OUT' = 2*(I*W + I_m*W_c) holds for any codes
    /// and offsets, and the corrected value recovers the product.
    #[test]
    fn chop_identity_algebraic(
        i in -15i32..=15,
        w in -8i32..=7,
        i_m in -0.5f64..0.5,
        w_o in 0.0f64..1.0,
    ) {
        let w_c = 8.0 + w_o;
        let out = mismatch_closed_form(&[i], &[w], i_m, w_c);
        let out_neg = mismatch_closed_form(&[-i], &[-w], i_m, w_c);
        let identity = 2.0 * (i as f64 * w as f64 + i_m * w_c);
        prop_assert!((out + out_neg - identity).abs() < 1e-12);
        let corrected = chop_correct(out, out_neg, i_m * w_c, 1);
        prop_assert!((corrected - i as f64 * w as f64).abs() < 1e-12);
    }

    /// Quantization round-trip error stays below half a step for in-range
    /// values.
    #[test]
    fn quant_round_trip_bound(x in -3.0f64..3.0, max_abs in 0.5f64..4.0) {
        let q = QuantSpec::for_inputs(max_abs, 4);
        let clipped = x.clamp(-max_abs, max_abs);
        let back = q.dequantize(q.quantize(clipped));
        prop_assert!((back - clipped).abs() <= q.scale / 2.0 + 1e-12);
    }

    /// Tiling conserves total MAC count and keeps utilization in (0, 1].
    #[test]
    fn tiling_conservation(
        m in 1usize..=48,
        k in 1usize..=420,
        n in 1usize..=48,
    ) {
        let inputs = Matrix::<i32>::zeros(m, k);
        let weights = Matrix::<i32>::zeros(k, n);
        let s = tile_schedule(&inputs, &weights, (16, 16), &ScheduleOptions::new(200, false))
            .unwrap();
        prop_assert_eq!(s.active_macs as usize, m * k * n);
        prop_assert!(s.utilization > 0.0 && s.utilization <= 1.0);
        let full = s.utilization == 1.0;
        let all_tiles_full = s
            .tiles
            .iter()
            .all(|t| t.active_rows == 16 && t.active_cols == 16);
        prop_assert_eq!(full, all_tiles_full);
    }
}
