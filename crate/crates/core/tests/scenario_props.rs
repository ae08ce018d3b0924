mod common;

use afe_rpb::rollout::System;
use afe_rpb::scenarios::{sample_scenario, SamplingConfig};
use common::*;
use proptest::prelude::*;
use std::sync::OnceLock;

fn sys() -> &'static System {
    static S: OnceLock<System> = OnceLock::new();
    S.get_or_init(|| System::with_defaults().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn disturbance_is_sparse_and_square_summable(delta in 0.01..1.0f64, t0 in 0.0..0.1f64, len in 0.0013..0.12f64) {
        let s = sys();
        let sc = one_fault(delta, t0, t0 + len, 1000);
        let seq = s.episode(&sc).unwrap();
        let p0 = seq.p(0);
        prop_assert!(p0[8] == 0.0 && p0[9] == 0.0);
        let mut energy = 0.0;
        for t in 1..seq.len() {
            let p = seq.p(t);
            prop_assert!(p[..8].iter().all(|v| *v == 0.0));
            let nz = p[8] != 0.0 || p[9] != 0.0;
            prop_assert_eq!(nz, sc.in_fault(t - 1), "step {}", t);
            energy += p[8] * p[8] + p[9] * p[9];
        }
        prop_assert!(energy.is_finite());
        prop_assert!((energy.sqrt() - seq.fault_energy()).abs() <= 1e-9 * energy.sqrt().max(1.0));
    }

    #[test]
    fn fault_edges_land_on_steps(seed in any::<u64>(), i in 0usize..1000) {
        let h = 2.5e-4;
        let sc = sample_scenario(&SamplingConfig::default(), h, seed, i);
        for f in &sc.faults {
            let a = sc.steps(f.t_start);
            let b = sc.steps(f.t_end);
            prop_assert!((a as f64 * h - f.t_start).abs() <= 0.5 * h + 1e-15);
            prop_assert!((b as f64 * h - f.t_end).abs() <= 0.5 * h + 1e-15);
            let active = (0..=sc.horizon).filter(|&t| sc.in_fault(t)).count();
            prop_assert!(((active as f64) * h - (f.t_end - f.t_start)).abs() <= h);
        }
        prop_assert!(sc.validate().is_ok());
    }
}
