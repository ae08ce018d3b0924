mod common;

use afe_rpb::neural::{NetConfig, RpbParams};
use afe_rpb::rollout::{simulate, System};
use afe_rpb::rpb::{p_to_pu, update_window, Operator, WindowState};
use common::*;
use proptest::prelude::*;
use std::sync::OnceLock;

fn sys() -> &'static System {
    static S: OnceLock<System> = OnceLock::new();
    S.get_or_init(|| System::with_defaults().unwrap())
}

/// Random parameters with output weights large enough for visible action.
fn params(seed: u64, gain: f64) -> RpbParams {
    let mut p = RpbParams::init(&NetConfig::default(), seed);
    p.m2.f = p.m2.f.scaled(gain);
    p.m2.g = p.m2.g.scaled(gain);
    p
}

fn fault() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.05..1.0f64, 0.01..0.05f64, 0.02..0.1f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reconstruction_matches_injected_disturbance((delta, t0, len) in fault(), seed in 0u64..1000) {
        let s = sys();
        let seq = s.episode(&one_fault(delta, t0, t0 + len, 800)).unwrap();
        let op = Operator::new(&params(seed, 20.0)).unwrap();
        let recs = simulate(s, Some(&op), &seq).unwrap();
        let pmax = recs.iter().map(|r| pnorm(&r.p)).fold(0.0, f64::max);
        let err = recs
            .iter()
            .map(|r| pnorm(&std::array::from_fn::<f64, 10, _>(|k| r.p_hat[k] - r.p[k])))
            .fold(0.0, f64::max);
        prop_assert!(err <= 1e-9 * pmax, "{err} vs {pmax}");
    }

    #[test]
    fn gate_follows_disturbance_and_hold((delta, t0, len) in fault(), seed in 0u64..1000) {
        let s = sys();
        let seq = s.episode(&one_fault(delta, t0, t0 + len, 800)).unwrap();
        let a = simulate(s, Some(&Operator::new(&params(seed, 20.0)).unwrap()), &seq).unwrap();
        let b = simulate(s, None, &seq).unwrap();
        // Replay the gate on the true disturbance.
        let mut ws = WindowState::default();
        for (t, r) in a.iter().enumerate() {
            ws = update_window(&ws, &p_to_pu(&seq.p(t), &s.bases), seq.v_act[t].y, s.eps);
            prop_assert_eq!(r.sigma, ws.sigma, "step {}", t);
            let large = pnorm(&p_to_pu(&seq.p(t), &s.bases)) > s.eps;
            prop_assert!(!large || r.sigma);
        }
        // The gate does not depend on the operator.
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.sigma == y.sigma));
    }
}

#[test]
fn control_energy_concentrates_before_release() {
    let s = sys();
    let op = Operator::new(&params(5, 20.0)).unwrap();
    let tail_ratio = |horizon: usize| {
        let seq = s.episode(&one_fault(0.9, 0.02, 0.08, horizon)).unwrap();
        let recs = simulate(s, Some(&op), &seq).unwrap();
        let e: Vec<f64> = recs.iter().map(|r| r.u.norm_squared()).collect();
        let total: f64 = e.iter().sum();
        assert!(total > 0.0);
        e[horizon / 2..].iter().sum::<f64>() / total
    };
    let r: Vec<f64> = [800, 1600, 6400].into_iter().map(tail_ratio).collect();
    assert!(r[1] <= r[0] && r[2] <= r[1], "{r:?}");
    assert!(r[2] < 1e-9, "{r:?}");
}
