mod common;

use afe_rpb::analysis::{evaluate, spectrum, Limits, Metrics, Trace, Window};
use afe_rpb::neural::{NetConfig, RpbParams};
use afe_rpb::rollout::System;
use common::*;
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn exported_trace_reproduces_values_and_metrics() {
    let sys = System::with_defaults().unwrap();
    let mut p = RpbParams::init(&NetConfig::default(), 8);
    p.m2.f = p.m2.f.scaled(20.0);
    let sc = one_fault(1.0, 0.02, 0.1, 1200);
    let (trace, metrics) = evaluate(&sys, Some(&p), &sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    trace.write(&path).unwrap();
    let back = Trace::read(&path).unwrap();
    assert_eq!(back.len(), trace.len());
    for (a, b) in trace.rows.iter().zip(&back.rows) {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(Metrics::compute(&back, &Limits::of(&sys)), metrics);
}

#[test]
fn evaluation_is_bit_reproducible() {
    let sys = System::with_defaults().unwrap();
    let p = RpbParams::init(&NetConfig::default(), 2);
    let sc = one_fault(0.7, 0.01, 0.05, 600);
    let (a, _) = evaluate(&sys, Some(&p), &sc).unwrap();
    let (b, _) = evaluate(&sys, Some(&p), &sc).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
}

proptest! {
    #[test]
    fn tone_on_a_bin_is_located_exactly(
        periods in 5usize..40, k in 1usize..400, amp in 1e-3..1e4f64, phase in 0.0..std::f64::consts::TAU, hann in any::<bool>(),
    ) {
        let h = 2.5e-4;
        let n = periods * 80;
        prop_assume!(k < n / 2 - 1);
        let f = k as f64 / (n as f64 * h);
        let x: Vec<f64> = (0..n).map(|i| amp * (2.0 * PI * f * i as f64 * h + phase).cos()).collect();
        let w = if hann { Window::Hann } else { Window::None };
        let s = spectrum(&x, h, 0.0, n as f64 * h, w, 50.0).unwrap();
        let (fp, mp) = s.peak();
        prop_assert!((fp - f).abs() <= 1e-10, "{fp} vs {f}");
        prop_assert!((mp - amp).abs() <= 1e-9 * amp);
    }
}
