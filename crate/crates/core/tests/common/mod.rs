#![allow(dead_code)]

use afe_rpb::plant::reactive_power;
use afe_rpb::rollout::{StepRecord, System};
use afe_rpb::rpb::{eta_of, p_scales, Eta};
use afe_rpb::scenarios::{Fault, FaultScenario};

/// Base-loop settling time used by the tracking and convergence checks (s).
/// Dominated by the speed loop recovering with only the torque headroom left
/// above the rated load.
pub const SETTLE: f64 = 8.0;

/// Tracking error threshold (per unit).
pub const TRACK_TOL: f64 = 1e-3;

/// |w − w_ref|, |v_dc − v_dc_ref| and |Q − Q_ref| in per unit.
pub fn tracking_errors(sys: &System, r: &StepRecord) -> [f64; 3] {
    let b = &sys.bases;
    [
        (r.x.w - sys.refs.w_ref).abs() / b.w_base,
        (r.x.v_dc - sys.refs.v_dc_ref).abs() / b.vdc_base,
        (reactive_power(&r.v_g, &r.x.i_g) - sys.refs.q_ref).abs() / (b.v_base * b.i_base),
    ]
}

/// Last step with any tracking error at or above `tol` (0 if none).
pub fn last_tracking_violation(sys: &System, recs: &[StepRecord], tol: f64) -> usize {
    recs.iter()
        .rev()
        .find(|r| tracking_errors(sys, r).iter().any(|e| *e >= tol))
        .map_or(0, |r| r.t)
}

/// Per-unit distance between the closed-loop states of two records.
pub fn eta_distance_pu(sys: &System, a: &StepRecord, b: &StepRecord) -> f64 {
    let s = p_scales(&sys.bases);
    let (ea, eb): (Eta, Eta) = (eta_of(&a.x, &a.c), eta_of(&b.x, &b.c));
    ea.iter()
        .zip(&eb)
        .zip(&s)
        .map(|((x, y), s)| ((x - y) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn pnorm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn one_fault(delta: f64, t_start: f64, t_end: f64, horizon: usize) -> FaultScenario {
    let mut sc = FaultScenario::nominal(horizon);
    sc.faults.push(Fault { delta, t_start, t_end });
    sc
}
