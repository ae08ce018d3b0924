//! Evaluation of one scenario: trace, metrics, spectra and plots.

pub mod plot;
pub mod spectrum;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::control::{References, M_MAX};
use crate::error::{Error, Result};
use crate::neural::RpbParams;
use crate::rollout::{simulate_partial, System};
use crate::rpb::Operator;
use crate::scenarios::{Fault, FaultScenario};
use crate::trainer::LossConfig;

pub use plot::{render_svg, standard_panels, Panel, Series};
pub use spectrum::{spectrum, Spectrum, Window};
pub use trace::{col, Trace, COLUMNS};

/// Exceedances longer than this count as sustained (s).
pub const SUSTAINED: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_dc_lo: f64,
    pub v_dc_hi: f64,
    pub i_max: f64,
    pub w_ref: f64,
}

impl Limits {
    pub fn new(refs: &References, loss: &LossConfig) -> Self {
        Self {
            v_dc_lo: loss.vdc_lo * refs.v_dc_ref,
            v_dc_hi: loss.vdc_hi * refs.v_dc_ref,
            i_max: loss.ig_max,
            w_ref: refs.w_ref,
        }
    }

    pub fn of(sys: &System) -> Self {
        Self::new(&sys.refs, &sys.loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub min_v_dc: f64,
    pub max_v_dc: f64,
    /// Time with v_dc outside the band (s).
    pub band_violation_time: f64,
    pub longest_band_violation: f64,
    /// Time with v_dc below the band (s).
    pub lower_violation_time: f64,
    pub longest_lower_violation: f64,
    pub max_i_norm: f64,
    /// Time with ‖i_g‖ above its limit (s).
    pub current_violation_time: f64,
    pub longest_current_violation: f64,
    /// Current exceedances lasting longer than 20 ms.
    pub sustained_current_violations: usize,
    /// max |w − w_ref| / w_ref (%).
    pub max_speed_dev_pct: f64,
    pub collapse_time: Option<f64>,
}

impl Metrics {
    pub fn compute(trace: &Trace, lim: &Limits) -> Self {
        let h = trace.h;
        let v = trace.column(col::V_DC);
        let i = trace.i_norm();
        let w = trace.column(col::W);
        let band: Vec<bool> = v.iter().map(|&x| x < lim.v_dc_lo || x > lim.v_dc_hi).collect();
        let lower: Vec<bool> = v.iter().map(|&x| x < lim.v_dc_lo).collect();
        let over: Vec<bool> = i.iter().map(|&x| x > lim.i_max).collect();
        let over_runs = runs(&over);
        let steps = |m: &[bool]| m.iter().filter(|b| **b).count() as f64 * h;
        let longest = |m: &[bool]| runs(m).into_iter().max().unwrap_or(0) as f64 * h;
        Self {
            min_v_dc: v.iter().copied().fold(f64::INFINITY, f64::min),
            max_v_dc: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            band_violation_time: steps(&band),
            longest_band_violation: longest(&band),
            lower_violation_time: steps(&lower),
            longest_lower_violation: longest(&lower),
            max_i_norm: i.iter().copied().fold(0.0, f64::max),
            current_violation_time: steps(&over),
            longest_current_violation: over_runs.iter().copied().max().unwrap_or(0) as f64 * h,
            sustained_current_violations: over_runs.iter().filter(|&&n| n as f64 * h > SUSTAINED).count(),
            max_speed_dev_pct: w
                .iter()
                .map(|x| (x - lim.w_ref).abs() / lim.w_ref * 100.0)
                .fold(0.0, f64::max),
            collapse_time: trace.collapse_step.map(|s| s as f64 * h),
        }
    }
}

/// Lengths of the maximal runs of `true`.
pub fn runs(mask: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = 0;
    for &b in mask {
        if b {
            n += 1;
        } else if n > 0 {
            out.push(n);
            n = 0;
        }
    }
    if n > 0 {
        out.push(n);
    }
    out
}

/// Rolls out `sc` with the base loop alone (`params` absent) or with the
/// operator added. A DC-bus collapse ends the trace and is reported in the
/// metrics.
pub fn evaluate(sys: &System, params: Option<&RpbParams>, sc: &FaultScenario) -> Result<(Trace, Metrics)> {
    sc.validate()?;
    if sc.h != sys.plant.h() {
        return Err(Error::InvalidConfig(format!(
            "scenario step {} s differs from the plant step {} s",
            sc.h,
            sys.plant.h()
        )));
    }
    let op = params.map(Operator::new).transpose()?;
    let seq = sys.episode(sc)?;
    let (records, err) = simulate_partial(sys, op.as_ref(), &seq);
    let collapse_step = match err {
        None => None,
        Some(Error::DcBusCollapse { site, .. }) => Some(site.step.unwrap_or(records.len())),
        Some(e) => return Err(e),
    };
    let trace = Trace::from_records(&records, sc.h, sc.faults.clone(), collapse_step);
    let metrics = Metrics::compute(&trace, &Limits::of(sys));
    Ok((trace, metrics))
}

/// Spectrum of a trace column over the interval of fault `k`.
pub fn fault_spectrum(trace: &Trace, column: usize, k: usize, window: Window, grid_freq: f64) -> Result<Spectrum> {
    let f = trace
        .faults
        .get(k)
        .ok_or_else(|| Error::InvalidConfig(format!("trace has no fault {k}")))?;
    spectrum(&trace.column(column), trace.h, f.t_start, f.t_end, window, grid_freq)
}

/// Whether ‖m_g‖ reaches its limit in at least two separate peaks during the
/// first grid period after the onset of `fault`.
pub fn modulation_peaks_at_onset(trace: &Trace, fault: &Fault, grid_freq: f64) -> bool {
    let i0 = (fault.t_start / trace.h).round() as usize;
    let i1 = (((fault.t_start + 1.0 / grid_freq) / trace.h).round() as usize).min(trace.len());
    if i0 >= i1 {
        return false;
    }
    let m = trace.m_norm();
    let at_max: Vec<bool> = m[i0..i1].iter().map(|&x| x >= M_MAX * (1.0 - 1e-6)).collect();
    runs(&at_max).len() >= 2
}
