//! Squared-ReLU barrier loss.

use serde::{Deserialize, Serialize};

use crate::control::References;
use crate::error::{Error, Result};
use crate::plant::{PerUnitBases, PlantState, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha_nom: f64,
    pub alpha_r_vdc: f64,
    pub alpha_r_ig: f64,
    /// DC band as fractions of the reference.
    pub vdc_lo: f64,
    pub vdc_hi: f64,
    /// Grid-current norm limit (A).
    pub ig_max: f64,
    /// Evaluate all terms in per unit; physical units otherwise.
    pub per_unit: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_nom: 1.0,
            alpha_r_vdc: 100.0,
            alpha_r_ig: 100.0,
            vdc_lo: 0.975,
            vdc_hi: 1.025,
            ig_max: 2222.0,
            per_unit: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha_nom, self.alpha_r_vdc, self.alpha_r_ig];
        if w.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if !(self.vdc_lo <= self.vdc_hi) || !(self.ig_max >= 0.0) {
            return Err(Error::InvalidConfig("loss bounds are not ordered".into()));
        }
        Ok(())
    }
}

/// b(x) = ReLU(x - x_max)² + ReLU(x_min - x)².
pub fn barrier(x: f64, xmin: f64, xmax: f64) -> f64 {
    let hi = (x - xmax).max(0.0);
    let lo = (xmin - x).max(0.0);
    hi * hi + lo * lo
}

pub fn barrier_grad(x: f64, xmin: f64, xmax: f64) -> f64 {
    2.0 * (x - xmax).max(0.0) - 2.0 * (xmin - x).max(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub nominal: f64,
    pub vdc: f64,
    pub ig: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.nominal + self.vdc + self.ig
    }
}

/// Loss of one state and its gradient with respect to that state.
pub fn step_loss(
    x: &PlantState,
    refs: &References,
    cfg: &LossConfig,
    b: &PerUnitBases,
) -> (LossTerms, PlantState) {
    let (sv, si) = if cfg.per_unit { (b.vdc_base, b.i_base) } else { (1.0, 1.0) };
    let v = x.v_dc / sv;
    let r = refs.v_dc_ref / sv;
    let (lo, hi) = (cfg.vdc_lo * r, cfg.vdc_hi * r);
    let n = x.i_g.norm() / si;
    let imax = cfg.ig_max / si;
    let terms = LossTerms {
        nominal: cfg.alpha_nom * (v - r) * (v - r),
        vdc: cfg.alpha_r_vdc * barrier(v, lo, hi),
        ig: cfg.alpha_r_ig * barrier(n, 0.0, imax),
    };
    let gv = (2.0 * cfg.alpha_nom * (v - r) + cfg.alpha_r_vdc * barrier_grad(v, lo, hi)) / sv;
    let gn = cfg.alpha_r_ig * barrier_grad(n, 0.0, imax);
    let gi = if gn != 0.0 { x.i_g * (gn / (n * si * si)) } else { Vec2::zeros() };
    (
        terms,
        PlantState {
            w: 0.0,
            v_dc: gv,
            i_g: gi,
        },
    )
}

/// Sum of step losses over a trajectory of T + 1 states.
pub fn noc_loss(traj: &[PlantState], refs: &References, cfg: &LossConfig, b: &PerUnitBases) -> f64 {
    traj.iter().map(|x| step_loss(x, refs, cfg, b).0.total()).sum()
}
