//! Cascaded anti-windup PI base controller.
//!
//! Speed PI → τ_m, DC-bus PI → d-axis current reference, Q_ref → q-axis
//! current reference, then a 2-D current PI in the nominal grid frame with
//! grid-voltage feed-forward and ωL decoupling → pre-saturation modulation.
//! The frame angle is taken from the nominal grid voltage vector, so no PLL
//! state is needed and the closed loop has exactly 8 states.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{Disturbances, Mat2, PlantState, Vec2};

/// Modulation norm limit.
pub const M_MAX: f64 = FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CtrlState {
    /// Speed-PI integrator (N·m).
    pub xi_w: f64,
    /// DC-voltage-PI integrator (A).
    pub xi_vdc: f64,
    /// Current-PI integrator, dq frame (V).
    pub xi_i: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct References {
    /// Shaft speed reference (rad/s).
    pub w_ref: f64,
    /// DC-link voltage reference (V).
    pub v_dc_ref: f64,
    /// Reactive power reference (VAR).
    pub q_ref: f64,
}

impl Default for References {
    fn default() -> Self {
        Self {
            w_ref: 125.66,
            v_dc_ref: 5000.0,
            q_ref: 0.0,
        }
    }
}

/// Torque-limit reduction on DC undervoltage, in per unit of `v_dc_ref`.
///
/// Full torque above `v_hi`, none below `v_lo`, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Derate {
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Default for Derate {
    fn default() -> Self {
        Self {
            v_lo: 0.93,
            v_hi: 0.985,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtrlGains {
    /// Speed loop (N·m·s/rad, N·m/rad).
    pub kp_w: f64,
    pub ki_w: f64,
    /// DC-voltage loop (A/V, A/(V·s)).
    pub kp_vdc: f64,
    pub ki_vdc: f64,
    /// Current loop, shared by both axes (Ω, Ω/s).
    pub kp_i: f64,
    pub ki_i: f64,
    /// Back-calculation tracking gain applied per step.
    pub anti_windup: f64,
    /// Motor-power feed-forward into the d-axis current reference.
    pub power_feedforward: bool,
    /// Nominal grid-voltage feed-forward into the converter voltage.
    pub voltage_feedforward: bool,
    /// ωL cross-coupling decoupling.
    pub decoupling: bool,
    /// Inductance estimate used for decoupling (H).
    pub l_dec: f64,
    /// Grid frequency (Hz).
    pub grid_freq: f64,
    /// Motor torque limit (N·m).
    pub tau_max: f64,
    /// Current reference magnitude limit (A).
    pub i_ref_max: f64,
    pub derate: Option<Derate>,
}

impl Default for CtrlGains {
    fn default() -> Self {
        // Loop shaping against the default plant: current loop ≈ 200 Hz,
        // DC loop ≈ 20 Hz, speed loop ≈ 2 Hz.
        Self {
            kp_w: 37_700.0,
            ki_w: 94_750.0,
            kp_vdc: 4.0,
            ki_vdc: 100.0,
            kp_i: 0.377,
            ki_i: 62.8,
            anti_windup: 1.0,
            power_feedforward: true,
            voltage_feedforward: true,
            decoupling: true,
            l_dec: 3e-4,
            grid_freq: 50.0,
            tau_max: 44_356.0,
            i_ref_max: 2222.0,
            derate: Some(Derate::default()),
        }
    }
}

impl CtrlGains {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.kp_w,
            self.ki_w,
            self.kp_vdc,
            self.ki_vdc,
            self.kp_i,
            self.ki_i,
            self.anti_windup,
            self.l_dec,
            self.grid_freq,
            self.tau_max,
            self.i_ref_max,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("gains must be finite".into()));
        }
        if self.ki_w < 0.0 || self.ki_vdc < 0.0 || self.ki_i < 0.0 {
            return Err(Error::InvalidConfig("integral gains must be non-negative".into()));
        }
        if self.tau_max <= 0.0 || self.i_ref_max <= 0.0 {
            return Err(Error::InvalidConfig("output limits must be positive".into()));
        }
        if let Some(d) = self.derate {
            if !(d.v_lo < d.v_hi) {
                return Err(Error::InvalidConfig("derate requires v_lo < v_hi".into()));
            }
        }
        Ok(())
    }
}

/// Gains bound to the sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseController {
    pub gains: CtrlGains,
    pub h: f64,
}

impl BaseController {
    pub fn new(gains: CtrlGains, h: f64) -> Result<Self> {
        gains.validate()?;
        if !(h > 0.0) {
            return Err(Error::InvalidConfig("controller step must be positive".into()));
        }
        Ok(Self { gains, h })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseOutput {
    pub next: CtrlState,
    pub tau_m: f64,
    pub m_g_b: Vec2,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
enum Clamp {
    #[default]
    Free,
    Low,
    High,
}

fn clamp(x: f64, lo: f64, hi: f64) -> (f64, Clamp) {
    if x > hi {
        (hi, Clamp::High)
    } else if x < lo {
        (lo, Clamp::Low)
    } else {
        (x, Clamp::Free)
    }
}

/// Intermediate values of one controller step, kept for the adjoint pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaseCache {
    rot: Mat2,
    v_nom: f64,
    derate_slope: f64,
    tau_clamp: Clamp,
    tau_m: f64,
    id_clamp: Clamp,
    iq_slope: f64,
    v_c: Vec2,
    m_b: Vec2,
    dm: Vec2,
    sat: SatCache,
    w: f64,
    v_dc: f64,
}

impl BaseCache {
    /// Hash-friendly description of which clamps were active.
    pub fn branch_bits(&self) -> u8 {
        let c = |k: Clamp| match k {
            Clamp::Free => 0u8,
            Clamp::Low => 1,
            Clamp::High => 2,
        };
        c(self.tau_clamp)
            | (c(self.id_clamp) << 2)
            | (((self.derate_slope != 0.0) as u8) << 4)
            | (((self.iq_slope != 0.0) as u8) << 5)
            | ((self.sat.active as u8) << 6)
    }
}

fn derate_factor(v_dc: f64, v_ref: f64, derate: Option<Derate>) -> (f64, f64) {
    match derate {
        None => (1.0, 0.0),
        Some(d) => {
            let span = v_ref * (d.v_hi - d.v_lo);
            let s = (v_dc / v_ref - d.v_lo) / (d.v_hi - d.v_lo);
            if s >= 1.0 {
                (1.0, 0.0)
            } else if s <= 0.0 {
                (0.0, 0.0)
            } else {
                (s, 1.0 / span)
            }
        }
    }
}

/// One controller step. `d.v_g` must be the nominal grid voltage: it sets the
/// synchronous frame and the feed-forward.
pub fn base_step(
    c: &CtrlState,
    x: &PlantState,
    y_ref: &References,
    d: &Disturbances,
    ctrl: &BaseController,
) -> Result<(BaseOutput, BaseCache)> {
    let g = &ctrl.gains;
    let h = ctrl.h;
    let v_nom = d.v_g.norm();
    if !(v_nom > 0.0) {
        return Err(Error::non_finite("nominal grid voltage norm"));
    }
    let e = d.v_g / v_nom;
    // dq → αβ
    let rot = Mat2::new(e.x, -e.y, e.y, e.x);

    // speed loop
    let e_w = y_ref.w_ref - x.w;
    let tau_u = g.kp_w * e_w + c.xi_w;
    let (derate, derate_slope) = derate_factor(x.v_dc, y_ref.v_dc_ref, g.derate);
    let (tau_m, tau_clamp) = clamp(tau_u, -g.tau_max, g.tau_max * derate);
    let xi_w = c.xi_w + h * g.ki_w * e_w + g.anti_windup * (tau_m - tau_u);

    // DC-bus loop
    let e_v = y_ref.v_dc_ref - x.v_dc;
    let ff = if g.power_feedforward {
        tau_m * x.w / v_nom
    } else {
        0.0
    };
    let i_du = g.kp_vdc * e_v + c.xi_vdc + ff;
    let (i_d, id_clamp) = clamp(i_du, -g.i_ref_max, g.i_ref_max);
    let xi_vdc = c.xi_vdc + h * g.ki_vdc * e_v + g.anti_windup * (i_d - i_du);

    // reactive current reference
    let i_qu = -y_ref.q_ref / v_nom;
    let iq_lim = (g.i_ref_max * g.i_ref_max - i_d * i_d).max(0.0).sqrt();
    let (i_q, iq_clamp) = clamp(i_qu, -iq_lim, iq_lim);
    let iq_slope = match iq_clamp {
        _ if iq_lim <= 0.0 => 0.0,
        Clamp::High => -i_d / iq_lim,
        Clamp::Low => i_d / iq_lim,
        Clamp::Free => 0.0,
    };

    // current loop in the nominal frame
    let i_dq = rot.transpose() * x.i_g;
    let err = Vec2::new(i_d, i_q) - i_dq;
    let v_l = err * g.kp_i + c.xi_i;
    let v_ff = if g.voltage_feedforward {
        Vec2::new(v_nom, 0.0)
    } else {
        Vec2::zeros()
    };
    let wl = if g.decoupling {
        2.0 * PI * g.grid_freq * g.l_dec
    } else {
        0.0
    };
    let v_c_dq = v_ff - Vec2::new(-i_dq.y, i_dq.x) * wl - v_l;
    let v_c = rot * v_c_dq;
    let m_b = v_c / x.v_dc;

    let (m_s, sat) = saturate_with_cache(&m_b);
    let dm = m_s - m_b;
    let dv_dq = rot.transpose() * dm * x.v_dc;
    let xi_i = c.xi_i + err * (h * g.ki_i) - dv_dq * g.anti_windup;

    let next = CtrlState {
        xi_w,
        xi_vdc,
        xi_i,
    };
    let finite = [xi_w, xi_vdc, xi_i.x, xi_i.y, tau_m, m_b.x, m_b.y];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("base controller output"));
    }
    let cache = BaseCache {
        rot,
        v_nom,
        derate_slope,
        tau_clamp,
        tau_m,
        id_clamp,
        iq_slope,
        v_c,
        m_b,
        dm,
        sat,
        w: x.w,
        v_dc: x.v_dc,
    };
    Ok((BaseOutput { next, tau_m, m_g_b: m_b }, cache))
}

/// Adjoint of [`base_step`]: returns (c̄, x̄) given the adjoints of c⁺, τ_m and m_b.
pub fn base_step_vjp(
    cache: &BaseCache,
    ctrl: &BaseController,
    bar_next: &CtrlState,
    bar_tau: f64,
    bar_mb: &Vec2,
) -> (CtrlState, PlantState) {
    let g = &ctrl.gains;
    let h = ctrl.h;
    let rot = cache.rot;
    let v = cache.v_dc;
    let mut bc = CtrlState::default();
    let mut bx_w = 0.0;
    let mut bx_v = 0.0;
    let mut bx_i = Vec2::zeros();

    // xi_i⁺ = xi_i + h ki err − aw Δv_dq
    bc.xi_i += bar_next.xi_i;
    let mut b_err = bar_next.xi_i * (h * g.ki_i);
    let b_dv = -bar_next.xi_i * g.anti_windup;
    // Δv_dq = Rᵀ (m_s − m_b) v
    let r_bdv = rot * b_dv;
    let b_dm = r_bdv * v;
    bx_v += r_bdv.dot(&cache.dm);
    let mut b_mb = *bar_mb + saturate_vjp(&cache.sat, &cache.m_b, &b_dm) - b_dm;
    // m_b = v_c / v
    let b_vc = b_mb / v;
    bx_v -= cache.v_c.dot(&b_mb) / (v * v);
    b_mb = Vec2::zeros();
    let _ = b_mb;
    // v_c = R v_c_dq ; v_c_dq = v_ff − ωL J i_dq − v_L
    let b_vcdq = rot.transpose() * b_vc;
    let wl = if g.decoupling {
        2.0 * PI * g.grid_freq * g.l_dec
    } else {
        0.0
    };
    // J i = (−i_q, i_d); Jᵀ a = (a_y, −a_x)
    let mut b_idq = -Vec2::new(b_vcdq.y, -b_vcdq.x) * wl;
    let b_vl = -b_vcdq;
    // v_L = kp err + xi_i
    b_err += b_vl * g.kp_i;
    bc.xi_i += b_vl;
    // err = i_ref − i_dq
    let mut b_id = b_err.x;
    let b_iq = b_err.y;
    b_idq -= b_err;
    bx_i += rot * b_idq;
    b_id += b_iq * cache.iq_slope;

    // xi_vdc⁺ = xi_vdc + h ki e_v + aw (i_d − i_du)
    bc.xi_vdc += bar_next.xi_vdc;
    let mut b_ev = bar_next.xi_vdc * h * g.ki_vdc;
    b_id += g.anti_windup * bar_next.xi_vdc;
    let mut b_idu = -g.anti_windup * bar_next.xi_vdc;
    if cache.id_clamp == Clamp::Free {
        b_idu += b_id;
    }
    // i_du = kp e_v + xi_vdc + ff
    b_ev += g.kp_vdc * b_idu;
    bc.xi_vdc += b_idu;
    let mut b_tau = bar_tau;
    if g.power_feedforward {
        b_tau += b_idu * cache.w / cache.v_nom;
        bx_w += b_idu * cache.tau_m / cache.v_nom;
    }
    bx_v -= b_ev;

    // xi_w⁺ = xi_w + h ki e_w + aw (τ_m − τ_u)
    bc.xi_w += bar_next.xi_w;
    let mut b_ew = bar_next.xi_w * h * g.ki_w;
    b_tau += g.anti_windup * bar_next.xi_w;
    let mut b_tau_u = -g.anti_windup * bar_next.xi_w;
    match cache.tau_clamp {
        Clamp::Free => b_tau_u += b_tau,
        Clamp::High => bx_v += b_tau * g.tau_max * cache.derate_slope,
        Clamp::Low => {}
    }
    b_ew += g.kp_w * b_tau_u;
    bc.xi_w += b_tau_u;
    bx_w -= b_ew;

    (
        bc,
        PlantState {
            w: bx_w,
            v_dc: bx_v,
            i_g: bx_i,
        },
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SatCache {
    pub active: bool,
    norm: f64,
}

/// Radial projection onto the ball ‖m‖₂ ≤ 1/√2.
pub fn saturate_modulation(m: &Vec2) -> Vec2 {
    saturate_with_cache(m).0
}

pub fn saturate_with_cache(m: &Vec2) -> (Vec2, SatCache) {
    let n = m.norm();
    if n <= M_MAX {
        (*m, SatCache { active: false, norm: n })
    } else {
        (m * (M_MAX / n), SatCache { active: true, norm: n })
    }
}

/// Adjoint of the projection; on the boundary the interior branch is used.
pub fn saturate_vjp(cache: &SatCache, m: &Vec2, bar: &Vec2) -> Vec2 {
    if !cache.active {
        return *bar;
    }
    let n = cache.norm;
    let mh = m / n;
    (bar - mh * mh.dot(bar)) * (M_MAX / n)
}
