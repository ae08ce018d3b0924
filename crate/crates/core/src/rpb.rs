//! IMC wiring of the performance-boosting controller: disturbance
//! reconstruction, the windowing gate, input assembly and the factorised
//! control law `u = M₂(ŝ) ⊙ M∞(s_∞)`.

use crate::control::{saturate_modulation, CtrlState};
use crate::error::{Error, Result};
use crate::neural::{M2RealGrad, MInfCache, MInfParams, RpbParams, M2};
use crate::plant::{Disturbances, PerUnitBases, PlantState, Vec2};

/// Closed-loop state [w, v_dc, i_α, i_β, ξ_w, ξ_vdc, ξ_d, ξ_q].
pub type Eta = [f64; 8];
/// Disturbance layout: [η block; current-offset block].
pub type PVec = [f64; 10];

pub fn eta_of(x: &PlantState, c: &CtrlState) -> Eta {
    [x.w, x.v_dc, x.i_g.x, x.i_g.y, c.xi_w, c.xi_vdc, c.xi_i.x, c.xi_i.y]
}

pub fn split_eta(eta: &Eta) -> (PlantState, CtrlState) {
    (
        PlantState {
            w: eta[0],
            v_dc: eta[1],
            i_g: Vec2::new(eta[2], eta[3]),
        },
        CtrlState {
            xi_w: eta[4],
            xi_vdc: eta[5],
            xi_i: Vec2::new(eta[6], eta[7]),
        },
    )
}

/// Per-unit scale of every slot of p.
pub fn p_scales(b: &PerUnitBases) -> PVec {
    [
        b.w_base, b.vdc_base, b.i_base, b.i_base, b.tau_base, b.i_base, b.v_base, b.v_base,
        b.i_base, b.i_base,
    ]
}

pub fn p_to_pu(p: &PVec, b: &PerUnitBases) -> PVec {
    let s = p_scales(b);
    std::array::from_fn(|k| p[k] / s[k])
}

/// p₀ = [η₀; 0].
pub fn initial_disturbance(eta0: &Eta) -> PVec {
    let mut p = [0.0; 10];
    p[..8].copy_from_slice(eta0);
    p
}

/// p = [0₈; i_offset].
pub fn current_disturbance(offset: &Vec2) -> PVec {
    let mut p = [0.0; 10];
    p[8] = offset.x;
    p[9] = offset.y;
    p
}

/// p̂ = η − η̂ with the current mismatch carried in the last two slots.
pub fn reconstruct_disturbance(eta: &Eta, eta_pred: &Eta) -> PVec {
    let mut p = [0.0; 10];
    for k in 0..8 {
        p[k] = eta[k] - eta_pred[k];
    }
    p[8] = p[2];
    p[9] = p[3];
    p[2] = 0.0;
    p[3] = 0.0;
    p
}

/// Adjoint of [`reconstruct_disturbance`]: returns η̄ (and −η̄ is the adjoint of η̂).
pub fn reconstruct_vjp(p_bar: &PVec) -> Eta {
    let mut e = [0.0; 8];
    e.copy_from_slice(&p_bar[..8]);
    e[2] = p_bar[8];
    e[3] = p_bar[9];
    e
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowState {
    pub sigma: bool,
    pub in_hold: bool,
    /// Last nonzero sign of v_g,β (0 before any).
    pub last_beta_sign: i8,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Gate update: on while ‖p‖ > ε, then held until v_g,β changes sign.
pub fn update_window(ws: &WindowState, p: &[f64], v_g_beta: f64, eps: f64) -> WindowState {
    let s = sign(v_g_beta);
    let crossed = s != 0 && ws.last_beta_sign != 0 && s != ws.last_beta_sign;
    let last_beta_sign = if s != 0 { s } else { ws.last_beta_sign };
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (sigma, in_hold) = if norm > eps || (ws.in_hold && !crossed) {
        (true, true)
    } else {
        (false, false)
    };
    WindowState {
        sigma,
        in_hold,
        last_beta_sign,
    }
}

pub const S2_DIM: usize = 15;
pub const SINF_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpbInputs {
    /// [σ·(v_dc, i_g, v_g); p̂], per unit.
    pub s2: [f64; S2_DIM],
    /// [τ_l, v̄_g, p̂, v_dc, i_g], per unit.
    pub sinf: [f64; SINF_DIM],
    pub sigma: bool,
}

impl RpbInputs {
    pub fn s_sigma(&self) -> &[f64] {
        &self.s2[..5]
    }
}

/// `d` carries the nominal grid voltage, `v_g` the measured one.
pub fn assemble_inputs(
    x: &PlantState,
    d: &Disturbances,
    v_g: &Vec2,
    p_hat_pu: &PVec,
    sigma: bool,
    b: &PerUnitBases,
) -> RpbInputs {
    let g = if sigma { 1.0 } else { 0.0 };
    let v_dc = x.v_dc / b.vdc_base;
    let i = x.i_g / b.i_base;
    let mut s2 = [0.0; S2_DIM];
    s2[..5].copy_from_slice(&[
        g * v_dc,
        g * i.x,
        g * i.y,
        g * v_g.x / b.v_base,
        g * v_g.y / b.v_base,
    ]);
    s2[5..].copy_from_slice(p_hat_pu);
    let mut sinf = [0.0; SINF_DIM];
    sinf[..3].copy_from_slice(&[d.tau_l / b.tau_base, d.v_g.x / b.v_base, d.v_g.y / b.v_base]);
    sinf[3..13].copy_from_slice(p_hat_pu);
    sinf[13..].copy_from_slice(&[v_dc, i.x, i.y]);
    RpbInputs { s2, sinf, sigma }
}

/// Adjoint of [`assemble_inputs`] with respect to the plant state and p̂ (per unit).
pub fn assemble_vjp(
    s2_bar: &[f64],
    sinf_bar: &[f64],
    sigma: bool,
    b: &PerUnitBases,
) -> (PlantState, PVec) {
    let g = if sigma { 1.0 } else { 0.0 };
    let v_dc = (g * s2_bar[0] + sinf_bar[13]) / b.vdc_base;
    let i = Vec2::new(g * s2_bar[1] + sinf_bar[14], g * s2_bar[2] + sinf_bar[15]) / b.i_base;
    let p: PVec = std::array::from_fn(|k| s2_bar[5 + k] + sinf_bar[3 + k]);
    (PlantState { w: 0.0, v_dc, i_g: i }, p)
}

/// m_g = sat(m_g^b + u).
pub fn interconnect(m_g_b: &Vec2, u: &Vec2) -> Vec2 {
    saturate_modulation(&(m_g_b + u))
}

/// Realized controller: M₂ matrices plus the MLP.
#[derive(Debug, Clone)]
pub struct Operator {
    pub m2: M2,
    pub minf: MInfParams,
}

/// Values of one control evaluation needed by the adjoint pass.
#[derive(Debug, Clone, Default)]
pub struct ControlCache {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub minf: MInfCache,
    pub y2: [f64; 2],
    pub yinf: [f64; 2],
}

/// Gradient accumulators for one rollout.
#[derive(Debug, Clone)]
pub struct OperatorGrad {
    pub m2: M2RealGrad,
    pub minf: MInfParams,
}

impl Operator {
    pub fn new(p: &RpbParams) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            m2: M2::realize(&p.m2),
            minf: p.minf.clone(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.m2.a.len()
    }

    pub fn zero_grad(&self) -> OperatorGrad {
        OperatorGrad {
            m2: M2RealGrad::zeros(self.m2.dims()),
            minf: MInfParams::zeros(&self.minf.widths(), self.minf.bound),
        }
    }

    /// u = y₂ ⊙ y∞; advances `z` in place.
    pub fn control(&self, inputs: &RpbInputs, z: &mut Vec<f64>) -> Result<(Vec2, ControlCache)> {
        let n = self.state_dim();
        let mut cache = ControlCache {
            z: z.clone(),
            w: vec![0.0; self.m2.c.rows],
            ..Default::default()
        };
        let mut z_next = vec![0.0; n];
        let mut y2 = [0.0; 2];
        self.m2.step(z, &inputs.s2, &mut cache.w, &mut z_next, &mut y2);
        self.minf.forward_cached(&inputs.sinf, &mut cache.minf);
        let yi = cache.minf.acts.last().expect("non-empty MLP");
        let yinf = [yi[0], yi[1]];
        let u = Vec2::new(y2[0] * yinf[0], y2[1] * yinf[1]);
        if !(u.iter().all(|v| v.is_finite()) && z_next.iter().all(|v| v.is_finite())) {
            return Err(Error::non_finite("performance-boosting output"));
        }
        *z = z_next;
        cache.y2 = y2;
        cache.yinf = yinf;
        Ok((u, cache))
    }

    /// Adjoint of [`Operator::control`]. `z_bar` holds z̄⁺ on entry and z̄ on exit.
    /// Returns (s̄₂, s̄∞).
    pub fn control_vjp(
        &self,
        inputs: &RpbInputs,
        cache: &ControlCache,
        u_bar: &Vec2,
        z_bar: &mut Vec<f64>,
        grad: &mut OperatorGrad,
    ) -> ([f64; S2_DIM], [f64; SINF_DIM]) {
        let y2_bar = [u_bar.x * cache.yinf[0], u_bar.y * cache.yinf[1]];
        let yi_bar = [u_bar.x * cache.y2[0], u_bar.y * cache.y2[1]];
        let mut s2_bar = [0.0; S2_DIM];
        let mut zb = vec![0.0; z_bar.len()];
        self.m2.step_vjp(
            &cache.z,
            &inputs.s2,
            &cache.w,
            &y2_bar,
            z_bar,
            &mut grad.m2,
            &mut zb,
            &mut s2_bar,
        );
        *z_bar = zb;
        let si = self.minf.vjp(&inputs.sinf, &cache.minf, &yi_bar, &mut grad.minf);
        let mut sinf_bar = [0.0; SINF_DIM];
        sinf_bar.copy_from_slice(&si);
        (s2_bar, sinf_bar)
    }

    /// Folds matrix gradients back onto the free parameters.
    pub fn param_grad(&self, p: &RpbParams, g: &OperatorGrad) -> RpbParams {
        RpbParams {
            m2: self.m2.realize_vjp(&p.m2, &g.m2),
            minf: g.minf.clone(),
        }
    }
}
