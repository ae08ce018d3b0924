//! Forward-Euler average model of the back-to-back drive.
//!
//! ```text
//! w⁺    = (1 - hD/M) w + (h/M) τ_m - (h/M) τ_l
//! v_dc⁺ = (1 - hG/C) v_dc - (h/C) τ_m w / v_dc + (h/C) m_gᵀ i_g
//! i_g⁺  = (I - h L⁻¹ R) i_g + h L⁻¹ v_g - h L⁻¹ m_g v_dc + p
//! ```
//!
//! All two-dimensional quantities are power-invariant αβ coordinates.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Site};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Rated quantities used for per-unit normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerUnitBases {
    /// Grid voltage base (V).
    pub v_base: f64,
    /// Grid current base (A).
    pub i_base: f64,
    /// DC-link voltage base (V).
    pub vdc_base: f64,
    /// Shaft speed base (rad/s).
    pub w_base: f64,
    /// Torque base (N·m).
    pub tau_base: f64,
}

impl Default for PerUnitBases {
    fn default() -> Self {
        Self {
            v_base: 3150.0,
            i_base: 2222.0,
            vdc_base: 5000.0,
            w_base: 125.66,
            tau_base: 44356.0,
        }
    }
}

/// Physical quantity kinds that have a per-unit base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Speed,
    DcVoltage,
    GridVoltage,
    GridCurrent,
    Torque,
}

impl PerUnitBases {
    pub fn base(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Speed => self.w_base,
            Quantity::DcVoltage => self.vdc_base,
            Quantity::GridVoltage => self.v_base,
            Quantity::GridCurrent => self.i_base,
            Quantity::Torque => self.tau_base,
        }
    }

    pub fn to_pu(&self, q: Quantity, x: f64) -> f64 {
        x / self.base(q)
    }

    pub fn from_pu(&self, q: Quantity, x: f64) -> f64 {
        x * self.base(q)
    }

    pub fn to_pu2(&self, q: Quantity, x: Vec2) -> Vec2 {
        x / self.base(q)
    }

    pub fn from_pu2(&self, q: Quantity, x: Vec2) -> Vec2 {
        x * self.base(q)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v_base,
            self.i_base,
            self.vdc_base,
            self.w_base,
            self.tau_base,
        ];
        if all.iter().all(|b| b.is_finite() && *b > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "per-unit bases must be positive and finite".into(),
            ))
        }
    }
}

/// Drive constants as they appear in the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Shaft inertia M (kg·m²).
    pub inertia: f64,
    /// Viscous damping D (N·m·s/rad).
    pub damping: f64,
    /// DC-link capacitance (F).
    pub c_dc: f64,
    /// DC-link parallel conductance (S).
    pub g_dc: f64,
    /// Phase inductance matrix (H), row-major.
    pub l_g: [[f64; 2]; 2],
    /// Phase resistance matrix (Ω), row-major.
    pub r_g: [[f64; 2]; 2],
    /// Step time h (s).
    pub h: f64,
    /// A rollout aborts when v_dc falls to this value (V).
    pub v_dc_floor: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            inertia: 3000.0,
            damping: 3.5,
            c_dc: 0.02,
            g_dc: 1e-3,
            l_g: [[3e-4, 0.0], [0.0, 3e-4]],
            r_g: [[0.01, 0.0], [0.0, 0.01]],
            h: 2.5e-4,
            v_dc_floor: 100.0,
        }
    }
}

fn mat2(a: &[[f64; 2]; 2]) -> Mat2 {
    Mat2::new(a[0][0], a[0][1], a[1][0], a[1][1])
}

/// Validated plant with the discrete-time matrices precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub params: PlantParams,
    l_inv: Mat2,
    /// I - h L⁻¹ R
    a_i: Mat2,
    /// h L⁻¹
    b_i: Mat2,
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        let p = &params;
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("plant: {msg}")));
        let scalars = [p.inertia, p.damping, p.c_dc, p.g_dc, p.h, p.v_dc_floor];
        if scalars.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if p.h <= 0.0 {
            return bad("step time must be positive");
        }
        if p.inertia <= 0.0 || p.c_dc <= 0.0 {
            return bad("inertia and DC capacitance must be positive");
        }
        if p.damping < 0.0 || p.g_dc < 0.0 {
            return bad("damping and DC conductance must be non-negative");
        }
        let l = mat2(&p.l_g);
        let r = mat2(&p.r_g);
        if l.iter().chain(r.iter()).any(|x| !x.is_finite()) {
            return bad("non-finite inductance or resistance");
        }
        if l[(0, 0)] <= 0.0 || l[(1, 1)] <= 0.0 || r[(0, 0)] <= 0.0 || r[(1, 1)] <= 0.0 {
            return bad("diagonal inductance and resistance entries must be positive");
        }
        let Some(l_inv) = l.try_inverse() else {
            return bad("inductance matrix is singular");
        };
        if l_inv.iter().any(|x| !x.is_finite()) {
            return bad("inductance inverse is not finite");
        }
        let b_i = l_inv * p.h;
        let a_i = Mat2::identity() - b_i * r;
        Ok(Self {
            params,
            l_inv,
            a_i,
            b_i,
        })
    }

    pub fn h(&self) -> f64 {
        self.params.h
    }

    pub fn l_inv(&self) -> &Mat2 {
        &self.l_inv
    }

    /// h·L⁻¹, the map from a grid-voltage deviation to its one-step current offset.
    pub fn h_l_inv(&self) -> &Mat2 {
        &self.b_i
    }

    pub fn l_g(&self) -> Mat2 {
        mat2(&self.params.l_g)
    }

    /// Spectral norm of L⁻¹.
    pub fn l_inv_norm(&self) -> f64 {
        self.l_inv.singular_values().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Shaft speed (rad/s).
    pub w: f64,
    /// DC-link voltage (V).
    pub v_dc: f64,
    /// Grid current towards the converter, αβ (A).
    pub i_g: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantInputs {
    /// Motor torque (N·m).
    pub tau_m: f64,
    /// Grid-side modulation vector, αβ.
    pub m_g: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbances {
    /// Load torque (N·m).
    pub tau_l: f64,
    /// Grid voltage, αβ (V).
    pub v_g: Vec2,
}

/// One forward-Euler step. `p_phys` is added to the grid-current update.
pub fn step_plant(
    x: &PlantState,
    u: &PlantInputs,
    d: &Disturbances,
    plant: &Plant,
    p_phys: &Vec2,
) -> Result<PlantState> {
    let p = &plant.params;
    if !(x.v_dc > p.v_dc_floor) {
        return Err(Error::DcBusCollapse {
            v_dc: x.v_dc,
            site: Site::default(),
        });
    }
    let h = p.h;
    let w = (1.0 - h * p.damping / p.inertia) * x.w + h / p.inertia * u.tau_m
        - h / p.inertia * d.tau_l;
    let v_dc = (1.0 - h * p.g_dc / p.c_dc) * x.v_dc - h / p.c_dc * u.tau_m / x.v_dc * x.w
        + h / p.c_dc * u.m_g.dot(&x.i_g);
    let i_g = plant.a_i * x.i_g + plant.b_i * d.v_g - plant.b_i * u.m_g * x.v_dc + p_phys;
    if !(w.is_finite() && v_dc.is_finite() && i_g.iter().all(|c| c.is_finite())) {
        return Err(Error::non_finite("plant state"));
    }
    Ok(PlantState { w, v_dc, i_g })
}

/// Adjoint of [`step_plant`] with respect to state and inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantAdjoint {
    pub w: f64,
    pub v_dc: f64,
    pub i_g: Vec2,
    pub tau_m: f64,
    pub m_g: Vec2,
}

/// Vector-Jacobian product of one plant step given the adjoint of x⁺.
pub fn step_plant_vjp(
    x: &PlantState,
    u: &PlantInputs,
    plant: &Plant,
    bar_next: &PlantState,
) -> PlantAdjoint {
    let p = &plant.params;
    let h = p.h;
    let (wb, vb, ib) = (bar_next.w, bar_next.v_dc, bar_next.i_g);
    let v = x.v_dc;
    let hc = h / p.c_dc;
    let bt_ib = plant.b_i.transpose() * ib;

    let w = wb * (1.0 - h * p.damping / p.inertia) - vb * hc * u.tau_m / v;
    let v_dc = vb * ((1.0 - h * p.g_dc / p.c_dc) + hc * u.tau_m * x.w / (v * v))
        - (plant.b_i * u.m_g).dot(&ib);
    let i_g = u.m_g * (vb * hc) + plant.a_i.transpose() * ib;
    let tau_m = wb * h / p.inertia - vb * hc * x.w / v;
    let m_g = x.i_g * (vb * hc) - bt_ib * v;
    PlantAdjoint {
        w,
        v_dc,
        i_g,
        tau_m,
        m_g,
    }
}

/// Power-invariant Clarke transform abc → αβ.
pub fn clarke_abc_to_alphabeta(v_abc: [f64; 3]) -> Vec2 {
    let k = (2.0f64 / 3.0).sqrt();
    let s3 = 3.0f64.sqrt() / 2.0;
    let [a, b, c] = v_abc;
    Vec2::new(k * (a - 0.5 * b - 0.5 * c), k * (s3 * b - s3 * c))
}

/// Reactive power drawn from the grid, Q = v_β i_α − v_α i_β.
///
/// Equal to v_q i_d − v_d i_q in any synchronous frame.
pub fn reactive_power(v_g: &Vec2, i_g: &Vec2) -> f64 {
    v_g.y * i_g.x - v_g.x * i_g.y
}
