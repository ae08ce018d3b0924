//! Closed-loop rollout: plant, base controller, internal model and the
//! performance-boosting operator stepped together.

use crate::control::{
    base_step, saturate_with_cache, BaseCache, BaseController, BaseOutput, CtrlGains, CtrlState,
    References, SatCache,
};
use crate::error::{Error, Result};
use crate::plant::{
    step_plant, Disturbances, PerUnitBases, Plant, PlantInputs, PlantParams, PlantState, Vec2,
};
use crate::rpb::{
    assemble_inputs, eta_of, initial_disturbance, p_to_pu, reconstruct_disturbance, split_eta,
    update_window, ControlCache, Eta, Operator, PVec, RpbInputs, WindowState,
};
use crate::scenarios::{build_disturbances, nominal_grid_voltage, DisturbanceSeq, FaultScenario};
use crate::trainer::loss::{step_loss, LossConfig, LossTerms};

/// Base-loop run length used to find the nominal periodic steady state (s).
const SETTLE_TIME: f64 = 20.0;

/// Everything that stays fixed across rollouts.
#[derive(Debug, Clone)]
pub struct System {
    pub plant: Plant,
    pub ctrl: BaseController,
    pub refs: References,
    pub bases: PerUnitBases,
    pub loss: LossConfig,
    /// Window threshold on the per-unit ‖p̂‖.
    pub eps: f64,
    eq: (FaultScenario, Eta),
}

impl System {
    pub fn new(
        plant: PlantParams,
        gains: CtrlGains,
        refs: References,
        bases: PerUnitBases,
        loss: LossConfig,
        eps_rel: f64,
    ) -> Result<Self> {
        bases.validate()?;
        loss.validate()?;
        if !(eps_rel > 0.0) {
            return Err(Error::InvalidConfig("window threshold must be positive".into()));
        }
        let plant = Plant::new(plant)?;
        let ctrl = BaseController::new(gains, plant.h())?;
        let eps = eps_rel * plant.h() * plant.l_inv_norm() * bases.v_base / bases.i_base;
        let mut sys = Self {
            plant,
            ctrl,
            refs,
            bases,
            loss,
            eps,
            eq: (FaultScenario::nominal(1), [0.0; 8]),
        };
        let mut nominal = FaultScenario::nominal(1);
        nominal.h = sys.plant.h();
        nominal.freq = sys.ctrl.gains.grid_freq;
        sys.eq = (nominal.clone(), sys.compute_equilibrium(&nominal)?);
        Ok(sys)
    }

    pub fn with_defaults() -> Result<Self> {
        Self::new(
            PlantParams::default(),
            CtrlGains::default(),
            References::default(),
            PerUnitBases::default(),
            LossConfig::default(),
            0.01,
        )
    }

    /// Nominal-condition equilibrium at grid angle zero.
    pub fn equilibrium(&self) -> Eta {
        self.eq.1
    }

    /// Equilibrium for the grid and load of `sc`.
    pub fn equilibrium_for(&self, sc: &FaultScenario) -> Result<Eta> {
        let c = &self.eq.0;
        if sc.tau_l == c.tau_l && sc.v_norm == c.v_norm && sc.freq == c.freq && sc.h == c.h {
            Ok(self.eq.1)
        } else {
            self.compute_equilibrium(sc)
        }
    }

    fn compute_equilibrium(&self, sc: &FaultScenario) -> Result<Eta> {
        let period = (1.0 / (sc.freq * sc.h)).round() as usize;
        let periods = ((SETTLE_TIME / sc.h) as usize / period.max(1)).max(1);
        let n = periods * period.max(1);
        let w = self.refs.w_ref;
        let g = &self.ctrl.gains;
        let i_d = sc.tau_l * w / sc.v_norm;
        let v0 = nominal_grid_voltage(sc, 0);
        let mut x = PlantState {
            w,
            v_dc: self.refs.v_dc_ref,
            i_g: v0 / v0.norm() * i_d,
        };
        let mut c = CtrlState {
            xi_w: sc.tau_l + self.plant.params.damping * w,
            xi_vdc: 0.0,
            xi_i: Vec2::zeros(),
        };
        if !g.power_feedforward {
            c.xi_vdc = i_d;
        }
        for t in 0..n {
            let d = Disturbances {
                tau_l: sc.tau_l,
                v_g: nominal_grid_voltage(sc, t),
            };
            let (out, _) = base_step(&c, &x, &self.refs, &d, &self.ctrl)?;
            let (m, _) = saturate_with_cache(&out.m_g_b);
            x = step_plant(
                &x,
                &PlantInputs {
                    tau_m: out.tau_m,
                    m_g: m,
                },
                &d,
                &self.plant,
                &Vec2::zeros(),
            )?;
            c = out.next;
        }
        Ok(eta_of(&x, &c))
    }

    /// Disturbance sequence of a scenario, starting from its η₀ or the equilibrium.
    pub fn episode(&self, sc: &FaultScenario) -> Result<DisturbanceSeq> {
        let eta0 = match sc.eta0 {
            Some(e) => e,
            None => self.equilibrium_for(sc)?,
        };
        build_disturbances(sc, &self.plant, &eta0)
    }
}

/// Forward state carried from one step to the next; enough to restart a
/// rollout segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry {
    pub t: usize,
    pub x: PlantState,
    pub c: CtrlState,
    /// Operator state.
    pub z: Vec<f64>,
    pub ws: WindowState,
    /// Internal-model prediction of η_t.
    pub pred: Option<Eta>,
}

impl Carry {
    pub fn start(seq: &DisturbanceSeq, z_dim: usize) -> Self {
        let (x, c) = split_eta(&seq.eta0);
        Self {
            t: 0,
            x,
            c,
            z: vec![0.0; z_dim],
            ws: WindowState::default(),
            pred: None,
        }
    }
}

/// Plant-input part of a step (absent at t = T).
#[derive(Debug, Clone, Copy)]
pub struct Actuation {
    pub base: BaseOutput,
    pub cache: BaseCache,
    /// m_g^b + u before saturation.
    pub m_cmd: Vec2,
    pub m_g: Vec2,
    pub sat: SatCache,
}

/// Everything computed at one time step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    pub x: PlantState,
    pub c: CtrlState,
    pub v_g: Vec2,
    pub p: PVec,
    pub p_hat: PVec,
    pub sigma: bool,
    pub u: Vec2,
    pub inputs: Option<RpbInputs>,
    pub ctl: Option<ControlCache>,
    pub act: Option<Actuation>,
    pub loss: LossTerms,
    pub loss_grad: PlantState,
}

impl StepRecord {
    pub fn tau_m(&self) -> f64 {
        self.act.map_or(f64::NAN, |a| a.base.tau_m)
    }

    pub fn m_g_b(&self) -> Vec2 {
        self.act.map_or(Vec2::repeat(f64::NAN), |a| a.base.m_g_b)
    }

    pub fn m_g(&self) -> Vec2 {
        self.act.map_or(Vec2::repeat(f64::NAN), |a| a.m_g)
    }
}

/// One step from `carry`. Returns the record and the carry for t + 1 (none
/// after the last state).
pub fn forward_step(
    sys: &System,
    op: Option<&Operator>,
    seq: &DisturbanceSeq,
    carry: &Carry,
) -> Result<(StepRecord, Option<Carry>)> {
    let t = carry.t;
    let horizon = seq.horizon();
    let eta = eta_of(&carry.x, &carry.c);
    let p_hat = match &carry.pred {
        None => initial_disturbance(&eta),
        Some(pred) => reconstruct_disturbance(&eta, pred),
    };
    let p_hat_pu = p_to_pu(&p_hat, &sys.bases);
    let ws = update_window(&carry.ws, &p_hat_pu, seq.v_act[t].y, sys.eps);
    let d = Disturbances {
        tau_l: seq.tau_l[t],
        v_g: seq.v_nom[t],
    };
    let (loss, loss_grad) = step_loss(&carry.x, &sys.refs, &sys.loss, &sys.bases);

    let mut z = carry.z.clone();
    let (mut u, mut inputs, mut ctl) = (Vec2::zeros(), None, None);
    if let (Some(op), true) = (op, t < horizon) {
        let inp = assemble_inputs(&carry.x, &d, &seq.v_act[t], &p_hat_pu, ws.sigma, &sys.bases);
        let (uu, cache) = op.control(&inp, &mut z)?;
        u = uu;
        inputs = Some(inp);
        ctl = Some(cache);
    }

    let mut rec = StepRecord {
        t,
        x: carry.x,
        c: carry.c,
        v_g: seq.v_act[t],
        p: seq.p(t),
        p_hat,
        sigma: ws.sigma,
        u,
        inputs,
        ctl,
        act: None,
        loss,
        loss_grad,
    };
    if t == horizon {
        return Ok((rec, None));
    }

    let (base, cache) = base_step(&carry.c, &carry.x, &sys.refs, &d, &sys.ctrl)?;
    let m_cmd = base.m_g_b + u;
    let (m_g, sat) = saturate_with_cache(&m_cmd);
    let pin = PlantInputs {
        tau_m: base.tau_m,
        m_g,
    };
    let x_next = step_plant(&carry.x, &pin, &d, &sys.plant, &seq.offset[t])?;
    let x_pred = step_plant(&carry.x, &pin, &d, &sys.plant, &Vec2::zeros())?;
    rec.act = Some(Actuation {
        base,
        cache,
        m_cmd,
        m_g,
        sat,
    });
    let next = Carry {
        t: t + 1,
        x: x_next,
        c: base.next,
        z,
        ws,
        pred: Some(eta_of(&x_pred, &base.next)),
    };
    Ok((rec, Some(next)))
}

/// Runs `[carry.t, end)` and returns the records with the carry at `end`.
pub fn run_segment(
    sys: &System,
    op: Option<&Operator>,
    seq: &DisturbanceSeq,
    carry: Carry,
    end: usize,
    mut sink: impl FnMut(StepRecord),
) -> Result<Option<Carry>> {
    let mut cur = Some(carry);
    while let Some(c) = cur.take() {
        if c.t >= end {
            return Ok(Some(c));
        }
        let t = c.t;
        let (rec, next) = forward_step(sys, op, seq, &c).map_err(|e| e.at_step(t))?;
        sink(rec);
        cur = next;
    }
    Ok(None)
}

/// Full rollout of T + 1 steps.
pub fn simulate(sys: &System, op: Option<&Operator>, seq: &DisturbanceSeq) -> Result<Vec<StepRecord>> {
    let mut out = Vec::with_capacity(seq.len());
    let z_dim = op.map_or(0, |o| o.state_dim());
    run_segment(sys, op, seq, Carry::start(seq, z_dim), usize::MAX, |r| out.push(r))?;
    Ok(out)
}

/// Like [`simulate`] but keeps the records produced before a numerical failure.
pub fn simulate_partial(
    sys: &System,
    op: Option<&Operator>,
    seq: &DisturbanceSeq,
) -> (Vec<StepRecord>, Option<Error>) {
    let mut out = Vec::with_capacity(seq.len());
    let z_dim = op.map_or(0, |o| o.state_dim());
    let r = run_segment(sys, op, seq, Carry::start(seq, z_dim), usize::MAX, |r| out.push(r));
    (out, r.err())
}

/// Total loss of a record sequence.
pub fn total_loss(records: &[StepRecord]) -> f64 {
    records.iter().map(|r| r.loss.total()).sum()
}
