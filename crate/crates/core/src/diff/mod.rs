//! Reverse-mode differentiation of closed-loop rollouts.
//!
//! The forward pass stores one [`StepRecord`] per step (the tape). The
//! backward pass walks it in reverse, chaining the hand-written adjoints of
//! the plant, the base controller, the saturation, the operator and the
//! internal-model reconstruction. With checkpointing only a [`Carry`] is kept
//! every `k` steps and each segment is recomputed before its reverse sweep.

pub mod adam;

use crate::control::{base_step_vjp, saturate_vjp, CtrlState};
use crate::error::{Error, Result};
use crate::neural::RpbParams;
use crate::plant::{step_plant_vjp, PlantInputs, PlantState, Vec2};
use crate::rollout::{run_segment, Carry, StepRecord, System};
use crate::rpb::{assemble_vjp, p_scales, reconstruct_vjp, split_eta, Operator, OperatorGrad};
use crate::scenarios::DisturbanceSeq;

pub use adam::{adam_step, AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradOptions {
    /// Keep a restart point every this many steps instead of the full tape.
    pub checkpoint_every: Option<usize>,
}

/// Adjoints flowing from step t + 1 back into step t.
struct Pending {
    x: PlantState,
    c: CtrlState,
    z: Vec<f64>,
}

fn add_state(a: &mut PlantState, b: &PlantState) {
    a.w += b.w;
    a.v_dc += b.v_dc;
    a.i_g += b.i_g;
}

fn add_ctrl(a: &mut CtrlState, b: &CtrlState) {
    a.xi_w += b.xi_w;
    a.xi_vdc += b.xi_vdc;
    a.xi_i += b.xi_i;
}

/// Reverse sweep over one step. `pend` holds the adjoint of η_{t+1} (actual
/// plus internal-model prediction) and z_{t+1}; on return it holds those of
/// step t.
fn reverse_step(sys: &System, op: &Operator, rec: &StepRecord, pend: &mut Pending, grad: &mut OperatorGrad) {
    let mut xb = rec.loss_grad;
    let mut cb = CtrlState::default();
    let mut u_bar = Vec2::zeros();

    if let Some(act) = &rec.act {
        let pin = PlantInputs {
            tau_m: act.base.tau_m,
            m_g: act.m_g,
        };
        let adj = step_plant_vjp(&rec.x, &pin, &sys.plant, &pend.x);
        xb.w += adj.w;
        xb.v_dc += adj.v_dc;
        xb.i_g += adj.i_g;
        let m_cmd_bar = saturate_vjp(&act.sat, &act.m_cmd, &adj.m_g);
        u_bar = m_cmd_bar;
        let (c_in, x_in) = base_step_vjp(&act.cache, &sys.ctrl, &pend.c, adj.tau_m, &m_cmd_bar);
        add_state(&mut xb, &x_in);
        add_ctrl(&mut cb, &c_in);
    }

    let mut pred_bar = [0.0; 8];
    if let (Some(inputs), Some(ctl)) = (&rec.inputs, &rec.ctl) {
        let (s2b, sib) = op.control_vjp(inputs, ctl, &u_bar, &mut pend.z, grad);
        let (x_in, p_pu_bar) = assemble_vjp(&s2b, &sib, inputs.sigma, &sys.bases);
        add_state(&mut xb, &x_in);
        if rec.t > 0 {
            let sc = p_scales(&sys.bases);
            let p_bar: [f64; 10] = std::array::from_fn(|k| p_pu_bar[k] / sc[k]);
            let eb = reconstruct_vjp(&p_bar);
            let (ex, ec) = split_eta(&eb);
            add_state(&mut xb, &ex);
            add_ctrl(&mut cb, &ec);
            pred_bar = eb.map(|v| -v);
        }
    }

    // η_t and its internal-model prediction share the same dependence on step t - 1.
    let (px, pc) = split_eta(&pred_bar);
    add_state(&mut xb, &px);
    add_ctrl(&mut cb, &pc);
    pend.x = xb;
    pend.c = cb;
}

/// Constraint statistics gathered during the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutStats {
    pub min_v_dc: f64,
    /// Steps with an active barrier term.
    pub violation_steps: usize,
}

impl Default for RolloutStats {
    fn default() -> Self {
        Self {
            min_v_dc: f64::INFINITY,
            violation_steps: 0,
        }
    }
}

impl RolloutStats {
    fn record(&mut self, r: &StepRecord) {
        self.min_v_dc = self.min_v_dc.min(r.x.v_dc);
        if r.loss.vdc > 0.0 || r.loss.ig > 0.0 {
            self.violation_steps += 1;
        }
    }

    pub fn merge(&mut self, o: &RolloutStats) {
        self.min_v_dc = self.min_v_dc.min(o.min_v_dc);
        self.violation_steps += o.violation_steps;
    }
}

/// Loss of one rollout; accumulates its parameter-space gradient into `grad`.
pub fn sample_loss_and_grad(
    sys: &System,
    op: &Operator,
    seq: &DisturbanceSeq,
    opts: GradOptions,
    grad: &mut OperatorGrad,
) -> Result<(f64, RolloutStats)> {
    let n = seq.len();
    let k = opts.checkpoint_every.unwrap_or(n).max(1);
    let mut carries = Vec::with_capacity(n / k + 1);
    let mut carry = Carry::start(seq, op.state_dim());
    let mut loss = 0.0;
    let mut stats = RolloutStats::default();
    let mut tape: Vec<StepRecord> = Vec::new();
    let keep_all = k >= n;

    // forward
    loop {
        carries.push(carry.clone());
        let end = carry.t + k;
        let next = run_segment(sys, Some(op), seq, carry, end, |r| {
            loss += r.loss.total();
            stats.record(&r);
            if keep_all {
                tape.push(r);
            }
        })?;
        match next {
            Some(c) => carry = c,
            None => break,
        }
    }
    if !loss.is_finite() {
        return Err(Error::non_finite("rollout loss"));
    }

    // backward
    let mut pend = Pending {
        x: PlantState {
            w: 0.0,
            v_dc: 0.0,
            i_g: Vec2::zeros(),
        },
        c: CtrlState::default(),
        z: vec![0.0; op.state_dim()],
    };
    for start in carries.into_iter().rev() {
        let seg = if keep_all {
            std::mem::take(&mut tape)
        } else {
            let mut seg = Vec::with_capacity(k);
            let end = start.t + k;
            run_segment(sys, Some(op), seq, start, end, |r| seg.push(r))?;
            seg
        };
        for rec in seg.iter().rev() {
            reverse_step(sys, op, rec, &mut pend, grad);
        }
    }
    Ok((loss, stats))
}

/// Outcome of one batch evaluation.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    /// Mean loss over the batch.
    pub loss: f64,
    pub grad: RpbParams,
    /// Per-sample losses in batch order.
    pub sample_losses: Vec<f64>,
    /// Samples that collapsed (resilient mode only).
    pub collapsed: Vec<usize>,
    pub stats: RolloutStats,
}

/// Mean loss over `batch` and its gradient with respect to θ.
///
/// With `collapse_penalty` set, a rollout that fails numerically contributes
/// that loss and no gradient; otherwise the error is returned tagged with the
/// sample index.
pub fn rollout_and_grad(
    sys: &System,
    params: &RpbParams,
    batch: &[&DisturbanceSeq],
    opts: GradOptions,
    collapse_penalty: Option<f64>,
) -> Result<BatchGrad> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let op = Operator::new(params)?;
    let mut g = op.zero_grad();
    let mut losses = Vec::with_capacity(batch.len());
    let mut collapsed = Vec::new();
    let mut stats = RolloutStats::default();
    for (i, seq) in batch.iter().enumerate() {
        let mut gi = op.zero_grad();
        match sample_loss_and_grad(sys, &op, seq, opts, &mut gi) {
            Ok((l, st)) => {
                add_grad(&mut g, &gi);
                losses.push(l);
                stats.merge(&st);
            }
            Err(e) if e.is_numerical() && collapse_penalty.is_some() => {
                collapsed.push(i);
                losses.push(collapse_penalty.unwrap_or_default());
            }
            Err(e) => return Err(e.in_scenario(i)),
        }
    }
    let b = batch.len() as f64;
    let mut grad = op.param_grad(params, &g);
    let mut flat = grad.to_flat();
    flat.iter_mut().for_each(|v| *v /= b);
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("gradient"));
    }
    grad.set_flat(&flat);
    Ok(BatchGrad {
        loss: losses.iter().sum::<f64>() / b,
        grad,
        sample_losses: losses,
        collapsed,
        stats,
    })
}

fn add_grad(a: &mut OperatorGrad, b: &OperatorGrad) {
    let add = |x: &mut [f64], y: &[f64]| x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
    add(&mut a.m2.a, &b.m2.a);
    for (x, y) in [
        (&mut a.m2.b, &b.m2.b),
        (&mut a.m2.c, &b.m2.c),
        (&mut a.m2.d, &b.m2.d),
        (&mut a.m2.e, &b.m2.e),
        (&mut a.m2.f, &b.m2.f),
        (&mut a.m2.g, &b.m2.g),
    ] {
        add(&mut x.data, &y.data);
    }
    for (x, y) in a.minf.blocks_mut().into_iter().zip(b.minf.blocks()) {
        add(x, y);
    }
}

/// Mean loss only.
pub fn batch_loss(sys: &System, params: &RpbParams, batch: &[&DisturbanceSeq]) -> Result<f64> {
    let op = Operator::new(params)?;
    let mut total = 0.0;
    for (i, seq) in batch.iter().enumerate() {
        let mut l = 0.0;
        run_segment(sys, Some(&op), seq, Carry::start(seq, op.state_dim()), usize::MAX, |r| {
            l += r.loss.total()
        })
        .map_err(|e| e.in_scenario(i))?;
        total += l;
    }
    Ok(total / batch.len() as f64)
}

/// Fingerprint of every discrete branch taken in a rollout: clamps,
/// saturation, active barriers and the window gate. Equal fingerprints mean
/// the loss is smooth along the segment between two parameter values.
pub fn branch_signature(sys: &System, params: &RpbParams, seq: &DisturbanceSeq) -> Result<Vec<u8>> {
    let op = Operator::new(params)?;
    let mut sig = Vec::with_capacity(seq.len());
    run_segment(sys, Some(&op), seq, Carry::start(seq, op.state_dim()), usize::MAX, |r| {
        let mut b = r.act.map_or(0u8, |a| a.cache.branch_bits()) as u16;
        b |= (r.sigma as u16) << 8;
        b |= ((r.loss.vdc > 0.0) as u16) << 9;
        b |= ((r.loss.ig > 0.0) as u16) << 10;
        sig.extend_from_slice(&b.to_le_bytes());
    })?;
    Ok(sig)
}
