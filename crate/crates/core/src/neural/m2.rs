//! ℓ₂-stable recurrent operator.
//!
//! ```text
//! v  = C x + D s
//! w  = tanh(v)
//! x⁺ = a ⊙ x + B w + E s
//! y  = F x + G w
//! ```
//!
//! with `a = (1-δ) tanh(â)`, `C = Ĉ / (1 + ‖Ĉ‖)` and
//! `B = B̂ · ((1-ρ)/2) / (1 + ‖B̂‖)`, `ρ = maxᵢ|aᵢ|`. Every free parameter value
//! gives a state map with Lipschitz constant at most `1 - δ/2`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::linalg::{dot, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct M2Dims {
    /// Linear state.
    pub n: usize,
    /// Nonlinear channels.
    pub q: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Default for M2Dims {
    fn default() -> Self {
        Self {
            n: 22,
            q: 22,
            inputs: 15,
            outputs: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M2Params {
    pub delta: f64,
    pub a_hat: Vec<f64>,
    pub b_hat: Mat,
    pub c_hat: Mat,
    pub d: Mat,
    pub e: Mat,
    pub f: Mat,
    pub g: Mat,
}

impl M2Params {
    pub fn zeros(dims: M2Dims, delta: f64) -> Self {
        let M2Dims {
            n,
            q,
            inputs: m,
            outputs: p,
        } = dims;
        Self {
            delta,
            a_hat: vec![0.0; n],
            b_hat: Mat::zeros(n, q),
            c_hat: Mat::zeros(q, n),
            d: Mat::zeros(q, m),
            e: Mat::zeros(n, m),
            f: Mat::zeros(p, n),
            g: Mat::zeros(p, q),
        }
    }

    pub fn init<R: Rng>(dims: M2Dims, delta: f64, out_scale: f64, rng: &mut R) -> Self {
        let M2Dims {
            n,
            q,
            inputs: m,
            outputs: p,
        } = dims;
        let pole = Uniform::new(0.6, 0.98).expect("valid range");
        let a_hat = (0..n)
            .map(|_| (pole.sample(rng) / (1.0 - delta)).atanh())
            .collect();
        let sn = (1.0 / n as f64).sqrt();
        let sm = (1.0 / m as f64).sqrt();
        let sq = (1.0 / q as f64).sqrt();
        Self {
            delta,
            a_hat,
            b_hat: Mat::gaussian(n, q, sn, rng),
            c_hat: Mat::gaussian(q, n, sn, rng),
            d: Mat::gaussian(q, m, sm, rng),
            e: Mat::gaussian(n, m, sm, rng),
            f: Mat::gaussian(p, n, sn * out_scale, rng),
            g: Mat::gaussian(p, q, sq * out_scale, rng),
        }
    }

    /// Arbitrary draw over the whole free-parameter space.
    pub fn random<R: Rng>(dims: M2Dims, delta: f64, scale: f64, rng: &mut R) -> Self {
        let nrm = Normal::new(0.0, scale).expect("finite scale");
        let mut p = Self::zeros(dims, delta);
        for b in p.blocks_mut() {
            b.iter_mut().for_each(|v| *v = nrm.sample(rng));
        }
        p
    }

    pub fn dims(&self) -> M2Dims {
        M2Dims {
            n: self.a_hat.len(),
            q: self.c_hat.rows,
            inputs: self.d.cols,
            outputs: self.f.rows,
        }
    }

    pub fn blocks(&self) -> [&[f64]; 7] {
        [
            &self.a_hat,
            &self.b_hat.data,
            &self.c_hat.data,
            &self.d.data,
            &self.e.data,
            &self.f.data,
            &self.g.data,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.a_hat,
            &mut self.b_hat.data,
            &mut self.c_hat.data,
            &mut self.d.data,
            &mut self.e.data,
            &mut self.f.data,
            &mut self.g.data,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let shapes_ok = self.b_hat.rows == d.n
            && self.b_hat.cols == d.q
            && self.c_hat.cols == d.n
            && self.e.rows == d.n
            && self.e.cols == d.inputs
            && self.d.rows == d.q
            && self.f.cols == d.n
            && self.g.rows == d.outputs
            && self.g.cols == d.q;
        if !shapes_ok {
            return Err(Error::InvalidConfig("inconsistent recurrent operator shapes".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig("contraction margin must lie in (0, 1)".into()));
        }
        if self.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::non_finite("recurrent operator parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    s: f64,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl NormCache {
    fn of(m: &Mat) -> Self {
        let (s, u, v) = m.spectral();
        Self { s, u, v }
    }

    /// ∂‖M‖/∂M scaled by `k`, added into `out`.
    fn add_grad(&self, k: f64, out: &mut Mat) {
        let scaled: Vec<f64> = self.u.iter().map(|x| x * k).collect();
        out.add_outer(&scaled, &self.v);
    }
}

/// Realized operator matrices.
#[derive(Debug, Clone)]
pub struct M2 {
    pub a: Vec<f64>,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub e: Mat,
    pub f: Mat,
    pub g: Mat,
    rho: f64,
    rho_idx: usize,
    k_b: f64,
    nb: NormCache,
    nc: NormCache,
}

/// Gradient with respect to the realized matrices.
#[derive(Debug, Clone)]
pub struct M2RealGrad {
    pub a: Vec<f64>,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub e: Mat,
    pub f: Mat,
    pub g: Mat,
}

impl M2RealGrad {
    pub fn zeros(dims: M2Dims) -> Self {
        let z = M2Params::zeros(dims, 0.5);
        Self {
            a: z.a_hat,
            b: z.b_hat,
            c: z.c_hat,
            d: z.d,
            e: z.e,
            f: z.f,
            g: z.g,
        }
    }
}

impl M2 {
    pub fn realize(p: &M2Params) -> Self {
        let scale = 1.0 - p.delta;
        let a: Vec<f64> = p.a_hat.iter().map(|v| scale * v.tanh()).collect();
        let (rho_idx, rho) = a
            .iter()
            .map(|v| v.abs())
            .enumerate()
            .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let nb = NormCache::of(&p.b_hat);
        let nc = NormCache::of(&p.c_hat);
        let k_b = 0.5 * (1.0 - rho) / (1.0 + nb.s);
        Self {
            b: p.b_hat.scaled(k_b),
            c: p.c_hat.scaled(1.0 / (1.0 + nc.s)),
            d: p.d.clone(),
            e: p.e.clone(),
            f: p.f.clone(),
            g: p.g.clone(),
            a,
            rho,
            rho_idx,
            k_b,
            nb,
            nc,
        }
    }

    pub fn dims(&self) -> M2Dims {
        M2Dims {
            n: self.a.len(),
            q: self.c.rows,
            inputs: self.d.cols,
            outputs: self.f.rows,
        }
    }

    /// Spectral radius bound of the diagonal part.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Lipschitz constant of the state map, always below `1 - δ/2`.
    pub fn contraction(&self) -> f64 {
        self.rho + self.b.spectral_norm() * self.c.spectral_norm()
    }

    /// Structural ℓ₂-gain bound from zero initial state.
    pub fn gain_bound(&self) -> f64 {
        let lam = self.contraction();
        let (nb, nc, nd) = (self.b.spectral_norm(), self.c.spectral_norm(), self.d.spectral_norm());
        let (ne, nf, ng) = (self.e.spectral_norm(), self.f.spectral_norm(), self.g.spectral_norm());
        (nf + ng * nc) * (nb * nd + ne) / (1.0 - lam) + ng * nd
    }

    /// Steps after which the free response energy has contracted by `tol`.
    pub fn decay_horizon(&self, tol: f64) -> usize {
        (tol.ln() / (2.0 * self.contraction().ln())).ceil().max(1.0) as usize
    }

    /// One step. Writes `w` (nonlinear channel) and the next state.
    pub fn step(&self, x: &[f64], s: &[f64], w: &mut [f64], x_next: &mut [f64], y: &mut [f64]) {
        w.fill(0.0);
        self.c.mv_acc(x, w);
        self.d.mv_acc(s, w);
        w.iter_mut().for_each(|v| *v = v.tanh());
        for ((xn, a), xi) in x_next.iter_mut().zip(&self.a).zip(x) {
            *xn = a * xi;
        }
        self.b.mv_acc(w, x_next);
        self.e.mv_acc(s, x_next);
        y.fill(0.0);
        self.f.mv_acc(x, y);
        self.g.mv_acc(w, y);
    }

    /// Adjoint of [`M2::step`]. Accumulates matrix gradients and writes the
    /// adjoints of `x` and `s`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_vjp(
        &self,
        x: &[f64],
        s: &[f64],
        w: &[f64],
        y_bar: &[f64],
        x_next_bar: &[f64],
        grad: &mut M2RealGrad,
        x_bar: &mut [f64],
        s_bar: &mut [f64],
    ) {
        let q = w.len();
        let mut w_bar = vec![0.0; q];
        self.g.mtv_acc(y_bar, &mut w_bar);
        self.b.mtv_acc(x_next_bar, &mut w_bar);
        let v_bar: Vec<f64> = w_bar.iter().zip(w).map(|(b, w)| b * (1.0 - w * w)).collect();

        x_bar.fill(0.0);
        for ((xb, a), nb) in x_bar.iter_mut().zip(&self.a).zip(x_next_bar) {
            *xb = a * nb;
        }
        self.f.mtv_acc(y_bar, x_bar);
        self.c.mtv_acc(&v_bar, x_bar);
        s_bar.fill(0.0);
        self.d.mtv_acc(&v_bar, s_bar);
        self.e.mtv_acc(x_next_bar, s_bar);

        for ((ga, nb), xi) in grad.a.iter_mut().zip(x_next_bar).zip(x) {
            *ga += nb * xi;
        }
        grad.b.add_outer(x_next_bar, w);
        grad.e.add_outer(x_next_bar, s);
        grad.c.add_outer(&v_bar, x);
        grad.d.add_outer(&v_bar, s);
        grad.f.add_outer(y_bar, x);
        grad.g.add_outer(y_bar, w);
    }

    /// Maps matrix gradients back to the free parameters.
    pub fn realize_vjp(&self, p: &M2Params, g: &M2RealGrad) -> M2Params {
        let mut out = M2Params::zeros(p.dims(), p.delta);

        // C = Ĉ / (1 + s_C)
        let dc = 1.0 + self.nc.s;
        out.c_hat = g.c.scaled(1.0 / dc);
        let k = -g.c.frob_dot(&p.c_hat) / (dc * dc);
        self.nc.add_grad(k, &mut out.c_hat);

        // B = B̂ (1-ρ) / (2 (1 + s_B))
        let db = 1.0 + self.nb.s;
        out.b_hat = g.b.scaled(self.k_b);
        let gb = g.b.frob_dot(&p.b_hat);
        self.nb.add_grad(-gb * self.k_b / db, &mut out.b_hat);
        let rho_bar = -gb * 0.5 / db;

        let mut a_bar = g.a.clone();
        let ai = self.a[self.rho_idx];
        if ai != 0.0 {
            a_bar[self.rho_idx] += rho_bar * ai.signum();
        }
        let scale = 1.0 - p.delta;
        for ((o, ab), ah) in out.a_hat.iter_mut().zip(&a_bar).zip(&p.a_hat) {
            let t = ah.tanh();
            *o = ab * scale * (1.0 - t * t);
        }
        out.d = g.d.clone();
        out.e = g.e.clone();
        out.f = g.f.clone();
        out.g = g.g.clone();
        out
    }
}

/// Output energy Σ‖y‖² of a rollout from zero state.
pub fn response_energy(m: &M2, inputs: &[Vec<f64>]) -> Vec<f64> {
    let d = m.dims();
    let mut x = vec![0.0; d.n];
    let mut xn = vec![0.0; d.n];
    let mut w = vec![0.0; d.q];
    let mut y = vec![0.0; d.outputs];
    inputs
        .iter()
        .map(|s| {
            m.step(&x, s, &mut w, &mut xn, &mut y);
            std::mem::swap(&mut x, &mut xn);
            dot(&y, &y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draw(seed: u64) -> (M2Params, M2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = M2Params::random(M2Dims::default(), 0.01, 1.0, &mut rng);
        let m = M2::realize(&p);
        (p, m)
    }

    #[test]
    fn same_seed_same_init() {
        let a = M2Params::init(M2Dims::default(), 0.01, 1e-2, &mut ChaCha8Rng::seed_from_u64(3));
        let b = M2Params::init(M2Dims::default(), 0.01, 1e-2, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_state_zero_input_gives_zero_output() {
        let (_, m) = draw(1);
        let e = response_energy(&m, &vec![vec![0.0; 15]; 50]);
        assert!(e.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn contraction_respects_margin() {
        for seed in 0..50 {
            let (p, m) = draw(seed);
            assert!(m.contraction() <= 1.0 - p.delta / 2.0 + 1e-12);
        }
    }

    #[test]
    fn free_response_decays() {
        let (_, m) = draw(7);
        let mut x = vec![1.0; 22];
        let mut xn = vec![0.0; 22];
        let mut w = vec![0.0; 22];
        let mut y = vec![0.0; 2];
        let s = vec![0.0; 15];
        let mut last = f64::INFINITY;
        for _ in 0..20_000 {
            m.step(&x, &s, &mut w, &mut xn, &mut y);
            std::mem::swap(&mut x, &mut xn);
            last = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn realize_vjp_matches_finite_differences() {
        let (p, m) = draw(11);
        let d = p.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = {
            let mut g = M2RealGrad::zeros(d);
            let n = Normal::new(0.0, 1.0).unwrap();
            for b in [&mut g.b, &mut g.c, &mut g.d, &mut g.e, &mut g.f, &mut g.g] {
                b.data.iter_mut().for_each(|v| *v = n.sample(&mut rng));
            }
            g.a.iter_mut().for_each(|v| *v = n.sample(&mut rng));
            g
        };
        let obj = |p: &M2Params| {
            let m = M2::realize(p);
            dot(&m.a, &g.a)
                + m.b.frob_dot(&g.b)
                + m.c.frob_dot(&g.c)
                + m.d.frob_dot(&g.d)
                + m.e.frob_dot(&g.e)
                + m.f.frob_dot(&g.f)
                + m.g.frob_dot(&g.g)
        };
        let an = m.realize_vjp(&p, &g);
        let idx = Uniform::new(0usize, 484).unwrap();
        for blk in 0..3 {
            for _ in 0..8 {
                let k = idx.sample(&mut rng) % p.blocks()[blk].len();
                let mut pp = p.clone();
                let mut pm = p.clone();
                let hstep = 1e-6;
                pp.blocks_mut()[blk][k] += hstep;
                pm.blocks_mut()[blk][k] -= hstep;
                let fd = (obj(&pp) - obj(&pm)) / (2.0 * hstep);
                let a = an.blocks()[blk][k];
                assert!((fd - a).abs() <= 1e-6 * (1.0 + a.abs()), "block {blk} [{k}]: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn step_vjp_matches_finite_differences() {
        let (_, m) = draw(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut r = |k: usize| (0..k).map(|_| n.sample(&mut rng)).collect::<Vec<f64>>();
        let (x, s, yb, xb) = (r(22), r(15), r(2), r(22));
        let obj = |x: &[f64], s: &[f64]| {
            let (mut w, mut xn, mut y) = (vec![0.0; 22], vec![0.0; 22], vec![0.0; 2]);
            m.step(x, s, &mut w, &mut xn, &mut y);
            dot(&y, &yb) + dot(&xn, &xb)
        };
        let (mut w, mut xn, mut y) = (vec![0.0; 22], vec![0.0; 22], vec![0.0; 2]);
        m.step(&x, &s, &mut w, &mut xn, &mut y);
        let mut g = M2RealGrad::zeros(m.dims());
        let (mut x_bar, mut s_bar) = (vec![0.0; 22], vec![0.0; 15]);
        m.step_vjp(&x, &s, &w, &yb, &xb, &mut g, &mut x_bar, &mut s_bar);
        for k in 0..22 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fd = (obj(&xp, &s) - obj(&xm, &s)) / 2e-6;
            assert!((fd - x_bar[k]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
        for k in 0..15 {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp[k] += 1e-6;
            sm[k] -= 1e-6;
            let fd = (obj(&x, &sp) - obj(&x, &sm)) / 2e-6;
            assert!((fd - s_bar[k]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
        // matrix gradient: bilinear check on D
        let mut mp = m.clone();
        mp.d.data[17] += 1e-6;
        let mut mm = m.clone();
        mm.d.data[17] -= 1e-6;
        let o = |mm: &M2| {
            let (mut w, mut xn, mut y) = (vec![0.0; 22], vec![0.0; 22], vec![0.0; 2]);
            mm.step(&x, &s, &mut w, &mut xn, &mut y);
            dot(&y, &yb) + dot(&xn, &xb)
        };
        let fd = (o(&mp) - o(&mm)) / 2e-6;
        assert!((fd - g.d.data[17]).abs() < 1e-7 * (1.0 + fd.abs()));
    }
}
