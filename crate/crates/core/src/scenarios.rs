//! Single-phase grid-fault scenarios, dataset sampling and disturbance sequences.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::plant::{clarke_abc_to_alphabeta, PerUnitBases, Plant, Vec2};
use crate::rpb::{current_disturbance, initial_disturbance, Eta, PVec};

/// A drop of phase C by `delta` over `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub delta: f64,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScenario {
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Nominal grid voltage norm in αβ (V).
    #[serde(default = "default_v_norm")]
    pub v_norm: f64,
    /// Grid frequency (Hz).
    #[serde(default = "default_freq")]
    pub freq: f64,
    /// Step time (s).
    #[serde(default = "default_h")]
    pub h: f64,
    /// Number of steps T; the rollout has T + 1 states.
    pub horizon: usize,
    /// Constant load torque (N·m).
    #[serde(default = "default_tau_l")]
    pub tau_l: f64,
    /// Initial closed-loop state; the cached equilibrium when absent.
    #[serde(default)]
    pub eta0: Option<Eta>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_v_norm() -> f64 {
    3150.0
}
fn default_freq() -> f64 {
    50.0
}
fn default_h() -> f64 {
    2.5e-4
}
fn default_tau_l() -> f64 {
    0.95 * 44356.0
}

impl FaultScenario {
    pub fn nominal(horizon: usize) -> Self {
        Self {
            faults: Vec::new(),
            v_norm: default_v_norm(),
            freq: default_freq(),
            h: default_h(),
            horizon,
            tau_l: default_tau_l(),
            eta0: None,
            seed: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.horizon as f64 * self.h
    }

    pub fn steps(&self, t: f64) -> usize {
        (t / self.h).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("scenario: {m}")));
        if !(self.h > 0.0 && self.v_norm > 0.0 && self.freq > 0.0) {
            return bad("step time, voltage and frequency must be positive".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step".into());
        }
        if !self.tau_l.is_finite() {
            return bad("load torque must be finite".into());
        }
        let end = self.duration();
        for f in &self.faults {
            if !(0.0..=1.0).contains(&f.delta) {
                return bad(format!("drop {} outside [0, 1]", f.delta));
            }
            if !(0.0 <= f.t_start && f.t_start < f.t_end && f.t_end <= end + 0.5 * self.h) {
                return bad(format!("fault window [{}, {}] outside [0, {end}]", f.t_start, f.t_end));
            }
        }
        if let Some(e) = &self.eta0 {
            if e.iter().any(|v| !v.is_finite()) {
                return bad("initial state must be finite".into());
            }
        }
        Ok(())
    }

    /// Drop applied at step `t`, if any fault is active.
    pub fn drop_at(&self, t: usize) -> f64 {
        self.faults
            .iter()
            .filter(|f| self.steps(f.t_start) <= t && t < self.steps(f.t_end))
            .map(|f| f.delta)
            .fold(0.0, f64::max)
    }

    pub fn in_fault(&self, t: usize) -> bool {
        self.faults
            .iter()
            .any(|f| self.steps(f.t_start) <= t && t < self.steps(f.t_end))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }
}

fn abc(sc: &FaultScenario, t: usize, delta: f64) -> Vec2 {
    let amp = sc.v_norm * (2.0f64 / 3.0).sqrt();
    let th = 2.0 * PI * sc.freq * t as f64 * sc.h;
    clarke_abc_to_alphabeta([
        amp * th.cos(),
        amp * (th - 2.0 * PI / 3.0).cos(),
        (1.0 - delta) * amp * (th + 2.0 * PI / 3.0).cos(),
    ])
}

/// Grid voltage in αβ at step `t`.
pub fn grid_voltage(sc: &FaultScenario, t: usize) -> Vec2 {
    abc(sc, t, sc.drop_at(t))
}

/// Grid voltage at step `t` without faults.
pub fn nominal_grid_voltage(sc: &FaultScenario, t: usize) -> Vec2 {
    abc(sc, t, 0.0)
}

/// Per-step signals of one rollout, all of length T + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSeq {
    pub eta0: Eta,
    pub tau_l: Vec<f64>,
    /// Nominal grid voltage v̄_g.
    pub v_nom: Vec<Vec2>,
    /// Measured grid voltage v̄_g + δv_g.
    pub v_act: Vec<Vec2>,
    /// h L⁻¹ δv_g, the current offset injected by step t → t + 1.
    pub offset: Vec<Vec2>,
}

impl DisturbanceSeq {
    pub fn len(&self) -> usize {
        self.v_nom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_nom.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    /// p_t: [η₀; 0] at t = 0, [0; h L⁻¹ δv_{g,t-1}] afterwards.
    pub fn p(&self, t: usize) -> PVec {
        if t == 0 {
            initial_disturbance(&self.eta0)
        } else {
            current_disturbance(&self.offset[t - 1])
        }
    }

    /// ℓ₂ norm of the disturbance sequence excluding p₀.
    pub fn fault_energy(&self) -> f64 {
        self.offset.iter().map(|o| o.norm_squared()).sum::<f64>().sqrt()
    }
}

pub fn build_disturbances(sc: &FaultScenario, plant: &Plant, eta0: &Eta) -> Result<DisturbanceSeq> {
    sc.validate()?;
    if (plant.h() - sc.h).abs() > 1e-15 * sc.h {
        return Err(Error::InvalidConfig(format!(
            "scenario step {} differs from plant step {}",
            sc.h,
            plant.h()
        )));
    }
    let n = sc.horizon + 1;
    let mut seq = DisturbanceSeq {
        eta0: *eta0,
        tau_l: vec![sc.tau_l; n],
        v_nom: Vec::with_capacity(n),
        v_act: Vec::with_capacity(n),
        offset: Vec::with_capacity(n),
    };
    for t in 0..n {
        let vn = nominal_grid_voltage(sc, t);
        let va = grid_voltage(sc, t);
        let dv = va - vn;
        seq.v_nom.push(vn);
        seq.v_act.push(va);
        seq.offset.push(plant.h_l_inv() * dv);
    }
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub t_start: f64,
    pub len_min: f64,
    pub len_max: f64,
    /// End-time jitter span, one grid period (s).
    pub end_jitter: f64,
    pub horizon_s: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            t_start: 0.05,
            len_min: 0.28,
            len_max: 0.32,
            end_jitter: 0.02,
            horizon_s: 0.6,
            delta_min: 0.0,
            delta_max: 1.0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_start >= 0.0
            && self.len_min > 0.0
            && self.len_min <= self.len_max
            && self.end_jitter >= 0.0
            && self.delta_min >= 0.0
            && self.delta_min <= self.delta_max
            && self.delta_max <= 1.0
            && self.t_start + self.len_max + self.end_jitter <= self.horizon_s;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("inconsistent dataset sampling ranges".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub seed: u64,
    pub scenarios: Vec<FaultScenario>,
}

/// RNG of scenario `i` under dataset seed `seed`.
pub fn scenario_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

pub fn sample_scenario(cfg: &SamplingConfig, h: f64, seed: u64, i: usize) -> FaultScenario {
    let mut rng = scenario_rng(seed, i);
    let delta = if cfg.delta_max > cfg.delta_min {
        rng.random_range(cfg.delta_min..cfg.delta_max)
    } else {
        cfg.delta_min
    };
    let len = if cfg.len_max > cfg.len_min {
        rng.random_range(cfg.len_min..cfg.len_max)
    } else {
        cfg.len_min
    };
    let jitter = if cfg.end_jitter > 0.0 {
        rng.random_range(0.0..cfg.end_jitter)
    } else {
        0.0
    };
    let mut sc = FaultScenario::nominal((cfg.horizon_s / h).round() as usize);
    sc.h = h;
    sc.faults.push(Fault {
        delta,
        t_start: cfg.t_start,
        t_end: cfg.t_start + len + jitter,
    });
    sc.seed = Some(seed.wrapping_add(i as u64));
    sc
}

pub fn sample_dataset(seed: u64, n: usize, cfg: &SamplingConfig, h: f64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    cfg.validate()?;
    let scenarios = (0..n).map(|i| sample_scenario(cfg, h, seed, i)).collect();
    Ok(Dataset { seed, scenarios })
}

/// Train / held-out partition: every scenario whose index falls in the last
/// `holdout` fraction of a seed-shuffled order is held out.
pub fn split(n: usize, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_5917);
    for k in (1..n).rev() {
        let j = Uniform::new_inclusive(0, k).expect("valid range").sample(&mut rng);
        idx.swap(k, j);
    }
    let n_hold = ((n as f64) * holdout).round() as usize;
    let n_hold = n_hold.min(n.saturating_sub(1));
    let held = idx.split_off(n - n_hold);
    (idx, held)
}

fn cache_key(seed: u64, n: usize, cfg: &SamplingConfig, h: f64) -> String {
    let desc = serde_json::json!({ "v": 1, "seed": seed, "n": n, "cfg": cfg, "h": h });
    let digest = Sha256::digest(desc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, seed: u64, n: usize, cfg: &SamplingConfig, h: f64) -> PathBuf {
    dir.join(format!("dataset-{}.json", &cache_key(seed, n, cfg, h)[..16]))
}

/// Loads a dataset from `dir` if an entry with the same content hash exists,
/// otherwise samples and stores it.
pub fn load_or_sample(dir: &Path, seed: u64, n: usize, cfg: &SamplingConfig, h: f64) -> Result<Dataset> {
    let path = cache_path(dir, seed, n, cfg, h);
    if let Ok(s) = std::fs::read_to_string(&path) {
        if let Ok(ds) = serde_json::from_str::<Dataset>(&s) {
            if ds.scenarios.len() == n && ds.seed == seed {
                return Ok(ds);
            }
        }
    }
    let ds = sample_dataset(seed, n, cfg, h)?;
    write_atomic(&path, serde_json::to_string(&ds)?.as_bytes())?;
    Ok(ds)
}

/// The two-fault evaluation scenario: a full drop of phase C for 600 ms, then
/// a 60 % drop for 400 ms, over a 4 s horizon.
pub fn test_scenario_paper() -> FaultScenario {
    let mut sc = FaultScenario::nominal(16_000);
    sc.faults = vec![
        Fault {
            delta: 1.0,
            t_start: 0.20125,
            t_end: 0.80125,
        },
        Fault {
            delta: 0.6,
            t_start: 2.0055,
            t_end: 2.4055,
        },
    ];
    sc
}

/// Random admissible perturbation of an equilibrium state.
pub fn perturb_eta<R: Rng>(eq: &Eta, b: &PerUnitBases, rng: &mut R) -> Eta {
    let mut u = |s: f64| rng.random_range(-s..=s);
    [
        eq[0] * (1.0 + u(0.03)),
        eq[1] * (1.0 + u(0.02)),
        eq[2] + u(0.2) * b.i_base,
        eq[3] + u(0.2) * b.i_base,
        eq[4] + u(0.05) * b.tau_base,
        eq[5] + u(0.1) * b.i_base,
        eq[6] + u(0.02) * b.v_base,
        eq[7] + u(0.02) * b.v_base,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantParams;

    #[test]
    fn balanced_norm_is_nominal() {
        let sc = FaultScenario::nominal(400);
        for t in 0..400 {
            assert!((grid_voltage(&sc, t).norm() - 3150.0).abs() < 1e-9);
        }
    }

    #[test]
    fn full_drop_removes_phase_c() {
        let mut sc = FaultScenario::nominal(400);
        sc.faults.push(Fault {
            delta: 1.0,
            t_start: 0.01,
            t_end: 0.05,
        });
        let amp = 3150.0 * (2.0f64 / 3.0).sqrt();
        for t in [40, 100, 199] {
            let th = 2.0 * PI * 50.0 * t as f64 * 2.5e-4;
            let want = clarke_abc_to_alphabeta([amp * th.cos(), amp * (th - 2.0 * PI / 3.0).cos(), 0.0]);
            assert!((grid_voltage(&sc, t) - want).norm() < 1e-9);
        }
        assert_eq!(grid_voltage(&sc, 200), nominal_grid_voltage(&sc, 200));
        assert_eq!(grid_voltage(&sc, 39), nominal_grid_voltage(&sc, 39));
    }

    #[test]
    fn disturbance_layout() {
        let plant = Plant::new(PlantParams::default()).unwrap();
        let mut sc = FaultScenario::nominal(400);
        let eta0 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let seq = build_disturbances(&sc, &plant, &eta0).unwrap();
        assert_eq!(seq.p(0)[..8], eta0);
        assert!((1..=400).all(|t| seq.p(t) == [0.0; 10]));

        sc.faults.push(Fault {
            delta: 0.4,
            t_start: 0.02,
            t_end: 0.04,
        });
        let seq = build_disturbances(&sc, &plant, &eta0).unwrap();
        for t in 1..=400 {
            let p = seq.p(t);
            assert!(p[..8].iter().all(|v| *v == 0.0));
            let dv = grid_voltage(&sc, t - 1) - nominal_grid_voltage(&sc, t - 1);
            let want = plant.h_l_inv() * dv;
            assert!((Vec2::new(p[8], p[9]) - want).norm() <= 1e-12 * (1.0 + want.norm()));
            assert_eq!(p[8] != 0.0 || p[9] != 0.0, sc.in_fault(t - 1) && dv.norm() > 0.0);
        }
        assert!(seq.fault_energy().is_finite() && seq.fault_energy() > 0.0);
    }

    #[test]
    fn dataset_is_reproducible_and_sized() {
        let cfg = SamplingConfig::default();
        let a = sample_dataset(11, 300, &cfg, 2.5e-4).unwrap();
        let b = sample_dataset(11, 300, &cfg, 2.5e-4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scenarios.len(), 300);
        for sc in &a.scenarios {
            sc.validate().unwrap();
            let f = sc.faults[0];
            let len = f.t_end - f.t_start;
            assert!((0.28..0.34).contains(&len));
        }
    }

    #[test]
    fn mean_drop_is_half() {
        let cfg = SamplingConfig::default();
        let n = 100_000;
        let mean = (0..n)
            .map(|i| sample_scenario(&cfg, 2.5e-4, 5, i).faults[0].delta)
            .sum::<f64>()
            / n as f64;
        assert!((0.49..=0.51).contains(&mean), "{mean}");
    }

    #[test]
    fn split_is_a_partition() {
        let (tr, ho) = split(50, 0.2, 3);
        assert_eq!((tr.len(), ho.len()), (40, 10));
        let mut all: Vec<usize> = tr.iter().chain(&ho).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn paper_scenario_faults() {
        let sc = test_scenario_paper();
        sc.validate().unwrap();
        assert_eq!(sc.faults[0].delta, 1.0);
        assert!((sc.faults[0].t_end - sc.faults[0].t_start - 0.6).abs() < 1e-12);
        assert_eq!(sc.faults[1].delta, 0.6);
        assert!((sc.faults[1].t_end - sc.faults[1].t_start - 0.4).abs() < 1e-12);
    }

    #[test]
    fn scenario_file_round_trip() {
        let sc = test_scenario_paper();
        assert_eq!(FaultScenario::from_toml(&sc.to_toml().unwrap()).unwrap(), sc);
    }

    #[test]
    fn dataset_cache_hits() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SamplingConfig::default();
        let a = load_or_sample(dir.path(), 4, 5, &cfg, 2.5e-4).unwrap();
        assert!(cache_path(dir.path(), 4, 5, &cfg, 2.5e-4).exists());
        let b = load_or_sample(dir.path(), 4, 5, &cfg, 2.5e-4).unwrap();
        assert_eq!(a, b);
    }
}
