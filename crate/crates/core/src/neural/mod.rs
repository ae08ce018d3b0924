//! Operator classes of the performance-boosting controller.

pub mod linalg;
pub mod m2;
pub mod minf;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::plant::PerUnitBases;
pub use m2::{M2Dims, M2Params, M2RealGrad, M2};
pub use minf::{MInfCache, MInfParams};

/// Free parameters θ of both factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpbParams {
    pub m2: M2Params,
    pub minf: MInfParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub m2_state: usize,
    pub m2_nonlinear: usize,
    pub delta: f64,
    pub mlp_hidden: Vec<usize>,
    pub output_bound: f64,
    /// Output-layer scale at initialization.
    pub init_output_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            m2_state: 22,
            m2_nonlinear: 22,
            delta: 0.01,
            mlp_hidden: vec![6, 10, 10],
            output_bound: 1.0,
            init_output_scale: 1e-2,
        }
    }
}

/// Input widths fixed by the signal layout.
pub const M2_INPUTS: usize = 15;
pub const MINF_INPUTS: usize = 16;
pub const OUTPUTS: usize = 2;

impl NetConfig {
    pub fn m2_dims(&self) -> M2Dims {
        M2Dims {
            n: self.m2_state,
            q: self.m2_nonlinear,
            inputs: M2_INPUTS,
            outputs: OUTPUTS,
        }
    }

    pub fn mlp_widths(&self) -> Vec<usize> {
        let mut w = vec![MINF_INPUTS];
        w.extend(&self.mlp_hidden);
        w.push(OUTPUTS);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.m2_state == 0 || self.m2_nonlinear == 0 || self.mlp_hidden.contains(&0) {
            return Err(Error::InvalidConfig("network widths must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig("delta must lie in (0, 1)".into()));
        }
        if !(self.output_bound > 0.0) {
            return Err(Error::InvalidConfig("output bound must be positive".into()));
        }
        Ok(())
    }
}

impl RpbParams {
    pub fn init(cfg: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m2 = M2Params::init(cfg.m2_dims(), cfg.delta, cfg.init_output_scale, &mut rng);
        let minf = MInfParams::init(
            &cfg.mlp_widths(),
            cfg.output_bound,
            cfg.init_output_scale,
            &mut rng,
        );
        Self { m2, minf }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            m2: M2Params::zeros(self.m2.dims(), self.m2.delta),
            minf: MInfParams::zeros(&self.minf.widths(), self.minf.bound),
        }
    }

    pub fn len(&self) -> usize {
        self.m2.blocks().iter().map(|b| b.len()).sum::<usize>()
            + self.minf.blocks().iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for b in self.m2.blocks() {
            v.extend_from_slice(b);
        }
        for b in self.minf.blocks() {
            v.extend_from_slice(b);
        }
        v
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.len(), "parameter length mismatch");
        let mut off = 0;
        for b in self.m2.blocks_mut() {
            b.copy_from_slice(&theta[off..off + b.len()]);
            off += b.len();
        }
        for b in self.minf.blocks_mut() {
            b.copy_from_slice(&theta[off..off + b.len()]);
            off += b.len();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.m2.validate()?;
        self.minf.validate()?;
        if self.m2.dims().inputs != M2_INPUTS
            || self.m2.dims().outputs != OUTPUTS
            || self.minf.widths().first() != Some(&MINF_INPUTS)
            || self.minf.widths().last() != Some(&OUTPUTS)
        {
            return Err(Error::InvalidConfig("operator input/output widths do not match the signal layout".into()));
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "afe-rpb-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk parameter container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub bases: PerUnitBases,
    pub params: RpbParams,
}

impl Checkpoint {
    pub fn new(params: RpbParams, bases: PerUnitBases, epoch: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            epoch,
            bases,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let c: Checkpoint = serde_json::from_str(&s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("not a parameter checkpoint: {}", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", c.version)));
        }
        c.params.validate()?;
        Ok(c)
    }
}
