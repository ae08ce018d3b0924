//! Training loop for the performance-boosting operator.

pub mod loss;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{adam_step, batch_loss, rollout_and_grad, AdamConfig, AdamState, GradOptions};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::neural::{Checkpoint, NetConfig, RpbParams};
use crate::rollout::System;
use crate::scenarios::{load_or_sample, sample_dataset, split, DisturbanceSeq, SamplingConfig};

pub use loss::{barrier, noc_loss, LossConfig, LossTerms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dataset_seed: u64,
    pub dataset_size: usize,
    /// Held-out fraction of the dataset.
    pub holdout: f64,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Restart points per rollout for the backward pass (0: full tape).
    pub grad_checkpoint: usize,
    /// Assign `collapse_penalty` to collapsing rollouts instead of aborting.
    pub resilient: bool,
    pub collapse_penalty: f64,
    pub sampling: SamplingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 400,
            lr: 1e-3,
            batch_size: 8,
            dataset_seed: 2024,
            dataset_size: 50,
            holdout: 0.2,
            checkpoint_every: 50,
            grad_checkpoint: 0,
            resilient: false,
            collapse_penalty: 1e4,
            sampling: SamplingConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            epochs: 2600,
            dataset_size: 300,
            grad_checkpoint: 500,
            sampling: SamplingConfig {
                horizon_s: 0.75,
                ..SamplingConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.dataset_size < 2 {
            return Err(Error::InvalidConfig("batch and dataset must be non-empty".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::InvalidConfig("holdout fraction must lie in [0, 1)".into()));
        }
        self.sampling.validate()
    }

    fn grad_options(&self) -> GradOptions {
        GradOptions {
            checkpoint_every: (self.grad_checkpoint > 0).then_some(self.grad_checkpoint),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub min_v_dc: f64,
    pub violation_steps: usize,
    pub collapsed: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: RpbParams,
    pub initial_params: RpbParams,
    pub history: Vec<EpochLog>,
    pub train_idx: Vec<usize>,
    pub heldout_idx: Vec<usize>,
    pub episodes: Vec<DisturbanceSeq>,
}

/// Where training writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainIo {
    pub out_dir: Option<PathBuf>,
    pub dataset_cache: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "params.json";
pub const LOG_FILE: &str = "train_log.csv";

pub fn write_log(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in history {
        w.serialize(h).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Builds the disturbance sequences of the configured dataset.
pub fn build_episodes(sys: &System, cfg: &TrainConfig, io: &TrainIo) -> Result<Vec<DisturbanceSeq>> {
    let h = sys.plant.h();
    let ds = match &io.dataset_cache {
        Some(dir) => load_or_sample(dir, cfg.dataset_seed, cfg.dataset_size, &cfg.sampling, h)?,
        None => sample_dataset(cfg.dataset_seed, cfg.dataset_size, &cfg.sampling, h)?,
    };
    ds.scenarios.iter().map(|sc| sys.episode(sc)).collect()
}

/// Solves the finite-horizon problem with Adam over mini-batches.
pub fn train(
    sys: &System,
    net: &NetConfig,
    cfg: &TrainConfig,
    seed: u64,
    io: &TrainIo,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    let episodes = build_episodes(sys, cfg, io)?;
    let (train_idx, heldout_idx) = split(episodes.len(), cfg.holdout, cfg.dataset_seed);
    let initial = RpbParams::init(net, seed);
    let mut params = initial.clone();
    let mut theta = params.to_flat();
    let mut adam = AdamState::new(
        theta.len(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_0000);
    let penalty = cfg.resilient.then_some(cfg.collapse_penalty);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let mut log = EpochLog {
            epoch,
            mean_loss: 0.0,
            min_v_dc: f64::INFINITY,
            violation_steps: 0,
            collapsed: 0,
        };
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DisturbanceSeq> = chunk.iter().map(|&i| &episodes[i]).collect();
            let bg = rollout_and_grad(sys, &params, &batch, cfg.grad_options(), penalty)
                .map_err(|e| e.in_epoch(epoch))?;
            loss_sum += bg.loss * batch.len() as f64;
            count += batch.len();
            log.min_v_dc = log.min_v_dc.min(bg.stats.min_v_dc);
            log.violation_steps += bg.stats.violation_steps;
            log.collapsed += bg.collapsed.len();
            let (t, a) = adam_step(&theta, &bg.grad.to_flat(), &adam);
            theta = t;
            adam = a;
            params.set_flat(&theta);
        }
        log.mean_loss = loss_sum / count as f64;
        progress(&log);
        history.push(log);

        if let Some(dir) = &io.out_dir {
            let last = epoch + 1 == cfg.epochs;
            if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
                Checkpoint::new(params.clone(), sys.bases, epoch + 1).save(&dir.join(CHECKPOINT_FILE))?;
                write_log(&dir.join(LOG_FILE), &history)?;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        initial_params: initial,
        history,
        train_idx,
        heldout_idx,
        episodes,
    })
}

/// Mean loss of `params` over the selected episodes.
pub fn evaluate_loss(sys: &System, params: &RpbParams, episodes: &[DisturbanceSeq], idx: &[usize]) -> Result<f64> {
    let batch: Vec<&DisturbanceSeq> = idx.iter().map(|&i| &episodes[i]).collect();
    batch_loss(sys, params, &batch)
}

/// Window-`w` trailing mean of a loss history.
pub fn smoothed(history: &[EpochLog], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..history.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &history[lo..=i];
            s.iter().map(|h| h.mean_loss).sum::<f64>() / s.len() as f64
        })
        .collect()
}
