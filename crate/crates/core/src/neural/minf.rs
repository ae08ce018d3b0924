//! Bounded-output MLP: sigmoid hidden layers, `B·tanh` output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MInfParams {
    pub layers: Vec<Dense>,
    /// Output bound.
    pub bound: f64,
}

/// Per-layer post-activation values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct MInfCache {
    pub acts: Vec<Vec<f64>>,
}

pub const DEFAULT_WIDTHS: [usize; 5] = [16, 6, 10, 10, 2];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MInfParams {
    pub fn zeros(widths: &[usize], bound: f64) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                w: Mat::zeros(w[1], w[0]),
                b: vec![0.0; w[1]],
            })
            .collect();
        Self { layers, bound }
    }

    /// Uniform fan-in initialization with the output layer scaled by `out_scale`.
    pub fn init<R: Rng>(widths: &[usize], bound: f64, out_scale: f64, rng: &mut R) -> Self {
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let lim = 1.0 / (w[0] as f64).sqrt();
                let s = if k == last { out_scale } else { 1.0 };
                Dense {
                    w: Mat::uniform(w[1], w[0], lim, rng).scaled(s),
                    b: Mat::uniform(w[1], 1, lim, rng).scaled(s).data,
                }
            })
            .collect();
        Self { layers, bound }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut v = vec![self.layers[0].w.cols];
        v.extend(self.layers.iter().map(|l| l.w.rows));
        v
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.data.as_slice(), l.b.as_slice()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.data.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("MLP needs at least one layer".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].w.rows != pair[1].w.cols {
                return Err(Error::InvalidConfig("MLP layer widths do not chain".into()));
            }
        }
        if self.layers.iter().any(|l| l.b.len() != l.w.rows) {
            return Err(Error::InvalidConfig("MLP bias length mismatch".into()));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::InvalidConfig("MLP output bound must be positive".into()));
        }
        if self.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::non_finite("MLP parameters"));
        }
        Ok(())
    }

    pub fn forward(&self, s: &[f64]) -> Vec<f64> {
        let mut cache = MInfCache::default();
        self.forward_cached(s, &mut cache);
        cache.acts.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, s: &[f64], cache: &mut MInfCache) {
        cache.acts.clear();
        let last = self.layers.len() - 1;
        let mut h = s.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = l.b.clone();
            l.w.mv_acc(&h, &mut z);
            if k == last {
                z.iter_mut().for_each(|v| *v = self.bound * v.tanh());
            } else {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            cache.acts.push(z.clone());
            h = z;
        }
    }

    /// Adjoint of the forward pass. Accumulates into `grad` and returns the
    /// input adjoint.
    pub fn vjp(&self, s: &[f64], cache: &MInfCache, y_bar: &[f64], grad: &mut MInfParams) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut a_bar = y_bar.to_vec();
        for k in (0..=last).rev() {
            let out = &cache.acts[k];
            let z_bar: Vec<f64> = if k == last {
                a_bar
                    .iter()
                    .zip(out)
                    .map(|(b, y)| {
                        let t = y / self.bound;
                        b * self.bound * (1.0 - t * t)
                    })
                    .collect()
            } else {
                a_bar.iter().zip(out).map(|(b, y)| b * y * (1.0 - y)).collect()
            };
            let input: &[f64] = if k == 0 { s } else { &cache.acts[k - 1] };
            let g = &mut grad.layers[k];
            g.w.add_outer(&z_bar, input);
            g.b.iter_mut().zip(&z_bar).for_each(|(gb, z)| *gb += z);
            let mut prev = vec![0.0; input.len()];
            self.layers[k].w.mtv_acc(&z_bar, &mut prev);
            a_bar = prev;
        }
        a_bar
    }
}
