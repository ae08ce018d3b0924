use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(theta: &[f64], grad: &[f64], st: &AdamState) -> (Vec<f64>, AdamState) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), st.m.len());
    let c = st.cfg;
    let step = st.step + 1;
    let b1t = 1.0 - c.beta1.powi(step as i32);
    let b2t = 1.0 - c.beta2.powi(step as i32);
    let mut m = st.m.clone();
    let mut v = st.v.clone();
    let mut out = theta.to_vec();
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        let mh = m[i] / b1t;
        let vh = v[i] / b2t;
        out[i] -= c.lr * mh / (vh.sqrt() + c.eps);
    }
    (out, AdamState { cfg: c, m, v, step })
}
