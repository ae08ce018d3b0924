//! One-sided amplitude spectra of trace columns.

use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest analysis window in grid periods.
pub const MIN_PERIODS: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    None,
    #[default]
    Hann,
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "rect" => Ok(Window::None),
            "hann" => Ok(Window::Hann),
            _ => Err(Error::InvalidConfig(format!("unknown window {s:?}"))),
        }
    }
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::None => vec![1.0; n],
            // periodic Hann
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin frequencies (Hz), spacing 1 / window length.
    pub freq: Vec<f64>,
    /// Amplitude of each bin, scaled so a sinusoid on a bin reads its amplitude.
    pub mag: Vec<f64>,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.freq.get(1).copied().unwrap_or(0.0)
    }

    pub fn bin(&self, f: f64) -> usize {
        let df = self.resolution();
        if df <= 0.0 {
            return 0;
        }
        ((f / df).round().max(0.0) as usize).min(self.freq.len() - 1)
    }

    /// Amplitude of the bin nearest `f`.
    pub fn at(&self, f: f64) -> f64 {
        self.mag[self.bin(f)]
    }

    /// Largest non-DC bin as (frequency, amplitude).
    pub fn peak(&self) -> (f64, f64) {
        let mut best = (0.0, f64::NEG_INFINITY);
        for (f, m) in self.freq.iter().zip(&self.mag).skip(1) {
            if *m > best.1 {
                best = (*f, *m);
            }
        }
        best
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["freq_hz", "magnitude"]).map_err(err)?;
        for (f, m) in self.freq.iter().zip(&self.mag) {
            w.write_record([f.to_string(), m.to_string()]).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Spectrum of `signal` (sampled every `h` seconds from t = 0) over
/// `[t_a, t_b)`. The window must span at least five periods of `grid_freq`.
pub fn spectrum(signal: &[f64], h: f64, t_a: f64, t_b: f64, window: Window, grid_freq: f64) -> Result<Spectrum> {
    if !(h > 0.0 && grid_freq > 0.0 && t_a >= 0.0 && t_b > t_a) {
        return Err(Error::InvalidConfig(format!("bad spectrum window [{t_a}, {t_b})")));
    }
    let i0 = (t_a / h).round() as usize;
    let i1 = (t_b / h).round() as usize;
    let n = i1.saturating_sub(i0);
    let need = (MIN_PERIODS / (grid_freq * h)).round() as usize;
    if n < need {
        return Err(Error::WindowTooShort {
            span: n as f64 * h,
            required: MIN_PERIODS / grid_freq,
        });
    }
    if i1 > signal.len() {
        return Err(Error::InvalidConfig(format!(
            "spectrum window ends at {t_b} s, past the trace end {} s",
            signal.len() as f64 * h
        )));
    }
    let seg = &signal[i0..i1];
    if seg.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("spectrum input"));
    }
    let wts = window.weights(n);
    let gain: f64 = wts.iter().sum();
    let mut buf: Vec<Complex<f64>> = seg.iter().zip(&wts).map(|(x, w)| Complex::new(x * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let df = 1.0 / (n as f64 * h);
    let bins = n / 2 + 1;
    let mut freq = Vec::with_capacity(bins);
    let mut mag = Vec::with_capacity(bins);
    for (k, c) in buf.iter().take(bins).enumerate() {
        let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
        freq.push(k as f64 * df);
        mag.push(one_sided * c.norm() / gain);
    }
    Ok(Spectrum { freq, mag })
}
