//! Trial normalization, decision-window extraction and time masking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EegTrial;
use crate::error::{Error, Result};

/// Overlap/masking configuration for training-window extraction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Overlap ratio in `[0, 1)`: hop = round((1−alpha)·T).
    pub alpha: f64,
    /// Time-mask ratio in `[0, 1]`: the maximum masked run is round(beta·T).
    pub beta: f64,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} not in [0,1)", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} not in [0,1]", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSource {
    pub subject_id: usize,
    pub trial_id: usize,
    pub start_sample: usize,
}

/// A normalized channels×T slice with its labels.
#[derive(Debug, Clone)]
pub struct DecisionWindow {
    /// Row-major `[channel][sample]`, per-channel zero mean.
    pub x: Vec<f32>,
    pub n_channels: usize,
    pub t: usize,
    /// 0 = left, 1 = right.
    pub locus_label: usize,
    pub subject_label: usize,
    pub source: WindowSource,
}

/// Hop in samples for overlap ratio `alpha`: round-half-up((1−alpha)·T), ≥ 1.
pub fn hop_samples(t: usize, alpha: f64) -> usize {
    let hop = ((1.0 - alpha) * t as f64 + 0.5).floor() as usize;
    hop.max(1)
}

/// Closed-form number of windows of length `t` at hop `hop` in `l` samples.
pub fn window_count(l: usize, t: usize, hop: usize) -> usize {
    if t > l {
        0
    } else {
        (l - t) / hop + 1
    }
}

/// Divides each channel by its standard deviation over the whole trial.
///
/// Per-window mean subtraction is deferred to window extraction.
pub fn normalize_trial(trial: &EegTrial) -> Result<EegTrial> {
    let mut out = trial.clone();
    let n = trial.n_samples as f64;
    for c in 0..trial.n_channels {
        let row = trial.channel(c);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < 1e-12 {
            return Err(Error::arg(
                "normalize_trial",
                format!(
                    "channel {} of subject {} trial {} has zero variance",
                    c, trial.subject_id, trial.trial_id
                ),
            ));
        }
        let inv = (1.0 / std) as f32;
        for v in &mut out.data[c * trial.n_samples..(c + 1) * trial.n_samples] {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Extracts overlapping windows from the whole trial.
pub fn extract_windows(trial: &EegTrial, t: usize, alpha: f64) -> Result<Vec<DecisionWindow>> {
    extract_windows_range(trial, 0, trial.n_samples, t, alpha)
}

/// Extracts windows whose samples lie entirely within `[lo, hi)`.
///
/// Starts at `lo, lo+hop, …`; each window gets its per-channel mean subtracted.
pub fn extract_windows_range(
    trial: &EegTrial,
    lo: usize,
    hi: usize,
    t: usize,
    alpha: f64,
) -> Result<Vec<DecisionWindow>> {
    if hi > trial.n_samples || lo > hi {
        return Err(Error::arg(
            "extract_windows",
            format!("range {}..{} outside trial of {} samples", lo, hi, trial.n_samples),
        ));
    }
    let len = hi - lo;
    if t > len {
        return Err(Error::arg(
            "extract_windows",
            format!("window length {} exceeds available {} samples", t, len),
        ));
    }
    if t == 0 {
        return Err(Error::arg("extract_windows", "window length must be positive"));
    }
    let hop = hop_samples(t, alpha);
    let mut out = Vec::with_capacity(window_count(len, t, hop));
    let mut start = lo;
    while start + t <= hi {
        out.push(cut_window(trial, start, t));
        start += hop;
    }
    Ok(out)
}

/// Cuts one window at `start`, subtracting the per-channel mean.
pub fn cut_window(trial: &EegTrial, start: usize, t: usize) -> DecisionWindow {
    let mut x = Vec::with_capacity(trial.n_channels * t);
    for c in 0..trial.n_channels {
        let seg = &trial.channel(c)[start..start + t];
        let mean = seg.iter().map(|&v| v as f64).sum::<f64>() / t as f64;
        x.extend(seg.iter().map(|&v| v - mean as f32));
    }
    DecisionWindow {
        x,
        n_channels: trial.n_channels,
        t,
        locus_label: trial.attended_locus.label(),
        subject_label: trial.subject_id,
        source: WindowSource {
            subject_id: trial.subject_id,
            trial_id: trial.trial_id,
            start_sample: start,
        },
    }
}

/// SpecAugment-style time masking: zeroes a random run of columns.
///
/// The run length is uniform in `[0, round(beta·T))` and the start uniform in
/// `[0, T − len)`. The input window is left untouched.
pub fn time_mask(window: &DecisionWindow, beta: f64, rng: &mut impl Rng) -> DecisionWindow {
    let mut out = window.clone();
    mask_in_place(&mut out.x, window.n_channels, window.t, beta, rng);
    out
}

/// Masking applied directly to a `[channels][t]` buffer.
pub fn mask_in_place(x: &mut [f32], n_channels: usize, t: usize, beta: f64, rng: &mut impl Rng) {
    let tau = (beta * t as f64 + 0.5).floor() as usize;
    if tau == 0 {
        return;
    }
    let len = rng.gen_range(0..tau);
    if len == 0 {
        return;
    }
    let t0 = rng.gen_range(0..t - len);
    for c in 0..n_channels {
        for v in &mut x[c * t + t0..c * t + t0 + len] {
            *v = 0.0;
        }
    }
}

/// Windows for a list of split slices (see [`super::SplitSpec`]).
pub fn windows_for_slices(
    dataset: &super::Dataset,
    slices: &[super::Slice],
    t: usize,
    alpha: f64,
) -> Result<Vec<DecisionWindow>> {
    let mut out = Vec::new();
    for s in slices {
        let trial = &dataset.trials[s.trial_index];
        // slices shorter than one window contribute nothing
        if s.hi - s.lo >= t {
            out.extend(extract_windows_range(trial, s.lo, s.hi, t, alpha)?);
        }
    }
    Ok(out)
}
