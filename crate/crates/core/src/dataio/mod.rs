//! Dataset container, normalization, decision-window extraction with
//! augmentation, split protocols, and a synthetic EEG generator.

mod manifest;
mod split;
mod synth;
mod windows;

pub use manifest::{load_dataset, save_dataset, Manifest, ManifestTrial};
pub use split::{
    split_every_trial, split_leave_speaker_out, split_leave_subject_out, Protocol, Slice, SplitSpec,
};
pub use synth::{synth_generate, SynthConfig, SynthGroundTruth};
pub use windows::{
    extract_windows, extract_windows_range, hop_samples, normalize_trial, time_mask, window_count,
    windows_for_slices, AugmentConfig, DecisionWindow, WindowSource,
};

use serde::{Deserialize, Serialize};

/// Attended spatial direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locus {
    Left,
    Right,
}

impl Locus {
    /// Class index: left = 0, right = 1.
    pub fn label(self) -> usize {
        match self {
            Locus::Left => 0,
            Locus::Right => 1,
        }
    }

    pub fn from_label(label: usize) -> Option<Self> {
        match label {
            0 => Some(Locus::Left),
            1 => Some(Locus::Right),
            _ => None,
        }
    }
}

impl std::fmt::Display for Locus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Locus::Left => write!(f, "left"),
            Locus::Right => write!(f, "right"),
        }
    }
}

/// One subject/trial recording: a channels×samples matrix plus labels.
#[derive(Debug, Clone)]
pub struct EegTrial {
    pub subject_id: usize,
    pub trial_id: usize,
    pub fs: u32,
    pub n_channels: usize,
    pub n_samples: usize,
    /// Row-major `[channel][sample]`.
    pub data: Vec<f32>,
    pub attended_locus: Locus,
    pub attended_speaker: u32,
    pub story: u32,
}

impl EegTrial {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }
}

/// A loaded dataset: shared channel naming plus the trials.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub fs: u32,
    pub channel_names: Vec<String>,
    pub trials: Vec<EegTrial>,
    /// Present for synthetic datasets only.
    pub ground_truth: Option<SynthGroundTruth>,
}

impl Dataset {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Applies [`normalize_trial`] to every trial in place.
    pub fn normalize(&mut self) -> crate::Result<()> {
        for t in self.trials.iter_mut() {
            *t = normalize_trial(t)?;
        }
        Ok(())
    }
}

/// The nine frontal channels used for the reduced-input model.
pub const NINE_CHANNELS: [&str; 9] =
    ["Fpz", "Fp1", "AF3", "F5", "Fp2", "AF4", "F6", "AF7", "AF8"];

/// Standard 64-channel BioSemi-style channel names.
pub fn standard_channel_names(n: usize) -> Vec<String> {
    const BIOSEMI64: [&str; 64] = [
        "Fp1", "AF7", "AF3", "F1", "F3", "F5", "F7", "FT7", "FC5", "FC3", "FC1", "C1", "C3", "C5",
        "T7", "TP7", "CP5", "CP3", "CP1", "P1", "P3", "P5", "P7", "P9", "PO7", "PO3", "O1", "Iz",
        "Oz", "POz", "Pz", "CPz", "Fpz", "Fp2", "AF8", "AF4", "AFz", "Fz", "F2", "F4", "F6", "F8",
        "FT8", "FC6", "FC4", "FC2", "FCz", "Cz", "C2", "C4", "C6", "T8", "TP8", "CP6", "CP4",
        "CP2", "P2", "P4", "P6", "P8", "P10", "PO8", "PO4", "O2",
    ];
    (0..n)
        .map(|i| {
            if i < 64 {
                BIOSEMI64[i].to_string()
            } else {
                format!("EX{}", i - 63)
            }
        })
        .collect()
}
