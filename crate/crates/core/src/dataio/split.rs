//! The three split protocols.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    EveryTrial,
    LeaveOneSpeakerOut,
    LeaveOneSubjectOut,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::EveryTrial => write!(f, "every-trial"),
            Protocol::LeaveOneSpeakerOut => write!(f, "leave-one-speaker-out"),
            Protocol::LeaveOneSubjectOut => write!(f, "leave-one-subject-out"),
        }
    }
}

/// A contiguous sample range of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub trial_index: usize,
    pub lo: usize,
    pub hi: usize,
}

/// Train/val/test partitions as disjoint trial sample-ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub protocol: Protocol,
    /// Held-out speaker or subject id, when applicable.
    pub held_out: Option<u32>,
    pub train: Vec<Slice>,
    pub val: Vec<Slice>,
    pub test: Vec<Slice>,
}

impl SplitSpec {
    pub fn trial_ids(slices: &[Slice]) -> Vec<usize> {
        let mut v: Vec<usize> = slices.iter().map(|s| s.trial_index).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Per trial: first 70% train, next 15% val, final 15% test.
pub fn split_every_trial(dataset: &Dataset) -> SplitSpec {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (i, t) in dataset.trials.iter().enumerate() {
        let l = t.n_samples;
        let b1 = l * 70 / 100;
        let b2 = l * 85 / 100;
        train.push(Slice { trial_index: i, lo: 0, hi: b1 });
        val.push(Slice { trial_index: i, lo: b1, hi: b2 });
        test.push(Slice { trial_index: i, lo: b2, hi: l });
    }
    SplitSpec { protocol: Protocol::EveryTrial, held_out: None, train, val, test }
}

fn whole(trial_index: usize, dataset: &Dataset) -> Slice {
    Slice { trial_index, lo: 0, hi: dataset.trials[trial_index].n_samples }
}

/// Splits the remaining trials 85/15 into train/val at trial granularity with
/// a seeded shuffle, after the given trials were designated as test.
fn leave_out(
    dataset: &Dataset,
    protocol: Protocol,
    held_out: u32,
    test_idx: Vec<usize>,
    seed: u64,
) -> Result<SplitSpec> {
    if test_idx.is_empty() {
        return Err(Error::Config(format!("{}: empty test partition for held-out {}", protocol, held_out)));
    }
    let mut rest: Vec<usize> =
        (0..dataset.trials.len()).filter(|i| !test_idx.contains(i)).collect();
    if rest.len() < 2 {
        return Err(Error::Config(format!(
            "{}: need at least 2 remaining trials for a train/val split, have {}",
            protocol,
            rest.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let n_val = ((0.15 * rest.len() as f64).round() as usize).clamp(1, rest.len() - 1);
    let (val_idx, train_idx) = rest.split_at(n_val);
    Ok(SplitSpec {
        protocol,
        held_out: Some(held_out),
        train: train_idx.iter().map(|&i| whole(i, dataset)).collect(),
        val: val_idx.iter().map(|&i| whole(i, dataset)).collect(),
        test: test_idx.into_iter().map(|i| whole(i, dataset)).collect(),
    })
}

/// Test = all trials whose subject attended the given speaker (1 or 2).
pub fn split_leave_speaker_out(dataset: &Dataset, speaker: u32, seed: u64) -> Result<SplitSpec> {
    if speaker != 1 && speaker != 2 {
        return Err(Error::Config(format!(
            "leave-one-speaker-out supports speakers 1 and 2, got {}",
            speaker
        )));
    }
    let test_idx: Vec<usize> = dataset
        .trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.attended_speaker == speaker)
        .map(|(i, _)| i)
        .collect();
    leave_out(dataset, Protocol::LeaveOneSpeakerOut, speaker, test_idx, seed)
}

/// Test = all trials of the given subject.
pub fn split_leave_subject_out(dataset: &Dataset, subject: usize, seed: u64) -> Result<SplitSpec> {
    let test_idx: Vec<usize> = dataset
        .trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.subject_id == subject)
        .map(|(i, _)| i)
        .collect();
    if test_idx.is_empty() {
        return Err(Error::Config(format!("subject {} not present in dataset", subject)));
    }
    leave_out(dataset, Protocol::LeaveOneSubjectOut, subject as u32, test_idx, seed)
}
