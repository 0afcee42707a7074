//! JSON manifest + raw little-endian f32 trial files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, EegTrial, Locus, SynthGroundTruth};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub subject_id: usize,
    pub trial_id: usize,
    pub attended_locus: Locus,
    pub attended_speaker: u32,
    pub story: u32,
    pub n_samples: usize,
    pub data_file: String,
}

/// On-disk dataset description. Trial payloads live in separate raw files of
/// little-endian 32-bit floats, row-major `[channel][sample]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub fs: u32,
    pub channel_names: Vec<String>,
    pub trials: Vec<ManifestTrial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<SynthGroundTruth>,
}

/// Loads a dataset verbatim (no normalization).
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: manifest_path.to_path_buf(), source: e })?;
    if manifest.fs == 0 {
        return Err(Error::DataFormat {
            path: manifest_path.to_path_buf(),
            detail: "fs must be positive".into(),
        });
    }
    let n_channels = manifest.channel_names.len();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for mt in &manifest.trials {
        let path = base.join(&mt.data_file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expect = 4 * n_channels * mt.n_samples;
        if bytes.len() != expect {
            return Err(Error::DataFormat {
                path,
                detail: format!(
                    "trial subject {} trial {}: expected {} bytes ({} channels × {} samples × 4), found {}",
                    mt.subject_id, mt.trial_id, expect, n_channels, mt.n_samples, bytes.len()
                ),
            });
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        trials.push(EegTrial {
            subject_id: mt.subject_id,
            trial_id: mt.trial_id,
            fs: manifest.fs,
            n_channels,
            n_samples: mt.n_samples,
            data,
            attended_locus: mt.attended_locus,
            attended_speaker: mt.attended_speaker,
            story: mt.story,
        });
    }
    Ok(Dataset {
        fs: manifest.fs,
        channel_names: manifest.channel_names,
        trials,
        ground_truth: manifest.ground_truth,
    })
}

/// Writes manifest.json plus one raw f32 file per trial; returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut trials = Vec::with_capacity(dataset.trials.len());
    for t in &dataset.trials {
        let file = format!("s{:02}_t{:02}.f32", t.subject_id, t.trial_id);
        let path = dir.join(&file);
        let mut bytes = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        trials.push(ManifestTrial {
            subject_id: t.subject_id,
            trial_id: t.trial_id,
            attended_locus: t.attended_locus,
            attended_speaker: t.attended_speaker,
            story: t.story,
            n_samples: t.n_samples,
            data_file: file,
        });
    }
    let manifest = Manifest {
        fs: dataset.fs,
        channel_names: dataset.channel_names.clone(),
        trials,
        ground_truth: dataset.ground_truth.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Json { path: path.clone(), source: e })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
