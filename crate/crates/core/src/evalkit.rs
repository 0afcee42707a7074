//! Evaluation utilities: accuracy, posterior combination of the two models,
//! channel ablation, decision-window-length sweeps, and the training-range
//! experiment, each with a small CSV writer.

use std::path::Path;

use crate::dataio::{extract_windows_range, Dataset, DecisionWindow, Slice};
use crate::error::{Error, Result};
use crate::swcnn::SwCnnParams;
use crate::swim::{softmax_probs, SwimParams};
use crate::tensor::{Graph, Mode, Tensor};

/// A window-level classifier: returns the predicted locus label.
pub type Predictor<'a> = dyn FnMut(&DecisionWindow) -> Result<usize> + 'a;

/// Fraction of windows whose predicted locus matches the label.
/// The result does not depend on window order.
pub fn accuracy(predict: &mut Predictor, windows: &[DecisionWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for w in windows {
        correct += (predict(w)? == w.locus_label) as usize;
    }
    Ok(correct as f64 / windows.len() as f64)
}

fn window_tensor(w: &DecisionWindow) -> Result<Tensor<f32>> {
    Tensor::from_data(&[w.n_channels, w.t], w.x.clone())
}

/// Locus posterior of the CNN (softmax over the first two logits).
pub fn swcnn_posterior(params: &SwCnnParams<f32>, w: &DecisionWindow) -> Result<Vec<f32>> {
    let g = Graph::inference();
    let logits = params.forward(&g, &window_tensor(w)?, Mode::Eval)?;
    Ok(softmax_probs(&logits.to_vec()[..2]))
}

/// Locus posterior of the full decoder.
pub fn swim_posterior(params: &SwimParams<f32>, w: &DecisionWindow) -> Result<Vec<f32>> {
    let g = Graph::inference();
    let logits = params.forward(&g, &w.x, w.n_channels, w.t, Mode::Eval)?;
    Ok(softmax_probs(&logits.to_vec()))
}

pub fn swcnn_predictor(params: &SwCnnParams<f32>) -> impl FnMut(&DecisionWindow) -> Result<usize> + '_ {
    move |w| Ok(argmax(&swcnn_posterior(params, w)?))
}

pub fn swim_predictor(params: &SwimParams<f32>) -> impl FnMut(&DecisionWindow) -> Result<usize> + '_ {
    move |w| Ok(argmax(&swim_posterior(params, w)?))
}

fn argmax(p: &[f32]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Averages two class posteriors of equal length.
pub fn combine_posteriors(a: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("combine_posteriors", format!("{} vs {} classes", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Predictor that averages the decoder and CNN posteriors per window.
pub fn combined_predictor<'a>(
    swim: &'a SwimParams<f32>,
    cnn: &'a SwCnnParams<f32>,
) -> impl FnMut(&DecisionWindow) -> Result<usize> + 'a {
    move |w| {
        let p = combine_posteriors(&swim_posterior(swim, w)?, &swcnn_posterior(cnn, w)?)?;
        Ok(argmax(&p))
    }
}

#[derive(Debug, Clone)]
pub struct ChannelImportance {
    pub channel: usize,
    pub name: String,
    /// Accuracy drop when the channel is zeroed.
    pub delta_acc: f64,
    /// `delta_acc` min-max normalized over channels to [0, 1].
    pub importance: f64,
}

/// Zeroes one channel at a time (after normalization) and measures the
/// accuracy drop against the intact baseline.
pub fn channel_importance(
    predict: &mut Predictor,
    windows: &[DecisionWindow],
    channel_names: &[String],
) -> Result<Vec<ChannelImportance>> {
    if windows.is_empty() {
        return Err(Error::Empty("ablation set"));
    }
    let n_channels = windows[0].n_channels;
    if channel_names.len() != n_channels {
        return Err(Error::shape(
            "channel_importance",
            format!("{} names for {} channels", channel_names.len(), n_channels),
        ));
    }
    let base = accuracy(predict, windows)?;
    let mut deltas = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let ablated: Vec<DecisionWindow> = windows
            .iter()
            .map(|w| {
                let mut out = w.clone();
                for v in &mut out.x[c * w.t..(c + 1) * w.t] {
                    *v = 0.0;
                }
                out
            })
            .collect();
        deltas.push(base - accuracy(predict, &ablated)?);
    }
    let lo = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Ok(deltas
        .into_iter()
        .enumerate()
        .map(|(c, d)| ChannelImportance {
            channel: c,
            name: channel_names[c].clone(),
            delta_acc: d,
            importance: if span > 0.0 { (d - lo) / span } else { 0.0 },
        })
        .collect())
}

pub fn write_channel_importance(path: &Path, rows: &[ChannelImportance]) -> Result<()> {
    let mut s = String::from("channel,name,delta_acc,importance\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4},{:.4}\n", r.channel, r.name, r.delta_acc, r.importance));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub length_s: f64,
    pub model: String,
    pub accuracy: f64,
}

/// Accuracy as a function of decision-window length, per model.
///
/// Windows are cut non-overlapping from the given test slices at each length.
pub fn window_sweep(
    dataset: &Dataset,
    slices: &[Slice],
    lengths_s: &[f64],
    predictors: &mut [(&str, &mut Predictor)],
) -> Result<Vec<SweepPoint>> {
    if lengths_s.is_empty() {
        return Err(Error::Empty("window sweep lengths"));
    }
    let mut out = Vec::new();
    for &len_s in lengths_s {
        let t = (len_s * dataset.fs as f64).round() as usize;
        if t == 0 {
            return Err(Error::arg("window_sweep", format!("length {} s is below one sample", len_s)));
        }
        let mut windows = Vec::new();
        for s in slices {
            if s.hi - s.lo >= t {
                windows.extend(extract_windows_range(&dataset.trials[s.trial_index], s.lo, s.hi, t, 0.0)?);
            }
        }
        for (model, predict) in predictors.iter_mut() {
            out.push(SweepPoint {
                length_s: len_s,
                model: model.to_string(),
                accuracy: accuracy(predict, &windows)?,
            });
        }
    }
    Ok(out)
}

pub fn write_window_sweep(path: &Path, rows: &[SweepPoint]) -> Result<()> {
    let mut s = String::from("length_s,model,accuracy\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4}\n", r.length_s, r.model, r.accuracy));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrialRangePoint {
    pub lo_frac: f64,
    pub hi_frac: f64,
    pub accuracy: f64,
}

/// Trains on a varying within-trial range while validating on 70–85% and
/// testing on the final 15% of every trial. Training ranges that reach into
/// the validation region are rejected.
///
/// `run(train, val, test)` trains a fresh model and returns test accuracy.
pub fn trial_range_experiment(
    dataset: &Dataset,
    ranges: &[(f64, f64)],
    window_len: usize,
    alpha: f64,
    mut run: impl FnMut(&[DecisionWindow], &[DecisionWindow], &[DecisionWindow]) -> Result<f64>,
) -> Result<Vec<TrialRangePoint>> {
    if dataset.trials.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut out = Vec::new();
    for &(lo, hi) in ranges {
        if !(0.0..1.0).contains(&lo) || hi <= lo {
            return Err(Error::arg("trial_range", format!("bad range {}..{}", lo, hi)));
        }
        if hi > 0.70 + 1e-9 {
            return Err(Error::arg(
                "trial_range",
                format!("training range {}..{} overlaps the validation/test region (70–100%)", lo, hi),
            ));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for trial in &dataset.trials {
            let l = trial.n_samples;
            let (b1, b2) = (l * 70 / 100, l * 85 / 100);
            let t_lo = (lo * l as f64).round() as usize;
            let t_hi = ((hi * l as f64).round() as usize).min(b1);
            if t_hi - t_lo >= window_len {
                train.extend(extract_windows_range(trial, t_lo, t_hi, window_len, alpha)?);
            }
            if b2 - b1 >= window_len {
                val.extend(extract_windows_range(trial, b1, b2, window_len, 0.0)?);
            }
            if l - b2 >= window_len {
                test.extend(extract_windows_range(trial, b2, l, window_len, 0.0)?);
            }
        }
        out.push(TrialRangePoint { lo_frac: lo, hi_frac: hi, accuracy: run(&train, &val, &test)? });
    }
    Ok(out)
}

pub fn write_trial_range(path: &Path, rows: &[TrialRangePoint]) -> Result<()> {
    let mut s = String::from("train_lo,train_hi,accuracy\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4}\n", r.lo_frac, r.hi_frac, r.accuracy));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub protocol: String,
    pub model: String,
    pub seed: u64,
    pub accuracy: f64,
}

pub fn write_eval_report(path: &Path, rows: &[EvalRecord]) -> Result<()> {
    let mut s = String::from("protocol,model,seed,accuracy\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:.4}\n", r.protocol, r.model, r.seed, r.accuracy));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
