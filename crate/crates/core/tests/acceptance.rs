//! Acceptance suite: ten criteria, one pass/fail line each.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! Workloads are desk-scale; dataset-scale reference numbers are recorded as
//! documented expectations in criterion 1, not gated.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swim_core::dataio::{
    extract_windows_range, hop_samples, load_dataset, save_dataset, split_every_trial,
    split_leave_speaker_out, split_leave_subject_out, synth_generate, window_count,
    windows_for_slices, Dataset, DecisionWindow, SynthConfig, NINE_CHANNELS,
};
use swim_core::evalkit::{
    accuracy, channel_importance, combine_posteriors, swcnn_posterior, swcnn_predictor,
    swim_predictor, window_sweep, write_eval_report, write_window_sweep, EvalRecord,
};
use swim_core::ssm::{selective_scan, Discretization, ScanMode, SsmConfig, RMS_EPS};
use swim_core::swcnn::{multitask_loss, SwCnnConfig, SwCnnParams};
use swim_core::swim::{softmax_probs, stream_init, stream_push, SwimConfig, SwimParams};
use swim_core::tensor::{grad_check_params, Graph, Mode, Tensor};
use swim_core::trainer::{save_checkpoint, train_swcnn, train_swim, write_history, TrainConfig};
use swim_core::{Error, Result};

macro_rules! check {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(Error::Config(format!($($arg)+)));
        }
    };
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Result<String>); 10] = [
        ("pipeline on KUL-format manifest", c1_pipeline),
        ("gradient oracle", c2_gradients),
        ("scan equivalence", c3_scan),
        ("streaming equivalence", c4_streaming),
        ("counting exactness", c5_counting),
        ("learning sanity", c6_learning),
        ("ablation semantics", c7_ablation),
        ("loss identity", c8_loss),
        ("combination identity", c9_combination),
        ("determinism", c10_determinism),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        match run() {
            Ok(detail) => {
                println!("criterion {:2}: PASS  {} — {} ({:.1}s)", i + 1, name, detail, started.elapsed().as_secs_f64());
            }
            Err(e) => {
                println!("criterion {:2}: FAIL  {} — {}", i + 1, name, e);
                failures.push(i + 1);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {:?}", failures);
}

fn take_balanced(windows: &[DecisionWindow], n: usize) -> Vec<DecisionWindow> {
    let mut left: Vec<&DecisionWindow> = windows.iter().filter(|w| w.locus_label == 0).collect();
    let mut right: Vec<&DecisionWindow> = windows.iter().filter(|w| w.locus_label == 1).collect();
    left.truncate(n / 2);
    right.truncate(n / 2);
    left.into_iter().chain(right).cloned().collect()
}

/// Reduced dataset geometry shared by the training-based criteria.
fn small_synth(
    subjects: usize,
    trials: usize,
    duration_s: f64,
    snr_db: f64,
    informative: Vec<usize>,
    silent_block_prob: f64,
    seed: u64,
) -> Result<Dataset> {
    let cfg = SynthConfig {
        n_subjects: subjects,
        trials_per_subject: trials,
        duration_s,
        n_channels: 8,
        snr_db,
        informative_channels: informative,
        silent_block_prob,
        ..Default::default()
    };
    let mut ds = synth_generate(&cfg, seed)?;
    ds.normalize()?;
    Ok(ds)
}

// 1. Dataset-scale numbers are not desk-reproducible (the 16-subject corpus
//    is licensed and training-scale). Substitute check: a manifest in that
//    format drives all three protocols end-to-end and emits the report
//    tables. Reference test accuracies at dataset scale, ±2 points:
//    every-trial 96.9%, leave-one-speaker-out 83.2% (CNN), 84.9% (combined),
//    86.2% (decoder), leave-one-subject-out 71.2%. Not asserted here.
fn c1_pipeline() -> Result<String> {
    let dir = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    // KUL format: 64 channels at 128 Hz, one locus label per trial
    let cfg = SynthConfig {
        n_subjects: 4,
        trials_per_subject: 2,
        duration_s: 20.0,
        n_channels: 64,
        snr_db: 15.0,
        ..Default::default()
    };
    let ds = synth_generate(&cfg, 1)?;
    let manifest = save_dataset(&ds, dir.path())?;
    let mut ds = load_dataset(&manifest)?;
    ds.normalize()?;
    check!(ds.n_channels() == 64 && ds.fs == 128, "manifest did not round-trip KUL geometry");

    let t = 128;
    let tcfg = TrainConfig { epochs: 2, batch_size: 32, beta: 0.0, ..Default::default() };
    let cnn_cfg = SwCnnConfig { n_subjects: 4, ..Default::default() };
    let mut report = Vec::new();

    let splits = [
        split_every_trial(&ds),
        split_leave_speaker_out(&ds, 1, 0)?,
        split_leave_subject_out(&ds, 0, 0)?,
    ];
    for split in &splits {
        let train = windows_for_slices(&ds, &split.train, t, 0.75)?;
        let val = windows_for_slices(&ds, &split.val, t, 0.0)?;
        let test = windows_for_slices(&ds, &split.test, t, 0.0)?;
        let params = SwCnnParams::<f32>::init(&cnn_cfg, 0)?;
        train_swcnn(&params, &train, &val, &tcfg)?;
        let acc = accuracy(&mut swcnn_predictor(&params), &test)?;
        report.push(EvalRecord {
            protocol: split.protocol.to_string(),
            model: "swcnn".into(),
            seed: 0,
            accuracy: acc,
        });
        if split.protocol.to_string() == "every-trial" {
            // nine-frontal-channel variant and the posterior average
            let nine_idx: Vec<usize> = NINE_CHANNELS
                .iter()
                .map(|n| ds.channel_names.iter().position(|c| c == n).unwrap())
                .collect();
            let mut nine = ds.clone();
            nine.channel_names = NINE_CHANNELS.iter().map(|s| s.to_string()).collect();
            for tr in &mut nine.trials {
                let mut data = Vec::with_capacity(9 * tr.n_samples);
                for &c in &nine_idx {
                    data.extend_from_slice(tr.channel(c));
                }
                tr.data = data;
                tr.n_channels = 9;
            }
            let train9 = windows_for_slices(&nine, &split.train, t, 0.75)?;
            let val9 = windows_for_slices(&nine, &split.val, t, 0.0)?;
            let test9 = windows_for_slices(&nine, &split.test, t, 0.0)?;
            let p9 = SwCnnParams::<f32>::init(
                &SwCnnConfig { in_channels: 9, n_subjects: 4, ..Default::default() },
                0,
            )?;
            train_swcnn(&p9, &train9, &val9, &tcfg)?;
            report.push(EvalRecord {
                protocol: split.protocol.to_string(),
                model: "swcnn-9ch".into(),
                seed: 0,
                accuracy: accuracy(&mut swcnn_predictor(&p9), &test9)?,
            });
            let mut correct = 0usize;
            for (w64, w9) in test.iter().zip(&test9) {
                let p = combine_posteriors(&swcnn_posterior(&params, w64)?, &swcnn_posterior(&p9, w9)?)?;
                correct += ((p[1] > p[0]) as usize == w64.locus_label) as usize;
            }
            report.push(EvalRecord {
                protocol: split.protocol.to_string(),
                model: "combined".into(),
                seed: 0,
                accuracy: correct as f64 / test.len() as f64,
            });
            // second table shape: accuracy over decision-window lengths
            let sweep = window_sweep(&ds, &split.test, &[0.5, 1.0, 2.0], &mut [("swcnn", &mut swcnn_predictor(&params))])?;
            write_window_sweep(&dir.path().join("window_sweep.csv"), &sweep)?;
        }
    }
    write_eval_report(&dir.path().join("eval_report.csv"), &report)?;
    let table = std::fs::read_to_string(dir.path().join("eval_report.csv"))
        .map_err(|e| Error::io("eval_report.csv", e))?;
    check!(table.lines().count() == 6, "expected 5 report rows, got:\n{}", table);
    check!(
        std::fs::read_to_string(dir.path().join("window_sweep.csv")).map(|s| s.lines().count()).unwrap_or(0) == 4,
        "window sweep table missing"
    );
    Ok(format!("3 protocols, {} report rows + sweep emitted", report.len()))
}

// 2. Analytic gradients vs central finite differences in 64-bit.
fn c2_gradients() -> Result<String> {
    let started = Instant::now();

    // SW-CNN layer stack
    let cnn_cfg = SwCnnConfig {
        in_channels: 6,
        conv_out_channels: 4,
        kernel_time: 5,
        hidden_dim: 8,
        n_subjects: 3,
        gamma: 0.05,
        use_batchnorm: true,
    };
    let cnn = SwCnnParams::<f64>::init(&cnn_cfg, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_data(&[6, 16], (0..96).map(|_| rng.gen::<f64>() - 0.5).collect())?;
    let params: Vec<Tensor<f64>> = cnn.named_parameters().into_iter().map(|(_, t)| t).collect();
    let cnn_err = grad_check_params(
        |g| {
            let logits = cnn.forward(g, &x, Mode::Train)?;
            multitask_loss(g, &logits, 1, 2, 0.05)
        },
        &params,
        1e-6,
    )?;
    check!(cnn_err < 1e-5, "SW-CNN rel err {}", cnn_err);

    // one selective-state-space block
    let ssm_cfg = SsmConfig {
        d_model: 4,
        expand: 2,
        d_state: 3,
        conv_width: 3,
        dt_rank: 2,
        n_layers: 1,
        scan_chunk: 3,
        ..Default::default()
    };
    let block = swim_core::ssm::MambaBlockParams::<f64>::init(&ssm_cfg, &mut rng)?;
    let u = Tensor::from_data(&[5, 4], (0..20).map(|_| rng.gen::<f64>() - 0.5).collect())?
        .requires_grad();
    let mut params: Vec<Tensor<f64>> = block.named_parameters("b").into_iter().map(|(_, t)| t).collect();
    params.push(u.clone());
    let block_err = grad_check_params(
        |g| {
            let y = block.forward(g, &u, ssm_cfg.scan_mode())?;
            let y2 = g.mul(&y, &y)?;
            g.sum_all(&y2)
        },
        &params,
        1e-5,
    )?;
    check!(block_err < 1e-5, "block rel err {}", block_err);

    // end-to-end small-dimension decoder
    let swim_cfg = SwimConfig {
        cnn: SwCnnConfig {
            in_channels: 4,
            conv_out_channels: 4,
            kernel_time: 5,
            hidden_dim: 8,
            n_subjects: 2,
            gamma: 0.05,
            use_batchnorm: true,
        },
        ssm: SsmConfig { n_layers: 1, ..ssm_cfg },
        window_len: 32,
        hop: 8,
        n_classes: 2,
    };
    let swim = SwimParams::<f64>::init(&swim_cfg, 3)?;
    let sig: Vec<f64> = (0..4 * 48).map(|_| rng.gen::<f64>() - 0.5).collect();
    let params: Vec<Tensor<f64>> = swim.named_parameters().into_iter().map(|(_, t)| t).collect();
    let swim_err = grad_check_params(
        |g| {
            let logits = swim.forward(g, &sig, 4, 48, Mode::Train)?;
            g.softmax_cross_entropy(&logits, 1)
        },
        &params,
        1e-5,
    )?;
    check!(swim_err < 1e-4, "end-to-end rel err {}", swim_err);

    let elapsed = started.elapsed().as_secs_f64();
    check!(elapsed < 120.0, "took {:.1}s, budget 120s", elapsed);
    Ok(format!("rel err: cnn {:.1e}, block {:.1e}, end-to-end {:.1e}", cnn_err, block_err, swim_err))
}

// 3. Chunked vs sequential selective scan, 100 random configurations.
fn c3_scan() -> Result<String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = Graph::<f32>::inference();
    let mut worst = 0.0f32;
    for i in 0..100 {
        let n = rng.gen_range(1..=1024);
        let d = rng.gen_range(1..=128);
        let s = rng.gen_range(1..=16);
        let chunk = rng.gen_range(1..=256);
        let disc = if i % 2 == 0 { Discretization::ZohEuler } else { Discretization::ExactZoh };
        let mk = |shape: &[usize], lo: f32, hi: f32, rng: &mut ChaCha8Rng| {
            let k: usize = shape.iter().product();
            Tensor::from_data(shape, (0..k).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
        };
        let u = mk(&[n, d], -1.0, 1.0, &mut rng);
        let delta = mk(&[n, d], 1e-3, 0.2, &mut rng);
        let a = mk(&[d, s], -8.0, -0.05, &mut rng);
        let b = mk(&[n, s], -1.0, 1.0, &mut rng);
        let c = mk(&[n, s], -1.0, 1.0, &mut rng);
        let dsk = mk(&[d], -1.0, 1.0, &mut rng);
        let seq = selective_scan(&g, &u, &delta, &a, &b, &c, &dsk, disc, ScanMode::Sequential)?;
        let par = selective_scan(&g, &u, &delta, &a, &b, &c, &dsk, disc, ScanMode::Chunked(chunk))?;
        let dev = seq
            .to_vec()
            .iter()
            .zip(par.to_vec())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        check!(dev < 1e-5, "config {} (n={} d={} s={} chunk={}): dev {}", i, n, d, s, chunk, dev);
        worst = worst.max(dev);
    }
    let elapsed = started.elapsed().as_secs_f64();
    check!(elapsed < 60.0, "took {:.1}s, budget 60s", elapsed);
    Ok(format!("100 configs, worst deviation {:.2e}", worst))
}

/// Reduced decoder shared by criteria 4 and 6b.
fn small_swim_config() -> SwimConfig {
    SwimConfig {
        cnn: SwCnnConfig {
            in_channels: 8,
            conv_out_channels: 8,
            kernel_time: 5,
            hidden_dim: 16,
            n_subjects: 2,
            gamma: 0.05,
            use_batchnorm: true,
        },
        ssm: SsmConfig {
            d_model: 16,
            expand: 2,
            d_state: 8,
            conv_width: 4,
            dt_rank: 2,
            n_layers: 2,
            ..Default::default()
        },
        window_len: 128,
        hop: 16,
        n_classes: 2,
    }
}

// 4. Streaming decisions equal batch prefix posteriors; constant-size state
//    over 1e5 pushes.
fn c4_streaming() -> Result<String> {
    let cfg = small_swim_config();
    let params = SwimParams::<f32>::init(&cfg, 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t_total = 50 * 128; // 50 s
    let c = 8;
    let x: Vec<f32> = (0..c * t_total).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // warm batchnorm, then compute the batch pipeline once; every prefix
    // posterior falls out of the causal row sequence
    let g = Graph::inference();
    let _ = params.forward(&g, &x, c, t_total, Mode::Train)?;
    let feats = params.cnn_feature_sequence(&g, &x, c, t_total, Mode::Eval)?;
    let mut h = g.linear(&feats, &params.w_in, Some(&params.b_in))?;
    for block in &params.blocks {
        h = block.forward(&g, &h, cfg.ssm.scan_mode())?;
    }
    let normed = g.rmsnorm(&h, &params.norm_f, RMS_EPS as f32)?.to_vec();
    let n_steps = cfg.n_windows(t_total)?;
    check!(n_steps == 393, "expected 393 steps in 50 s, got {}", n_steps);
    let dm = cfg.ssm.d_model;
    let head_w = params.head_w.to_vec();
    let head_b = params.head_b.to_vec();

    let mut state = stream_init(&params, c)?;
    let mut sum = vec![0.0f32; dm];
    let mut worst = 0.0f32;
    let mut emitted = 0usize;
    let hop = cfg.hop;
    for step in 0..t_total / hop {
        let lo = step * hop;
        let mut chunk = vec![0.0f32; c * hop];
        for ch in 0..c {
            chunk[ch * hop..(ch + 1) * hop].copy_from_slice(&x[ch * t_total + lo..ch * t_total + lo + hop]);
        }
        let Some(out) = stream_push(&params, &mut state, &chunk)? else { continue };
        for (s, v) in sum.iter_mut().zip(&normed[emitted * dm..(emitted + 1) * dm]) {
            *s += v;
        }
        emitted += 1;
        let inv = 1.0 / emitted as f32;
        let mut logits = [0.0f32; 2];
        for (k, l) in logits.iter_mut().enumerate() {
            *l = head_b[k] + (0..dm).map(|j| head_w[k * dm + j] * sum[j] * inv).sum::<f32>();
        }
        let batch_post = softmax_probs(&logits);
        for (a, b) in out.posterior.iter().zip(&batch_post) {
            worst = worst.max((a - b).abs());
        }
    }
    check!(emitted == n_steps, "emitted {} decisions, expected {}", emitted, n_steps);
    check!(worst < 1e-3, "posterior deviation {}", worst);

    // long-run stability with fixed-size state
    let tiny_cfg = SwimConfig {
        cnn: SwCnnConfig {
            in_channels: 4,
            conv_out_channels: 3,
            kernel_time: 5,
            hidden_dim: 8,
            n_subjects: 2,
            gamma: 0.05,
            use_batchnorm: true,
        },
        ssm: SsmConfig {
            d_model: 8,
            expand: 2,
            d_state: 4,
            conv_width: 3,
            dt_rank: 2,
            n_layers: 2,
            ..Default::default()
        },
        window_len: 32,
        hop: 16,
        n_classes: 2,
    };
    let tiny = SwimParams::<f32>::init(&tiny_cfg, 13)?;
    let warm: Vec<f32> = (0..4 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let _ = tiny.forward(&Graph::inference(), &warm, 4, 64, Mode::Train)?;
    let mut st = stream_init(&tiny, 4)?;
    let mut last = None;
    for _ in 0..100_000 {
        let chunk: Vec<f32> = (0..4 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        last = stream_push(&tiny, &mut st, &chunk)?;
    }
    let last = last.ok_or_else(|| Error::Empty("streaming output"))?;
    check!(last.posterior.iter().all(|v| v.is_finite()), "posterior diverged");
    check!(st.n_steps() == 100_000 - 1, "step count drifted: {}", st.n_steps());
    Ok(format!("393 steps, worst posterior dev {:.2e}; 1e5 pushes stable", worst))
}

// 5. Closed-form window counts vs exhaustive enumeration, and the two
//    published sequence lengths.
fn c5_counting() -> Result<String> {
    let mut checked = 0usize;
    for l in 1..=1000usize {
        for t in [1usize, 2, 3, 5, 8, 16, 32, 64] {
            if t > l {
                continue;
            }
            for alpha in [0.0, 0.125, 0.25, 0.5, 0.75, 0.875, 0.96] {
                let hop = hop_samples(t, alpha);
                let mut count = 0;
                let mut start = 0;
                while start + t <= l {
                    count += 1;
                    start += hop;
                }
                check!(
                    window_count(l, t, hop) == count,
                    "l={} t={} alpha={}: formula {} vs {}",
                    l, t, alpha, window_count(l, t, hop), count
                );
                checked += 1;
            }
        }
    }
    let cfg = SwimConfig::default();
    check!(cfg.n_windows(5 * 128)? == 33, "5 s gave {}", cfg.n_windows(5 * 128)?);
    check!(cfg.n_windows(50 * 128)? == 393, "50 s gave {}", cfg.n_windows(50 * 128)?);
    // 6-minute trial: 360 non-overlapping 1 s windows; 1437 at alpha = 0.75
    check!(window_count(46080, 128, hop_samples(128, 0.0)) == 360, "alpha=0 count");
    check!(window_count(46080, 128, hop_samples(128, 0.75)) == 1437, "alpha=0.75 count");
    Ok(format!("{} (l,t,alpha) cells + N=33/N=393", checked))
}

// 6. (a) the CNN reaches 95% validation accuracy on easy synthetic data
//    within 20 epochs; (b) the decoder improves (or holds) with a longer
//    history on temporally sparse evidence.
fn c6_learning() -> Result<String> {
    // (a) 2000 balanced training windows, high SNR
    let ds = small_synth(2, 8, 60.0, 30.0, vec![0, 1, 2, 3], 0.0, 21)?;
    let split = split_every_trial(&ds);
    let train = take_balanced(&windows_for_slices(&ds, &split.train, 128, 0.75)?, 2000);
    check!(train.len() == 2000, "expected 2000 train windows, got {}", train.len());
    let val = windows_for_slices(&ds, &split.val, 128, 0.0)?;
    let cnn_cfg = SwCnnConfig { in_channels: 8, n_subjects: 2, ..Default::default() };
    let cnn = SwCnnParams::<f32>::init(&cnn_cfg, 0)?;
    let tcfg = TrainConfig { epochs: 20, ..Default::default() };
    let report = train_swcnn(&cnn, &train, &val, &tcfg)?;
    check!(
        report.best_val_acc >= 0.95,
        "CNN val acc {:.3} after {} epochs",
        report.best_val_acc,
        report.history.len()
    );

    // (b) evidence arrives in bursts: single windows are often silent,
    // long histories almost never are
    let ds = small_synth(2, 6, 110.0, 15.0, vec![0, 1, 2, 3], 0.6, 22)?;
    let sub0: Vec<usize> = (0..ds.trials.len()).filter(|&i| ds.trials[i].subject_id == 0).collect();
    let sub1: Vec<usize> = (0..ds.trials.len()).filter(|&i| ds.trials[i].subject_id == 1).collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut train_1s = Vec::new();
    for (k, &i) in sub0.iter().enumerate() {
        let n = ds.trials[i].n_samples;
        // hold out the last two trials (one of each class) for validation
        if k < sub0.len() - 2 {
            train.extend(extract_windows_range(&ds.trials[i], 0, n, 256, 0.0)?);
            train_1s.extend(extract_windows_range(&ds.trials[i], 0, n, 128, 0.5)?);
        } else {
            val.extend(extract_windows_range(&ds.trials[i], 0, n, 256, 0.0)?);
        }
    }
    // drop batchnorm here: with per-sample training passes its window-local
    // statistics erase the amplitude cue this dataset rides on
    let mut cfg = small_swim_config();
    cfg.cnn.use_batchnorm = false;
    // warm-start the feature extractor, as the full recipe does
    let cnn = SwCnnParams::<f32>::init(&cfg.cnn, 0)?;
    let val_1s: Vec<_> = val.iter().take(60).cloned().collect();
    train_swcnn(&cnn, &take_balanced(&train_1s, 800), &val_1s, &TrainConfig { epochs: 6, beta: 0.0, ..Default::default() })?;
    let mut swim = SwimParams::<f32>::init(&cfg, 0)?;
    swim.cnn = cnn;
    let tcfg = TrainConfig { epochs: 4, lr: 1e-3, cnn_lr: Some(1e-4), beta: 0.0, ..Default::default() };
    train_swim(&swim, &train, &val, &tcfg)?;

    let mut short = Vec::new(); // 1 s decisions
    let mut long = Vec::new(); // 50 s decisions
    for &i in &sub1 {
        let tr = &ds.trials[i];
        short.extend(extract_windows_range(tr, 0, tr.n_samples, 128, 0.0)?);
        long.extend(extract_windows_range(tr, 0, tr.n_samples, 50 * 128, 0.875)?);
    }
    let acc_short = accuracy(&mut swim_predictor(&swim), &short)?;
    let acc_long = accuracy(&mut swim_predictor(&swim), &long)?;
    check!(acc_long > 0.6, "decoder stayed at chance (50 s acc {:.3})", acc_long);
    check!(
        acc_long >= acc_short - 0.02,
        "50 s acc {:.3} fell more than 2 points below 1 s acc {:.3}",
        acc_long,
        acc_short
    );
    Ok(format!(
        "CNN val {:.3}; decoder acc 1 s {:.3} -> 50 s {:.3} ({} / {} windows)",
        report.best_val_acc, acc_short, acc_long, short.len(), long.len()
    ))
}

// 7. Masking the informative channel collapses accuracy to chance; masking
//    a pure-noise channel barely moves it.
fn c7_ablation() -> Result<String> {
    let train_ds = small_synth(2, 4, 60.0, 20.0, vec![3], 0.0, 31)?;
    let split = split_every_trial(&train_ds);
    let train = windows_for_slices(&train_ds, &split.train, 128, 0.75)?;
    let val = windows_for_slices(&train_ds, &split.val, 128, 0.0)?;
    let cnn_cfg = SwCnnConfig { in_channels: 8, n_subjects: 2, ..Default::default() };
    let cnn = SwCnnParams::<f32>::init(&cnn_cfg, 0)?;
    let tcfg = TrainConfig { epochs: 10, beta: 0.0, ..Default::default() };
    let report = train_swcnn(&cnn, &train, &val, &tcfg)?;
    check!(report.best_val_acc >= 0.85, "model too weak to ablate: val {:.3}", report.best_val_acc);

    // dedicated 1000-window balanced test set
    let test_ds = small_synth(2, 2, 70.0, 20.0, vec![3], 0.0, 32)?;
    let mut test = Vec::new();
    for tr in &test_ds.trials {
        test.extend(extract_windows_range(tr, 0, tr.n_samples, 128, 0.875)?);
    }
    let test = take_balanced(&test, 1000);
    check!(test.len() == 1000, "expected 1000 test windows, got {}", test.len());

    let base = accuracy(&mut swcnn_predictor(&cnn), &test)?;
    let rows = channel_importance(&mut swcnn_predictor(&cnn), &test, &test_ds.channel_names)?;
    let informative = &rows[3];
    let masked_acc = base - informative.delta_acc;
    check!(
        (masked_acc - 0.5).abs() <= 0.05,
        "masking the informative channel left accuracy at {:.3}",
        masked_acc
    );
    for (c, row) in rows.iter().enumerate() {
        if c == 3 {
            continue;
        }
        check!(
            row.delta_acc.abs() < 0.01,
            "noise channel {} moved accuracy by {:.3}",
            c,
            row.delta_acc
        );
    }
    check!(informative.importance == 1.0, "informative channel not ranked first");
    Ok(format!("base {:.3}, informative-masked {:.3}, noise |delta| < 0.01", base, masked_acc))
}

// 8. multitask_loss(uniform logits, gamma) closed form; gamma = 0 is the
//    locus term alone.
fn c8_loss() -> Result<String> {
    let g = Graph::<f64>::inference();
    let logits = Tensor::zeros(&[18]);
    let l = multitask_loss(&g, &logits, 0, 0, 0.05)?.item();
    let want = 2f64.ln() + 0.05 * 16f64.ln();
    check!((l - want).abs() < 1e-6, "{} vs {}", l, want);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let raw: Vec<f64> = (0..18).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
    let logits = Tensor::from_data(&[18], raw)?;
    let locus_only = multitask_loss(&g, &logits, 1, 3, 0.0)?.item();
    let locus = g.slice1d(&logits, 0, 2)?;
    let direct = g.softmax_cross_entropy(&locus, 1)?.item();
    check!(locus_only == direct, "gamma=0 differs: {} vs {}", locus_only, direct);
    Ok(format!("uniform loss {:.6} = ln2 + 0.05 ln16", l))
}

// 9. Averaging a posterior with itself is the identity; opposing saturated
//    models split the vote.
fn c9_combination() -> Result<String> {
    let logits = [1.3f32, -0.4];
    let p = softmax_probs(&logits);
    let same = combine_posteriors(&p, &p)?;
    for (a, b) in same.iter().zip(&p) {
        check!((a - b).abs() < 1e-6, "self-combination moved the posterior");
    }
    let p1 = softmax_probs(&[50.0f32, -50.0]);
    let p2 = softmax_probs(&[-50.0f32, 50.0]);
    let split = combine_posteriors(&p1, &p2)?;
    check!(
        (split[0] - 0.5).abs() < 1e-6 && (split[1] - 0.5).abs() < 1e-6,
        "opposing saturated posteriors gave {:?}",
        split
    );
    Ok("self-identity and (0.5, 0.5) for opposing saturation".into())
}

// 10. Two identically seeded runs produce byte-identical checkpoints and
//     CSVs.
fn c10_determinism() -> Result<String> {
    std::env::set_var("SWIM_DETERMINISTIC", "1");
    let dir = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let ds = small_synth(2, 2, 20.0, 10.0, vec![0, 1], 0.0, 41)?;
    let split = split_every_trial(&ds);
    let train = windows_for_slices(&ds, &split.train, 128, 0.75)?;
    let val = windows_for_slices(&ds, &split.val, 128, 0.0)?;
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>)> {
        let params = SwCnnParams::<f32>::init(
            &SwCnnConfig { in_channels: 8, n_subjects: 2, ..Default::default() },
            5,
        )?;
        let tcfg = TrainConfig { epochs: 3, seed: 5, ..Default::default() };
        let report = train_swcnn(&params, &train, &val, &tcfg)?;
        let ckpt = dir.path().join(format!("{}.ckpt", tag));
        let csv = dir.path().join(format!("{}.csv", tag));
        save_checkpoint(&ckpt, &serde_json::json!({"model": "swcnn"}), &report.best_tensors)?;
        write_history(&csv, &report.history)?;
        Ok((
            std::fs::read(&ckpt).map_err(|e| Error::io(&ckpt, e))?,
            std::fs::read(&csv).map_err(|e| Error::io(&csv, e))?,
        ))
    };
    let (ckpt_a, csv_a) = run("a")?;
    let (ckpt_b, csv_b) = run("b")?;
    check!(ckpt_a == ckpt_b, "checkpoints differ between identically seeded runs");
    check!(csv_a == csv_b, "history CSVs differ between identically seeded runs");
    Ok(format!("{}-byte checkpoints identical across runs", ckpt_a.len()))
}
