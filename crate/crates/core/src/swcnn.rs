//! Short-window CNN: feature extractor and dual-head classifier
//! (attention locus + subject id) with a multitask loss.
//!
//! The network is fully convolutional with global average pooling, so one
//! parameter set accepts any window length T ≥ kernel_time: conv(k×C, pad
//! symmetric) → batchnorm → ReLU → mean over time → FC → ReLU → FC. The first
//! two output logits classify the locus, the remaining ones the subject.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{Activation, BatchNormState, Graph, Mode, Scalar, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SwCnnConfig {
    pub in_channels: usize,
    pub conv_out_channels: usize,
    pub kernel_time: usize,
    pub hidden_dim: usize,
    pub n_subjects: usize,
    /// Auxiliary (subject) loss weight.
    pub gamma: f64,
    pub use_batchnorm: bool,
}

impl Default for SwCnnConfig {
    fn default() -> Self {
        SwCnnConfig {
            in_channels: 64,
            conv_out_channels: 16,
            kernel_time: 5,
            hidden_dim: 64,
            n_subjects: 16,
            gamma: 0.05,
            use_batchnorm: true,
        }
    }
}

impl SwCnnConfig {
    /// The pre-improvement baseline: long kernel, few channels, no batchnorm.
    pub fn baseline_cnn() -> Self {
        SwCnnConfig {
            conv_out_channels: 5,
            kernel_time: 17,
            hidden_dim: 5,
            use_batchnorm: false,
            ..Default::default()
        }
    }

    /// The nine-frontal-channel variant.
    pub fn nine_channel() -> Self {
        SwCnnConfig { in_channels: 9, ..Default::default() }
    }

    pub fn n_outputs(&self) -> usize {
        2 + self.n_subjects
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_time % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_time must be odd for symmetric padding, got {}",
                self.kernel_time
            )));
        }
        if self.conv_out_channels == 0 || self.in_channels == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("zero-sized layer in SW-CNN config".into()));
        }
        Ok(())
    }
}

/// All learnable parameters plus the batchnorm running statistics.
pub struct SwCnnParams<F: Scalar> {
    pub config: SwCnnConfig,
    pub conv_w: Tensor<F>,
    pub conv_b: Tensor<F>,
    pub bn_gamma: Tensor<F>,
    pub bn_beta: Tensor<F>,
    pub bn: RefCell<BatchNormState<F>>,
    pub fc1_w: Tensor<F>,
    pub fc1_b: Tensor<F>,
    pub fc2_w: Tensor<F>,
    pub fc2_b: Tensor<F>,
}

pub(crate) fn uniform_init<F: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n)
        .map(|_| F::from_f64(rng.gen_range(-bound..bound)).unwrap())
        .collect();
    Tensor::from_data(shape, data).unwrap().requires_grad()
}

impl<F: Scalar> SwCnnParams<F> {
    pub fn init(config: &SwCnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, f, k) = (config.in_channels, config.conv_out_channels, config.kernel_time);
        let h = config.hidden_dim;
        let out = config.n_outputs();
        Ok(SwCnnParams {
            config: config.clone(),
            conv_w: uniform_init(&mut rng, &[f, c, k], c * k),
            conv_b: uniform_init(&mut rng, &[f], c * k),
            bn_gamma: Tensor::from_data(&[f], vec![F::one(); f])?.requires_grad(),
            bn_beta: Tensor::zeros(&[f]).requires_grad(),
            bn: RefCell::new(BatchNormState::new(f)),
            fc1_w: uniform_init(&mut rng, &[h, f], f),
            fc1_b: uniform_init(&mut rng, &[h], f),
            fc2_w: uniform_init(&mut rng, &[out, h], h),
            fc2_b: uniform_init(&mut rng, &[out], h),
        })
    }

    /// The post-ReLU hidden feature vector (penultimate layer).
    pub fn features(&self, g: &Graph<F>, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let xs = x.shape();
        if xs.len() != 2 || xs[0] != self.config.in_channels {
            return Err(Error::shape(
                "swcnn_forward",
                format!("window {:?} vs configured {} input channels", xs, self.config.in_channels),
            ));
        }
        if xs[1] < self.config.kernel_time {
            return Err(Error::arg(
                "swcnn_forward",
                format!("window length {} shorter than kernel {}", xs[1], self.config.kernel_time),
            ));
        }
        let pad = (self.config.kernel_time - 1) / 2;
        let c = g.conv_time(x, &self.conv_w, &self.conv_b, pad, pad)?;
        let c = if self.config.use_batchnorm {
            g.batchnorm(&c, &self.bn_gamma, &self.bn_beta, &mut self.bn.borrow_mut(), mode)?
        } else {
            c
        };
        let a = g.activation(&c, Activation::Relu)?;
        let pooled = g.mean_over_time(&a)?;
        let h = g.linear(&pooled, &self.fc1_w, Some(&self.fc1_b))?;
        g.activation(&h, Activation::Relu)
    }

    /// Full forward pass to the `[2 + n_subjects]` logits.
    pub fn forward(&self, g: &Graph<F>, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let h = self.features(g, x, mode)?;
        g.linear(&h, &self.fc2_w, Some(&self.fc2_b))
    }

    /// Optimizer-visible parameters in a stable order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<F>)> {
        let mut v = vec![
            ("swcnn.conv.weight".to_string(), self.conv_w.clone()),
            ("swcnn.conv.bias".to_string(), self.conv_b.clone()),
        ];
        if self.config.use_batchnorm {
            v.push(("swcnn.bn.gamma".to_string(), self.bn_gamma.clone()));
            v.push(("swcnn.bn.beta".to_string(), self.bn_beta.clone()));
        }
        v.push(("swcnn.fc1.weight".to_string(), self.fc1_w.clone()));
        v.push(("swcnn.fc1.bias".to_string(), self.fc1_b.clone()));
        v.push(("swcnn.fc2.weight".to_string(), self.fc2_w.clone()));
        v.push(("swcnn.fc2.bias".to_string(), self.fc2_b.clone()));
        v
    }

    /// Everything that must survive a checkpoint round trip.
    pub fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut v: Vec<(String, Vec<usize>, Vec<F>)> = self
            .named_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.to_vec()))
            .collect();
        if self.config.use_batchnorm {
            let bn = self.bn.borrow();
            let f = bn.running_mean.len();
            v.push(("swcnn.bn.running_mean".into(), vec![f], bn.running_mean.clone()));
            v.push(("swcnn.bn.running_var".into(), vec![f], bn.running_var.clone()));
            v.push(("swcnn.bn.updates".into(), vec![1], vec![F::from_u64(bn.updates).unwrap()]));
        }
        v
    }

    /// Rebuilds parameters from checkpoint tensors.
    pub fn import_tensors(
        config: &SwCnnConfig,
        mut get: impl FnMut(&str) -> Result<(Vec<usize>, Vec<F>)>,
    ) -> Result<Self> {
        config.validate()?;
        let params = SwCnnParams::init(config, 0)?;
        let mut load = |t: &Tensor<F>, name: &str| -> Result<()> {
            let (shape, data) = get(name)?;
            if shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    name,
                    shape,
                    t.shape()
                )));
            }
            t.set_data(data);
            Ok(())
        };
        load(&params.conv_w, "swcnn.conv.weight")?;
        load(&params.conv_b, "swcnn.conv.bias")?;
        load(&params.fc1_w, "swcnn.fc1.weight")?;
        load(&params.fc1_b, "swcnn.fc1.bias")?;
        load(&params.fc2_w, "swcnn.fc2.weight")?;
        load(&params.fc2_b, "swcnn.fc2.bias")?;
        if config.use_batchnorm {
            load(&params.bn_gamma, "swcnn.bn.gamma")?;
            load(&params.bn_beta, "swcnn.bn.beta")?;
            let (_, rm) = get("swcnn.bn.running_mean")?;
            let (_, rv) = get("swcnn.bn.running_var")?;
            let (_, up) = get("swcnn.bn.updates")?;
            let mut bn = params.bn.borrow_mut();
            if rm.len() != bn.running_mean.len() || rv.len() != bn.running_var.len() {
                return Err(Error::Checkpoint("batchnorm statistics have wrong length".into()));
            }
            bn.running_mean = rm;
            bn.running_var = rv;
            bn.updates = up[0].to_u64().unwrap_or(0);
        }
        Ok(params)
    }

    /// Element-type conversion (used by the 64-bit verification mode).
    pub fn cast<G: Scalar>(&self) -> SwCnnParams<G> {
        let bn = self.bn.borrow();
        SwCnnParams {
            config: self.config.clone(),
            conv_w: self.conv_w.cast(),
            conv_b: self.conv_b.cast(),
            bn_gamma: self.bn_gamma.cast(),
            bn_beta: self.bn_beta.cast(),
            bn: RefCell::new(BatchNormState {
                running_mean: bn.running_mean.iter().map(|v| G::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
                running_var: bn.running_var.iter().map(|v| G::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
                momentum: G::from_f64(bn.momentum.to_f64().unwrap()).unwrap(),
                eps: G::from_f64(bn.eps.to_f64().unwrap()).unwrap(),
                updates: bn.updates,
                frozen: bn.frozen,
            }),
            fc1_w: self.fc1_w.cast(),
            fc1_b: self.fc1_b.cast(),
            fc2_w: self.fc2_w.cast(),
            fc2_b: self.fc2_b.cast(),
        }
    }
}

/// `L_total = CE(logits[0..2], locus) + gamma · CE(logits[2..], subject)`.
pub fn multitask_loss<F: Scalar>(
    g: &Graph<F>,
    logits: &Tensor<F>,
    locus: usize,
    subject: usize,
    gamma: f64,
) -> Result<Tensor<F>> {
    let k = logits.numel();
    if k < 2 {
        return Err(Error::shape("multitask_loss", format!("need ≥2 logits, got {}", k)));
    }
    if locus > 1 {
        return Err(Error::arg("multitask_loss", format!("locus label {} out of range", locus)));
    }
    let locus_logits = g.slice1d(logits, 0, 2)?;
    let primary = g.softmax_cross_entropy(&locus_logits, locus)?;
    let n_subjects = k - 2;
    if gamma == 0.0 || n_subjects == 0 {
        return Ok(primary);
    }
    if subject >= n_subjects {
        return Err(Error::arg(
            "multitask_loss",
            format!("subject label {} out of range for {} subjects", subject, n_subjects),
        ));
    }
    let subject_logits = g.slice1d(logits, 2, n_subjects)?;
    let aux = g.softmax_cross_entropy(&subject_logits, subject)?;
    let weighted = g.scale(&aux, F::from_f64(gamma).unwrap())?;
    g.add(&primary, &weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_params;

    fn zero_window(c: usize, t: usize) -> Tensor<f64> {
        Tensor::zeros(&[c, t])
    }

    #[test]
    fn shapes_through_the_stack() {
        let p = SwCnnParams::<f64>::init(&SwCnnConfig::default(), 1).unwrap();
        let g = Graph::inference();
        for t in [5usize, 128, 777, 6400] {
            let y = p.forward(&g, &zero_window(64, t), Mode::Train).unwrap();
            assert_eq!(y.shape(), [18]);
        }
        let feats = p.features(&g, &zero_window(64, 128), Mode::Train).unwrap();
        assert_eq!(feats.shape(), [64]);
        assert!(feats.to_vec().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let p = SwCnnParams::<f64>::init(&SwCnnConfig::default(), 1).unwrap();
        let g = Graph::inference();
        assert!(p.forward(&g, &zero_window(9, 128), Mode::Train).is_err());
        assert!(p.forward(&g, &zero_window(64, 3), Mode::Train).is_err());
    }

    #[test]
    fn zero_input_zero_biases_gives_fc2_bias() {
        let p = SwCnnParams::<f64>::init(&SwCnnConfig::default(), 2).unwrap();
        p.conv_b.set_data(vec![0.0; 16]);
        p.fc1_b.set_data(vec![0.0; 64]);
        let g = Graph::inference();
        let y = p.forward(&g, &zero_window(64, 128), Mode::Train).unwrap();
        assert_eq!(y.to_vec(), p.fc2_b.to_vec());
    }

    #[test]
    fn forward_equals_head_applied_to_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SwCnnParams::<f64>::init(&SwCnnConfig::default(), 3).unwrap();
        let x = Tensor::from_data(
            &[64, 128],
            (0..64 * 128).map(|_| rng.gen::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let g = Graph::inference();
        let full = p.forward(&g, &x, Mode::Eval);
        // eval before any update is rejected; warm up the running stats first
        assert!(full.is_err());
        let _ = p.forward(&g, &x, Mode::Train).unwrap();
        let full = p.forward(&g, &x, Mode::Eval).unwrap();
        let feats = p.features(&g, &x, Mode::Eval).unwrap();
        let head = g.linear(&feats, &p.fc2_w, Some(&p.fc2_b)).unwrap();
        assert_eq!(full.to_vec(), head.to_vec());
    }

    #[test]
    fn multitask_loss_closed_form() {
        let g = Graph::<f64>::inference();
        let logits = Tensor::zeros(&[18]);
        let l = multitask_loss(&g, &logits, 0, 0, 0.05).unwrap().item();
        let want = 2f64.ln() + 0.05 * 16f64.ln();
        assert!((l - want).abs() < 1e-6, "{} vs {}", l, want);
        assert!((want - 0.8317).abs() < 1e-4);

        let locus_only = multitask_loss(&g, &logits, 1, 0, 0.0).unwrap().item();
        assert_eq!(locus_only, 2f64.ln());

        assert!(multitask_loss(&g, &logits, 2, 0, 0.05).is_err());
        assert!(multitask_loss(&g, &logits, 0, 16, 0.05).is_err());
    }

    #[test]
    fn gamma_zero_leaves_subject_head_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = SwCnnParams::<f64>::init(&SwCnnConfig::default(), 4).unwrap();
        let x = Tensor::from_data(
            &[64, 32],
            (0..64 * 32).map(|_| rng.gen::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let g = Graph::new();
        let logits = p.forward(&g, &x, Mode::Train).unwrap();
        let loss = multitask_loss(&g, &logits, 0, 3, 0.0).unwrap();
        g.backward(&loss).unwrap();
        let gw = p.fc2_w.grad().unwrap();
        let h = p.config.hidden_dim;
        assert!(gw[2 * h..].iter().all(|&v| v == 0.0), "subject rows must have zero grad");
        assert!(gw[..2 * h].iter().any(|&v| v != 0.0));
        let gb = p.fc2_b.grad().unwrap();
        assert!(gb[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn locus_argmax_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<f64> = (0..18).map(|_| rng.gen::<f64>()).collect();
        let shifted: Vec<f64> = logits.iter().map(|v| v + 13.7).collect();
        let am = |v: &[f64]| if v[0] > v[1] { 0 } else { 1 };
        assert_eq!(am(&logits), am(&shifted));
    }

    #[test]
    fn baseline_variant_validates() {
        let cfg = SwCnnConfig::baseline_cnn();
        assert_eq!(cfg.kernel_time, 17);
        assert_eq!(cfg.conv_out_channels, 5);
        assert!(!cfg.use_batchnorm);
        let p = SwCnnParams::<f64>::init(&cfg, 0).unwrap();
        let g = Graph::inference();
        let y = p.forward(&g, &zero_window(64, 128), Mode::Eval).unwrap();
        assert_eq!(y.shape(), [18]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // small dims keep the FD sweep quick
        let cfg = SwCnnConfig {
            in_channels: 6,
            conv_out_channels: 4,
            kernel_time: 5,
            hidden_dim: 8,
            n_subjects: 3,
            gamma: 0.05,
            use_batchnorm: true,
        };
        let p = SwCnnParams::<f64>::init(&cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_data(
            &[6, 16],
            (0..6 * 16).map(|_| rng.gen::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let params: Vec<Tensor<f64>> = p.named_parameters().into_iter().map(|(_, t)| t).collect();
        let err = grad_check_params(
            |g| {
                let logits = p.forward(g, &x, Mode::Train)?;
                multitask_loss(g, &logits, 1, 2, cfg.gamma)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {}", err);
    }
}
