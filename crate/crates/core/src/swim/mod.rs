//! The full decoder: short-window CNN features over a sliding 1-s window,
//! a stack of selective state-space blocks over the resulting feature
//! sequence, and a linear locus head on the pooled output.

mod stream;

pub use stream::{stream_init, stream_push, StreamOutput, StreamState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{MambaBlockParams, ScanMode, SsmConfig, RMS_EPS};
use crate::swcnn::{uniform_init, SwCnnConfig, SwCnnParams};
use crate::tensor::{lit, Graph, Mode, Scalar, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwimConfig {
    pub cnn: SwCnnConfig,
    pub ssm: SsmConfig,
    /// Sliding feature window in samples (1 s at 128 Hz).
    pub window_len: usize,
    /// Feature hop in samples (0.125 s at 128 Hz).
    pub hop: usize,
    pub n_classes: usize,
}

impl Default for SwimConfig {
    fn default() -> Self {
        SwimConfig {
            cnn: SwCnnConfig::default(),
            ssm: SsmConfig::default(),
            window_len: 128,
            hop: 16,
            n_classes: 2,
        }
    }
}

impl SwimConfig {
    pub fn validate(&self) -> Result<()> {
        self.cnn.validate()?;
        self.ssm.validate()?;
        if self.window_len == 0 || self.hop == 0 || self.n_classes < 2 {
            return Err(Error::Config("swim: window_len, hop, n_classes must be positive".into()));
        }
        if self.window_len % self.hop != 0 {
            return Err(Error::Config(format!(
                "swim: hop {} must divide window_len {} so streamed and batch windows align",
                self.hop, self.window_len
            )));
        }
        if self.window_len < self.cnn.kernel_time {
            return Err(Error::Config("swim: feature window shorter than CNN kernel".into()));
        }
        Ok(())
    }

    /// Number of sliding feature windows in a `t_total`-sample input.
    pub fn n_windows(&self, t_total: usize) -> Result<usize> {
        if t_total < self.window_len {
            return Err(Error::arg(
                "swim",
                format!("input length {} shorter than feature window {}", t_total, self.window_len),
            ));
        }
        Ok((t_total - self.window_len) / self.hop + 1)
    }
}

pub struct SwimParams<F: Scalar> {
    pub config: SwimConfig,
    pub cnn: SwCnnParams<F>,
    pub w_in: Tensor<F>,
    pub b_in: Tensor<F>,
    pub blocks: Vec<MambaBlockParams<F>>,
    pub norm_f: Tensor<F>,
    pub head_w: Tensor<F>,
    pub head_b: Tensor<F>,
}

impl<F: Scalar> SwimParams<F> {
    pub fn init(config: &SwimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cnn = SwCnnParams::init(&config.cnn, rng.gen())?;
        let (dm, h) = (config.ssm.d_model, config.cnn.hidden_dim);
        let w_in = uniform_init(&mut rng, &[dm, h], h);
        let b_in = uniform_init(&mut rng, &[dm], h);
        let blocks = (0..config.ssm.n_layers)
            .map(|_| MambaBlockParams::init(&config.ssm, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let norm_f = Tensor::from_data(&[dm], vec![F::one(); dm])?.requires_grad();
        let head_w = uniform_init(&mut rng, &[config.n_classes, dm], dm);
        let head_b = uniform_init(&mut rng, &[config.n_classes], dm);
        Ok(SwimParams { config: config.clone(), cnn, w_in, b_in, blocks, norm_f, head_w, head_b })
    }

    /// Runs the CNN over every sliding window of a `[n_channels][t_total]`
    /// row-major signal and stacks the feature rows to `[n, hidden]`.
    /// Each window is re-centered per channel before the CNN sees it.
    pub fn cnn_feature_sequence(
        &self,
        g: &Graph<F>,
        x: &[F],
        n_channels: usize,
        t_total: usize,
        mode: Mode,
    ) -> Result<Tensor<F>> {
        if x.len() != n_channels * t_total {
            return Err(Error::shape(
                "swim",
                format!("signal has {} values, want {}×{}", x.len(), n_channels, t_total),
            ));
        }
        let n = self.config.n_windows(t_total)?;
        let wl = self.config.window_len;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let start = i * self.config.hop;
            let mut w = vec![F::zero(); n_channels * wl];
            for c in 0..n_channels {
                let src = &x[c * t_total + start..c * t_total + start + wl];
                let mean = src.iter().copied().sum::<F>() / lit::<F>(wl as f64);
                for (dst, &v) in w[c * wl..(c + 1) * wl].iter_mut().zip(src) {
                    *dst = v - mean;
                }
            }
            let win = Tensor::from_data(&[n_channels, wl], w)?;
            rows.push(self.cnn.features(g, &win, mode)?);
        }
        g.stack_rows(&rows)
    }

    /// Full forward pass to the `[n_classes]` logits.
    pub fn forward(
        &self,
        g: &Graph<F>,
        x: &[F],
        n_channels: usize,
        t_total: usize,
        mode: Mode,
    ) -> Result<Tensor<F>> {
        let feats = self.cnn_feature_sequence(g, x, n_channels, t_total, mode)?;
        let mut h = g.linear(&feats, &self.w_in, Some(&self.b_in))?;
        let scan_mode = self.config.ssm.scan_mode();
        for block in &self.blocks {
            h = block.forward(g, &h, scan_mode)?;
        }
        let h = g.rmsnorm(&h, &self.norm_f, lit::<F>(RMS_EPS))?;
        let pooled = g.mean_rows(&h)?;
        g.linear(&pooled, &self.head_w, Some(&self.head_b))
    }

    /// Optimizer-visible parameters. CNN names keep their `swcnn.` prefix so
    /// the trainer can give the pretrained extractor its own learning rate.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<F>)> {
        let mut v = self.cnn.named_parameters();
        v.push(("swim.in.weight".into(), self.w_in.clone()));
        v.push(("swim.in.bias".into(), self.b_in.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(b.named_parameters(&format!("mamba.{}", i)));
        }
        v.push(("mamba.norm_f.gain".into(), self.norm_f.clone()));
        v.push(("swim.head.weight".into(), self.head_w.clone()));
        v.push(("swim.head.bias".into(), self.head_b.clone()));
        v
    }

    pub fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut v = self.cnn.export_tensors();
        for (name, t) in self.named_parameters().into_iter().skip(self.cnn.named_parameters().len()) {
            v.push((name, t.shape().to_vec(), t.to_vec()));
        }
        v
    }

    pub fn import_tensors(
        config: &SwimConfig,
        mut get: impl FnMut(&str) -> Result<(Vec<usize>, Vec<F>)>,
    ) -> Result<Self> {
        config.validate()?;
        let cnn = SwCnnParams::import_tensors(&config.cnn, &mut get)?;
        let mut params = SwimParams::init(config, 0)?;
        params.cnn = cnn;
        let skip = params.cnn.named_parameters().len();
        for (name, t) in params.named_parameters().into_iter().skip(skip) {
            let (shape, data) = get(&name)?;
            if shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    name,
                    shape,
                    t.shape()
                )));
            }
            t.set_data(data);
        }
        Ok(params)
    }

    pub fn cast<G: Scalar>(&self) -> SwimParams<G> {
        SwimParams {
            config: self.config.clone(),
            cnn: self.cnn.cast(),
            w_in: self.w_in.cast(),
            b_in: self.b_in.cast(),
            blocks: self.blocks.iter().map(|b| b.cast()).collect(),
            norm_f: self.norm_f.cast(),
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
        }
    }

    /// Scan mode used by the batch forward.
    pub fn scan_mode(&self) -> ScanMode {
        self.config.ssm.scan_mode()
    }
}

/// Numerically stable softmax over a logit slice.
pub fn softmax_probs<F: Scalar>(logits: &[F]) -> Vec<F> {
    let m = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<F> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z = exps.iter().copied().sum::<F>();
    exps.into_iter().map(|e| e / z).collect()
}
