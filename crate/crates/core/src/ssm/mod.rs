//! Selective state-space sequence model: gated blocks around a
//! selective scan, with both a batch (tape) forward and a constant-memory
//! per-step streaming path that reproduces it.

mod scan;

pub use scan::{discretize, selective_scan, Discretization, ScanMode};

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::swcnn::uniform_init;
use crate::tensor::{lit, sigmoid, softplus, Activation, Graph, Scalar, Tensor};

/// Epsilon shared by the batch and streaming RMS normalization.
pub const RMS_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsmConfig {
    pub d_model: usize,
    /// Inner width is `expand * d_model`.
    pub expand: usize,
    pub d_state: usize,
    pub conv_width: usize,
    /// Width of the low-rank bottleneck producing the step sizes.
    pub dt_rank: usize,
    pub n_layers: usize,
    pub discretization: Discretization,
    pub scan_chunk: usize,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig {
            d_model: 64,
            expand: 2,
            d_state: 16,
            conv_width: 4,
            dt_rank: 4,
            n_layers: 3,
            discretization: Discretization::ZohEuler,
            scan_chunk: 64,
        }
    }
}

impl SsmConfig {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("expand", self.expand),
            ("d_state", self.d_state),
            ("conv_width", self.conv_width),
            ("dt_rank", self.dt_rank),
            ("n_layers", self.n_layers),
            ("scan_chunk", self.scan_chunk),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("ssm: {} must be positive", name)));
            }
        }
        Ok(())
    }

    pub fn scan_mode(&self) -> ScanMode {
        ScanMode::Chunked(self.scan_chunk)
    }
}

/// Parameters of one residual block: pre-norm, expanding input projections,
/// a short causal depthwise convolution, the input-dependent scan, a SiLU
/// gate, and the contracting output projection.
pub struct MambaBlockParams<F: Scalar> {
    pub config: SsmConfig,
    pub norm_g: Tensor<F>,
    pub w_main: Tensor<F>,
    pub w_gate: Tensor<F>,
    pub conv_w: Tensor<F>,
    pub conv_b: Tensor<F>,
    pub w_b: Tensor<F>,
    pub w_c: Tensor<F>,
    pub w_dt_lo: Tensor<F>,
    pub w_dt: Tensor<F>,
    /// Bias before the softplus producing Δ; initialized so initial step
    /// sizes are log-uniform in [1e-3, 1e-1].
    pub b_dt: Tensor<F>,
    /// State matrix stored as `a_log`; the dynamics use `A = -exp(a_log)`,
    /// which keeps every mode strictly decaying.
    pub a_log: Tensor<F>,
    pub d_skip: Tensor<F>,
    pub w_out: Tensor<F>,
}

impl<F: Scalar> MambaBlockParams<F> {
    pub fn init(config: &SsmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (dm, di, ds, k, r) =
            (config.d_model, config.d_inner(), config.d_state, config.conv_width, config.dt_rank);

        let norm_g = Tensor::from_data(&[dm], vec![F::one(); dm])?.requires_grad();
        let w_main = uniform_init(rng, &[di, dm], dm);
        let w_gate = uniform_init(rng, &[di, dm], dm);
        let conv_w = uniform_init(rng, &[di, k], k);
        let conv_b = uniform_init(rng, &[di], k);
        let w_b = uniform_init(rng, &[ds, di], di);
        let w_c = uniform_init(rng, &[ds, di], di);
        let w_dt_lo = uniform_init(rng, &[r, di], di);
        let w_dt = uniform_init(rng, &[di, r], r);

        // softplus(b_dt) ≈ dt0 with dt0 log-uniform in [1e-3, 1e-1]
        let b_dt_data: Vec<F> = (0..di)
            .map(|_| {
                let ln_dt = rng.gen_range((1e-3f64).ln()..(1e-1f64).ln());
                let dt0 = ln_dt.exp();
                F::from_f64((dt0.exp_m1()).ln()).unwrap()
            })
            .collect();
        let b_dt = Tensor::from_data(&[di], b_dt_data)?.requires_grad();

        // A[d][s] = -(s+1)
        let a_log_data: Vec<F> = (0..di)
            .flat_map(|_| (0..ds).map(|s| F::from_f64(((s + 1) as f64).ln()).unwrap()))
            .collect();
        let a_log = Tensor::from_data(&[di, ds], a_log_data)?.requires_grad();
        let d_skip = Tensor::from_data(&[di], vec![F::one(); di])?.requires_grad();
        let w_out = uniform_init(rng, &[dm, di], di);

        Ok(MambaBlockParams {
            config: config.clone(),
            norm_g,
            w_main,
            w_gate,
            conv_w,
            conv_b,
            w_b,
            w_c,
            w_dt_lo,
            w_dt,
            b_dt,
            a_log,
            d_skip,
            w_out,
        })
    }

    /// Residual block over a `[n, d_model]` sequence.
    pub fn forward(&self, g: &Graph<F>, u: &Tensor<F>, mode: ScanMode) -> Result<Tensor<F>> {
        let us = u.shape();
        if us.len() != 2 || us[1] != self.config.d_model {
            return Err(Error::shape(
                "mamba_block",
                format!("expected [n, {}], got {:?}", self.config.d_model, us),
            ));
        }
        let x = g.rmsnorm(u, &self.norm_g, lit::<F>(RMS_EPS))?;
        let main = g.linear(&x, &self.w_main, None)?;
        let gate = g.linear(&x, &self.w_gate, None)?;
        let conv = g.causal_depthwise_conv(&main, &self.conv_w, &self.conv_b)?;
        let xs = g.activation(&conv, Activation::Silu)?;
        let bmat = g.linear(&xs, &self.w_b, None)?;
        let cmat = g.linear(&xs, &self.w_c, None)?;
        let dt_lo = g.linear(&xs, &self.w_dt_lo, None)?;
        let dt_pre = g.linear(&dt_lo, &self.w_dt, Some(&self.b_dt))?;
        let delta = g.activation(&dt_pre, Activation::Softplus)?;
        let neg_a = g.activation(&self.a_log, Activation::Exp)?;
        let a = g.scale(&neg_a, lit::<F>(-1.0))?;
        let y = selective_scan(
            g,
            &xs,
            &delta,
            &a,
            &bmat,
            &cmat,
            &self.d_skip,
            self.config.discretization,
            mode,
        )?;
        let gate_act = g.activation(&gate, Activation::Silu)?;
        let gated = g.mul(&y, &gate_act)?;
        let out = g.linear(&gated, &self.w_out, None)?;
        g.add(u, &out)
    }

    /// One streaming step: consumes a `d_model` row, updates the state, and
    /// returns the block output for that step. Matches [`Self::forward`] row
    /// by row when started from a fresh state.
    pub fn step(&self, state: &mut BlockState<F>, u: &[F]) -> Result<Vec<F>> {
        let (dm, di, ds, k) =
            (self.config.d_model, self.config.d_inner(), self.config.d_state, self.config.conv_width);
        if u.len() != dm {
            return Err(Error::shape(
                "mamba_step",
                format!("expected {} inputs, got {}", dm, u.len()),
            ));
        }
        // pre-norm
        let dn = lit::<F>(dm as f64);
        let ms = u.iter().map(|&v| v * v).sum::<F>() / dn;
        let ir = F::one() / (ms + lit::<F>(RMS_EPS)).sqrt();
        let gain = self.norm_g.to_vec();
        let normed: Vec<F> = (0..dm).map(|c| gain[c] * u[c] * ir).collect();

        let main = matvec(&self.w_main, &normed);
        let gate = matvec(&self.w_gate, &normed);

        // causal depthwise conv over the last `k` steps
        let conv_w = self.conv_w.to_vec();
        let conv_b = self.conv_b.to_vec();
        let m = state.conv_hist.len();
        let mut conv = vec![F::zero(); di];
        for c in 0..di {
            let mut acc = conv_b[c] + conv_w[c * k + k - 1] * main[c];
            for j in 0..k - 1 {
                // tap j reads the row (k-1-j) steps back
                let back = k - 1 - j;
                if back <= m {
                    acc = acc + conv_w[c * k + j] * state.conv_hist[m - back][c];
                }
            }
            conv[c] = acc;
        }
        state.conv_hist.push_back(main);
        if state.conv_hist.len() > k - 1 {
            state.conv_hist.pop_front();
        }

        let xs: Vec<F> = conv.iter().map(|&v| v * sigmoid(v)).collect();
        let bvec = matvec(&self.w_b, &xs);
        let cvec = matvec(&self.w_c, &xs);
        let dt_lo = matvec(&self.w_dt_lo, &xs);
        let mut dt_pre = matvec(&self.w_dt, &dt_lo);
        let b_dt = self.b_dt.to_vec();
        for (v, b) in dt_pre.iter_mut().zip(&b_dt) {
            *v = softplus(*v + *b);
        }

        let a_log = self.a_log.to_vec();
        let d_skip = self.d_skip.to_vec();
        let disc = self.config.discretization;
        let mut y = vec![F::zero(); di];
        for c in 0..di {
            let dt = dt_pre[c];
            let x = xs[c];
            let mut acc = d_skip[c] * x;
            for s in 0..ds {
                let a = -a_log[c * ds + s].exp();
                let abar = (dt * a).exp();
                let coeff = scan::bbar_coeff(a, dt, abar, disc);
                let h = abar * state.h[c * ds + s] + coeff * bvec[s] * x;
                state.h[c * ds + s] = h;
                acc = acc + cvec[s] * h;
            }
            y[c] = acc;
        }

        let w_out = self.w_out.to_vec();
        let mut out = u.to_vec();
        for (rowi, o) in out.iter_mut().enumerate() {
            let mut acc = F::zero();
            for c in 0..di {
                acc = acc + w_out[rowi * di + c] * y[c] * gate[c] * sigmoid(gate[c]);
            }
            *o = *o + acc;
        }
        Ok(out)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        [
            ("norm.gain", &self.norm_g),
            ("in.main.weight", &self.w_main),
            ("in.gate.weight", &self.w_gate),
            ("conv.weight", &self.conv_w),
            ("conv.bias", &self.conv_b),
            ("b_proj.weight", &self.w_b),
            ("c_proj.weight", &self.w_c),
            ("dt_lo.weight", &self.w_dt_lo),
            ("dt.weight", &self.w_dt),
            ("dt.bias", &self.b_dt),
            ("a_log", &self.a_log),
            ("d_skip", &self.d_skip),
            ("out.weight", &self.w_out),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{}.{}", prefix, n), t.clone()))
        .collect()
    }

    pub fn cast<G: Scalar>(&self) -> MambaBlockParams<G> {
        MambaBlockParams {
            config: self.config.clone(),
            norm_g: self.norm_g.cast(),
            w_main: self.w_main.cast(),
            w_gate: self.w_gate.cast(),
            conv_w: self.conv_w.cast(),
            conv_b: self.conv_b.cast(),
            w_b: self.w_b.cast(),
            w_c: self.w_c.cast(),
            w_dt_lo: self.w_dt_lo.cast(),
            w_dt: self.w_dt.cast(),
            b_dt: self.b_dt.cast(),
            a_log: self.a_log.cast(),
            d_skip: self.d_skip.cast(),
            w_out: self.w_out.cast(),
        }
    }
}

/// Streaming state of one block: the trailing conv inputs and the scan state.
pub struct BlockState<F: Scalar> {
    conv_hist: VecDeque<Vec<F>>,
    h: Vec<F>,
}

impl<F: Scalar> BlockState<F> {
    pub fn new(config: &SsmConfig) -> Self {
        BlockState {
            conv_hist: VecDeque::with_capacity(config.conv_width.saturating_sub(1)),
            h: vec![F::zero(); config.d_inner() * config.d_state],
        }
    }

    pub fn reset(&mut self) {
        self.conv_hist.clear();
        self.h.iter_mut().for_each(|v| *v = F::zero());
    }

    /// Largest state magnitude, for stability monitoring.
    pub fn max_state_abs(&self) -> F {
        self.h.iter().fold(F::zero(), |m, &v| m.max(v.abs()))
    }
}

pub(crate) fn matvec<F: Scalar>(w: &Tensor<F>, x: &[F]) -> Vec<F> {
    let ws = w.shape();
    let (rows, cols) = (ws[0], ws[1]);
    debug_assert_eq!(cols, x.len());
    w.with_data(|wd| {
        (0..rows)
            .map(|r| {
                let row = &wd[r * cols..(r + 1) * cols];
                row.iter().zip(x).map(|(&a, &b)| a * b).sum::<F>()
            })
            .collect()
    })
}

#[cfg(test)]
mod tests;
