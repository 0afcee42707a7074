//! Constant-memory streaming inference: consume the signal `hop` samples at
//! a time and emit a decision per step once the first full feature window
//! has arrived. Reproduces the batch forward on the same prefix.

use super::{softmax_probs, SwimParams};
use crate::error::{Error, Result};
use crate::ssm::{matvec, BlockState, RMS_EPS};
use crate::tensor::{lit, Graph, Mode, Scalar, Tensor};

/// Streaming state: the trailing raw-sample window, per-block recurrent
/// state, and the running pooled feature sum.
pub struct StreamState<F: Scalar> {
    n_channels: usize,
    /// Row-major `[channel][window_len]` sliding buffer.
    ring: Vec<F>,
    /// Samples currently buffered per channel (saturates at `window_len`).
    filled: usize,
    blocks: Vec<BlockState<F>>,
    pooled_sum: Vec<F>,
    n_steps: usize,
}

impl<F: Scalar> StreamState<F> {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
}

/// One emitted decision.
#[derive(Debug, Clone)]
pub struct StreamOutput<F: Scalar> {
    pub logits: Vec<F>,
    pub posterior: Vec<F>,
    /// Index of the feature window this decision pooled up to (1-based).
    pub n_windows: usize,
}

impl<F: Scalar> StreamOutput<F> {
    pub fn decision(&self) -> usize {
        self.posterior
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Builds a fresh stream for the given model.
pub fn stream_init<F: Scalar>(params: &SwimParams<F>, n_channels: usize) -> Result<StreamState<F>> {
    params.config.validate()?;
    if n_channels != params.config.cnn.in_channels {
        return Err(Error::shape(
            "stream",
            format!("{} channels vs configured {}", n_channels, params.config.cnn.in_channels),
        ));
    }
    Ok(StreamState {
        n_channels,
        ring: vec![F::zero(); n_channels * params.config.window_len],
        filled: 0,
        blocks: params.blocks.iter().map(|b| BlockState::new(&b.config)).collect(),
        pooled_sum: vec![F::zero(); params.config.ssm.d_model],
        n_steps: 0,
    })
}

/// Pushes `hop` new samples per channel (row-major `[channel][hop]`).
/// Returns `None` until the first full window has been buffered, then one
/// decision per push.
pub fn stream_push<F: Scalar>(
    params: &SwimParams<F>,
    state: &mut StreamState<F>,
    chunk: &[F],
) -> Result<Option<StreamOutput<F>>> {
    let hop = params.config.hop;
    let wl = params.config.window_len;
    let c = state.n_channels;
    if chunk.len() != c * hop {
        return Err(Error::shape(
            "stream",
            format!("chunk has {} values, want {}×{}", chunk.len(), c, hop),
        ));
    }
    // slide the buffer and append the chunk
    for ch in 0..c {
        let row = &mut state.ring[ch * wl..(ch + 1) * wl];
        row.copy_within(hop.., 0);
        row[wl - hop..].copy_from_slice(&chunk[ch * hop..(ch + 1) * hop]);
    }
    state.filled = (state.filled + hop).min(wl);
    if state.filled < wl {
        return Ok(None);
    }

    // re-centered window through the CNN (off-tape)
    let mut w = vec![F::zero(); c * wl];
    for ch in 0..c {
        let src = &state.ring[ch * wl..(ch + 1) * wl];
        let mean = src.iter().copied().sum::<F>() / lit::<F>(wl as f64);
        for (dst, &v) in w[ch * wl..(ch + 1) * wl].iter_mut().zip(src) {
            *dst = v - mean;
        }
    }
    let g = Graph::inference();
    let win = Tensor::from_data(&[c, wl], w)?;
    let feats = params.cnn.features(&g, &win, Mode::Eval)?;

    // input projection, then one recurrent step per block
    let mut row = matvec(&params.w_in, &feats.to_vec());
    let b_in = params.b_in.to_vec();
    for (v, b) in row.iter_mut().zip(&b_in) {
        *v = *v + *b;
    }
    for (block, bs) in params.blocks.iter().zip(&mut state.blocks) {
        row = block.step(bs, &row)?;
    }

    // final norm, running-mean pooling, head
    let dm = row.len();
    let ms = row.iter().map(|&v| v * v).sum::<F>() / lit::<F>(dm as f64);
    let ir = F::one() / (ms + lit::<F>(RMS_EPS)).sqrt();
    let gain = params.norm_f.to_vec();
    for (i, v) in row.iter_mut().enumerate() {
        *v = gain[i] * *v * ir;
    }
    for (s, v) in state.pooled_sum.iter_mut().zip(&row) {
        *s = *s + *v;
    }
    state.n_steps += 1;
    let inv_n = F::one() / lit::<F>(state.n_steps as f64);
    let pooled: Vec<F> = state.pooled_sum.iter().map(|&s| s * inv_n).collect();

    let mut logits = matvec(&params.head_w, &pooled);
    let head_b = params.head_b.to_vec();
    for (v, b) in logits.iter_mut().zip(&head_b) {
        *v = *v + *b;
    }
    let posterior = softmax_probs(&logits);
    Ok(Some(StreamOutput { logits, posterior, n_windows: state.n_steps }))
}
