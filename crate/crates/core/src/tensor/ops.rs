//! Forward/adjoint implementations for every recorded operation.

use super::{lit, BatchNormState, Graph, Mode, Scalar, Tensor};
use crate::error::{Error, Result};

/// Pointwise nonlinearity kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
    Softplus,
    Exp,
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softplus<F: Scalar>(x: F) -> F {
    // ln(1 + e^x), saturating to x for large x.
    let twenty = lit::<F>(20.0);
    if x > twenty {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<F: Scalar> Graph<F> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.shape() != b.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.with_data(|ad| b.with_data(|bd| ad.iter().zip(bd).map(|(x, y)| *x + *y).collect()));
        let out = Tensor::from_data(a.shape(), data)?;
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(move || {
            if let Some(gy) = oc.grad() {
                ac.accumulate_grad(&gy);
                bc.accumulate_grad(&gy);
            }
        });
        Ok(out)
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.shape() != b.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.with_data(|ad| b.with_data(|bd| ad.iter().zip(bd).map(|(x, y)| *x * *y).collect()));
        let out = Tensor::from_data(a.shape(), data)?;
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let bd = bc.to_vec();
            let ga: Vec<F> = gy.iter().zip(&bd).map(|(g, y)| *g * *y).collect();
            ac.accumulate_grad(&ga);
            let ad = ac.to_vec();
            let gb: Vec<F> = gy.iter().zip(&ad).map(|(g, x)| *g * *x).collect();
            bc.accumulate_grad(&gb);
        });
        Ok(out)
    }

    /// Multiplication by a compile-time constant (not differentiated w.r.t. `c`).
    pub fn scale(&self, a: &Tensor<F>, c: F) -> Result<Tensor<F>> {
        let data = a.with_data(|ad| ad.iter().map(|x| *x * c).collect());
        let out = Tensor::from_data(a.shape(), data)?;
        let (ac, oc) = (a.clone(), out.clone());
        self.record(move || {
            if let Some(gy) = oc.grad() {
                let ga: Vec<F> = gy.iter().map(|g| *g * c).collect();
                ac.accumulate_grad(&ga);
            }
        });
        Ok(out)
    }

    /// Affine map over the trailing dimension: `y = x·Wᵀ + b`.
    ///
    /// `x` may be `[d_in]` or `[n, d_in]`; `w` is `[d_out, d_in]`.
    pub fn linear(&self, x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        let ws = w.shape();
        if ws.len() != 2 {
            return Err(Error::shape("linear", format!("weight must be 2-D, got {:?}", ws)));
        }
        let (d_out, d_in) = (ws[0], ws[1]);
        let xs = x.shape();
        if xs.is_empty() || *xs.last().unwrap() != d_in {
            return Err(Error::shape(
                "linear",
                format!("input {:?} incompatible with weight {:?}", xs, ws),
            ));
        }
        if let Some(bias) = b {
            if bias.shape() != [d_out] {
                return Err(Error::shape("linear", format!("bias {:?}, want [{}]", bias.shape(), d_out)));
            }
        }
        let rows = x.numel() / d_in;
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = d_out;

        let mut y = vec![F::zero(); rows * d_out];
        x.with_data(|xd| {
            w.with_data(|wd| {
                for r in 0..rows {
                    let xr = &xd[r * d_in..(r + 1) * d_in];
                    let yr = &mut y[r * d_out..(r + 1) * d_out];
                    for o in 0..d_out {
                        let wr = &wd[o * d_in..(o + 1) * d_in];
                        let mut acc = F::zero();
                        for i in 0..d_in {
                            acc = acc + wr[i] * xr[i];
                        }
                        yr[o] = acc;
                    }
                }
            })
        });
        if let Some(bias) = b {
            bias.with_data(|bd| {
                for r in 0..rows {
                    for o in 0..d_out {
                        y[r * d_out + o] = y[r * d_out + o] + bd[o];
                    }
                }
            });
        }
        let out = Tensor::from_data(&out_shape, y)?;
        let (xc, wc, bc, oc) = (x.clone(), w.clone(), b.cloned(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let wd = wc.to_vec();
            let mut gx = vec![F::zero(); rows * d_in];
            for r in 0..rows {
                let gyr = &gy[r * d_out..(r + 1) * d_out];
                let gxr = &mut gx[r * d_in..(r + 1) * d_in];
                for o in 0..d_out {
                    let g = gyr[o];
                    let wr = &wd[o * d_in..(o + 1) * d_in];
                    for i in 0..d_in {
                        gxr[i] = gxr[i] + g * wr[i];
                    }
                }
            }
            xc.accumulate_grad(&gx);
            let xd = xc.to_vec();
            let mut gw = vec![F::zero(); d_out * d_in];
            for r in 0..rows {
                let gyr = &gy[r * d_out..(r + 1) * d_out];
                let xr = &xd[r * d_in..(r + 1) * d_in];
                for o in 0..d_out {
                    let g = gyr[o];
                    let gwr = &mut gw[o * d_in..(o + 1) * d_in];
                    for i in 0..d_in {
                        gwr[i] = gwr[i] + g * xr[i];
                    }
                }
            }
            wc.accumulate_grad(&gw);
            if let Some(bias) = &bc {
                let mut gb = vec![F::zero(); d_out];
                for r in 0..rows {
                    for o in 0..d_out {
                        gb[o] = gb[o] + gy[r * d_out + o];
                    }
                }
                bias.accumulate_grad(&gb);
            }
        });
        Ok(out)
    }

    /// 1-D convolution over time with zero padding.
    ///
    /// `x` is `[c, t]`, `kernel` is `[f, c, k]`, `bias` is `[f]`; the output is
    /// `[f, t + pad_left + pad_right − k + 1]`.
    pub fn conv_time(
        &self,
        x: &Tensor<F>,
        kernel: &Tensor<F>,
        bias: &Tensor<F>,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Tensor<F>> {
        let xs = x.shape();
        let ks = kernel.shape();
        if xs.len() != 2 || ks.len() != 3 {
            return Err(Error::shape(
                "conv_time",
                format!("expected x [c,t] and kernel [f,c,k], got {:?} and {:?}", xs, ks),
            ));
        }
        let (c, t) = (xs[0], xs[1]);
        let (f, kc, k) = (ks[0], ks[1], ks[2]);
        if kc != c {
            return Err(Error::shape(
                "conv_time",
                format!("input has {} channels but kernel expects {}", c, kc),
            ));
        }
        if bias.shape() != [f] {
            return Err(Error::shape("conv_time", format!("bias {:?}, want [{}]", bias.shape(), f)));
        }
        if k > t + pad_left + pad_right {
            return Err(Error::arg(
                "conv_time",
                format!("kernel width {} exceeds padded length {}", k, t + pad_left + pad_right),
            ));
        }
        let t_out = t + pad_left + pad_right - k + 1;

        let mut y = vec![F::zero(); f * t_out];
        x.with_data(|xd| {
            kernel.with_data(|kd| {
                bias.with_data(|bd| {
                    for fi in 0..f {
                        let yf = &mut y[fi * t_out..(fi + 1) * t_out];
                        for v in yf.iter_mut() {
                            *v = bd[fi];
                        }
                        for ci in 0..c {
                            let xr = &xd[ci * t..(ci + 1) * t];
                            let kr = &kd[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                            for (ki, &kv) in kr.iter().enumerate() {
                                // y[fi, to] += kv * x[ci, to + ki - pad_left]
                                let lo = pad_left.saturating_sub(ki);
                                let hi = (t + pad_left - ki).min(t_out);
                                for to in lo..hi {
                                    yf[to] = yf[to] + kv * xr[to + ki - pad_left];
                                }
                            }
                        }
                    }
                })
            })
        });
        let out = Tensor::from_data(&[f, t_out], y)?;
        let (xc, kcl, bc, oc) = (x.clone(), kernel.clone(), bias.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let kd = kcl.to_vec();
            let xd = xc.to_vec();
            let mut gx = vec![F::zero(); c * t];
            let mut gk = vec![F::zero(); f * c * k];
            let mut gb = vec![F::zero(); f];
            for fi in 0..f {
                let gyf = &gy[fi * t_out..(fi + 1) * t_out];
                for g in gyf {
                    gb[fi] = gb[fi] + *g;
                }
                for ci in 0..c {
                    let xr = &xd[ci * t..(ci + 1) * t];
                    let gxr = &mut gx[ci * t..(ci + 1) * t];
                    let kr = &kd[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                    let gkr = &mut gk[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                    for ki in 0..k {
                        let lo = pad_left.saturating_sub(ki);
                        let hi = (t + pad_left - ki).min(t_out);
                        let kv = kr[ki];
                        let mut gkv = F::zero();
                        for to in lo..hi {
                            let xi = to + ki - pad_left;
                            gxr[xi] = gxr[xi] + gyf[to] * kv;
                            gkv = gkv + gyf[to] * xr[xi];
                        }
                        gkr[ki] = gkr[ki] + gkv;
                    }
                }
            }
            xc.accumulate_grad(&gx);
            kcl.accumulate_grad(&gk);
            bc.accumulate_grad(&gb);
        });
        Ok(out)
    }

    /// Batch normalization over the time axis of `[f, t]`.
    ///
    /// Train mode normalizes with the statistics of this call and updates the
    /// running averages (unless frozen); eval mode uses the running averages
    /// and rejects a state that has never been updated.
    pub fn batchnorm(
        &self,
        x: &Tensor<F>,
        gamma: &Tensor<F>,
        beta: &Tensor<F>,
        state: &mut BatchNormState<F>,
        mode: Mode,
    ) -> Result<Tensor<F>> {
        let xs = x.shape();
        if xs.len() != 2 {
            return Err(Error::shape("batchnorm", format!("expected [f,t], got {:?}", xs)));
        }
        let (f, t) = (xs[0], xs[1]);
        if gamma.shape() != [f] || beta.shape() != [f] || state.running_mean.len() != f {
            return Err(Error::shape(
                "batchnorm",
                format!("gamma {:?} / beta {:?} / state {} vs {} features", gamma.shape(), beta.shape(), state.running_mean.len(), f),
            ));
        }
        let eps = state.eps;
        let (mean, inv_std): (Vec<F>, Vec<F>) = match mode {
            Mode::Train => {
                if t == 0 {
                    return Err(Error::arg("batchnorm", "empty time axis"));
                }
                let tn = lit::<F>(t as f64);
                let mut mean = vec![F::zero(); f];
                let mut var = vec![F::zero(); f];
                x.with_data(|xd| {
                    for fi in 0..f {
                        let xr = &xd[fi * t..(fi + 1) * t];
                        let mu = xr.iter().copied().sum::<F>() / tn;
                        let v = xr.iter().map(|v| (*v - mu) * (*v - mu)).sum::<F>() / tn;
                        mean[fi] = mu;
                        var[fi] = v;
                    }
                });
                if !state.frozen {
                    let m = state.momentum;
                    let unbias = if t > 1 { lit::<F>(t as f64 / (t as f64 - 1.0)) } else { F::one() };
                    for fi in 0..f {
                        state.running_mean[fi] = (F::one() - m) * state.running_mean[fi] + m * mean[fi];
                        state.running_var[fi] = (F::one() - m) * state.running_var[fi] + m * var[fi] * unbias;
                    }
                    state.updates += 1;
                }
                let inv_std = var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                if state.updates == 0 {
                    return Err(Error::arg("batchnorm", "eval mode with never-updated running statistics"));
                }
                let inv_std = state.running_var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
                (state.running_mean.clone(), inv_std)
            }
        };

        let mut y = vec![F::zero(); f * t];
        let mut xhat = vec![F::zero(); f * t];
        x.with_data(|xd| {
            gamma.with_data(|gd| {
                beta.with_data(|bd| {
                    for fi in 0..f {
                        for ti in 0..t {
                            let i = fi * t + ti;
                            let xh = (xd[i] - mean[fi]) * inv_std[fi];
                            xhat[i] = xh;
                            y[i] = gd[fi] * xh + bd[fi];
                        }
                    }
                })
            })
        });
        let out = Tensor::from_data(&[f, t], y)?;
        let (xc, gc, bc, oc) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        let train = mode == Mode::Train;
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let gd = gc.to_vec();
            let tn = lit::<F>(t as f64);
            let mut gx = vec![F::zero(); f * t];
            let mut ggamma = vec![F::zero(); f];
            let mut gbeta = vec![F::zero(); f];
            for fi in 0..f {
                let row = fi * t..(fi + 1) * t;
                let gyr = &gy[row.clone()];
                let xhr = &xhat[row.clone()];
                let mut sum_gy = F::zero();
                let mut sum_gy_xh = F::zero();
                for ti in 0..t {
                    sum_gy = sum_gy + gyr[ti];
                    sum_gy_xh = sum_gy_xh + gyr[ti] * xhr[ti];
                }
                ggamma[fi] = sum_gy_xh;
                gbeta[fi] = sum_gy;
                let a = gd[fi] * inv_std[fi];
                if train {
                    let mg = sum_gy / tn;
                    let mgx = sum_gy_xh / tn;
                    for ti in 0..t {
                        gx[fi * t + ti] = a * (gyr[ti] - mg - xhr[ti] * mgx);
                    }
                } else {
                    for ti in 0..t {
                        gx[fi * t + ti] = a * gyr[ti];
                    }
                }
            }
            xc.accumulate_grad(&gx);
            gc.accumulate_grad(&ggamma);
            bc.accumulate_grad(&gbeta);
        });
        Ok(out)
    }

    /// Pointwise nonlinearity.
    pub fn activation(&self, x: &Tensor<F>, kind: Activation) -> Result<Tensor<F>> {
        let data: Vec<F> = x.with_data(|xd| {
            xd.iter()
                .map(|&v| match kind {
                    Activation::Relu => v.max(F::zero()),
                    Activation::Silu => v * sigmoid(v),
                    Activation::Sigmoid => sigmoid(v),
                    Activation::Softplus => softplus(v),
                    Activation::Exp => v.exp(),
                })
                .collect()
        });
        let out = Tensor::from_data(x.shape(), data)?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let xd = xc.to_vec();
            let gx: Vec<F> = xd
                .iter()
                .zip(&gy)
                .map(|(&v, &g)| {
                    let d = match kind {
                        Activation::Relu => {
                            if v > F::zero() {
                                F::one()
                            } else {
                                F::zero()
                            }
                        }
                        Activation::Silu => {
                            let s = sigmoid(v);
                            s * (F::one() + v * (F::one() - s))
                        }
                        Activation::Sigmoid => {
                            let s = sigmoid(v);
                            s * (F::one() - s)
                        }
                        Activation::Softplus => sigmoid(v),
                        Activation::Exp => v.exp(),
                    };
                    g * d
                })
                .collect();
            xc.accumulate_grad(&gx);
        });
        Ok(out)
    }

    /// Average over the time (last) axis: `[f, t] → [f]`.
    pub fn mean_over_time(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let xs = x.shape();
        if xs.len() != 2 {
            return Err(Error::shape("mean_over_time", format!("expected [f,t], got {:?}", xs)));
        }
        let (f, t) = (xs[0], xs[1]);
        if t == 0 {
            return Err(Error::arg("mean_over_time", "empty time axis"));
        }
        let tn = lit::<F>(t as f64);
        let data: Vec<F> = x.with_data(|xd| {
            (0..f).map(|fi| xd[fi * t..(fi + 1) * t].iter().copied().sum::<F>() / tn).collect()
        });
        let out = Tensor::from_data(&[f], data)?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let mut gx = vec![F::zero(); f * t];
            for fi in 0..f {
                let g = gy[fi] / tn;
                for ti in 0..t {
                    gx[fi * t + ti] = g;
                }
            }
            xc.accumulate_grad(&gx);
        });
        Ok(out)
    }

    /// Average over the row (first) axis: `[n, d] → [d]`.
    pub fn mean_rows(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let xs = x.shape();
        if xs.len() != 2 {
            return Err(Error::shape("mean_rows", format!("expected [n,d], got {:?}", xs)));
        }
        let (n, d) = (xs[0], xs[1]);
        if n == 0 {
            return Err(Error::arg("mean_rows", "no rows"));
        }
        let nn = lit::<F>(n as f64);
        let mut y = vec![F::zero(); d];
        x.with_data(|xd| {
            for r in 0..n {
                for c in 0..d {
                    y[c] = y[c] + xd[r * d + c];
                }
            }
        });
        for v in y.iter_mut() {
            *v = *v / nn;
        }
        let out = Tensor::from_data(&[d], y)?;
        let (xc, oc) = (x.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let mut gx = vec![F::zero(); n * d];
            for r in 0..n {
                for c in 0..d {
                    gx[r * d + c] = gy[c] / nn;
                }
            }
            xc.accumulate_grad(&gx);
        });
        Ok(out)
    }

    /// Numerically stable `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&self, logits: &Tensor<F>, label: usize) -> Result<Tensor<F>> {
        let ls = logits.shape();
        if ls.len() != 1 {
            return Err(Error::shape("softmax_cross_entropy", format!("expected 1-D logits, got {:?}", ls)));
        }
        let k = ls[0];
        if label >= k {
            return Err(Error::arg(
                "softmax_cross_entropy",
                format!("label {} out of range for {} classes", label, k),
            ));
        }
        let ld = logits.to_vec();
        if ld.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax_cross_entropy logits".into()));
        }
        let max = ld.iter().copied().fold(F::neg_infinity(), F::max);
        let sum_exp = ld.iter().map(|v| (*v - max).exp()).sum::<F>();
        let lse = max + sum_exp.ln();
        let loss = lse - ld[label];
        let probs: Vec<F> = ld.iter().map(|v| (*v - max).exp() / sum_exp).collect();
        let out = Tensor::from_data(&[1], vec![loss])?;
        let (lc, oc) = (logits.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let g = gy[0];
            let mut gx = probs.clone();
            for (i, v) in gx.iter_mut().enumerate() {
                let ind = if i == label { F::one() } else { F::zero() };
                *v = (*v - ind) * g;
            }
            lc.accumulate_grad(&gx);
        });
        Ok(out)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let s = x.with_data(|xd| xd.iter().copied().sum::<F>());
        let out = Tensor::from_data(&[1], vec![s])?;
        let (xc, oc) = (x.clone(), out.clone());
        let n = x.numel();
        self.record(move || {
            if let Some(gy) = oc.grad() {
                xc.accumulate_grad(&vec![gy[0]; n]);
            }
        });
        Ok(out)
    }

    /// Contiguous slice of a 1-D tensor.
    pub fn slice1d(&self, x: &Tensor<F>, start: usize, len: usize) -> Result<Tensor<F>> {
        let xs = x.shape();
        if xs.len() != 1 {
            return Err(Error::shape("slice1d", format!("expected 1-D, got {:?}", xs)));
        }
        if start + len > xs[0] {
            return Err(Error::arg("slice1d", format!("range {}..{} out of bounds for {}", start, start + len, xs[0])));
        }
        let data = x.with_data(|xd| xd[start..start + len].to_vec());
        let out = Tensor::from_data(&[len], data)?;
        let (xc, oc) = (x.clone(), out.clone());
        let total = xs[0];
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let mut gx = vec![F::zero(); total];
            gx[start..start + len].copy_from_slice(&gy);
            xc.accumulate_grad(&gx);
        });
        Ok(out)
    }

    /// Stacks equal-length 1-D tensors into `[n, d]`.
    pub fn stack_rows(&self, rows: &[Tensor<F>]) -> Result<Tensor<F>> {
        if rows.is_empty() {
            return Err(Error::Empty("stack_rows"));
        }
        let d = rows[0].numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.shape() != [d] {
                return Err(Error::shape("stack_rows", format!("row {} has shape {:?}, want [{}]", i, r.shape(), d)));
            }
            r.with_data(|rd| data.extend_from_slice(rd));
        }
        let out = Tensor::from_data(&[rows.len(), d], data)?;
        let rowsc: Vec<Tensor<F>> = rows.to_vec();
        let oc = out.clone();
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            for (i, r) in rowsc.iter().enumerate() {
                r.accumulate_grad(&gy[i * d..(i + 1) * d]);
            }
        });
        Ok(out)
    }

    /// Depthwise 1-D convolution over the row axis of `[n, d]`, causal:
    /// output row `n` only reads rows `n−k+1..=n` (zeros before the start).
    pub fn causal_depthwise_conv(
        &self,
        x: &Tensor<F>,
        w: &Tensor<F>,
        b: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        let xs = x.shape();
        let ws = w.shape();
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::shape(
                "causal_depthwise_conv",
                format!("expected x [n,d] and w [d,k], got {:?} and {:?}", xs, ws),
            ));
        }
        let (n, d) = (xs[0], xs[1]);
        let (wd, k) = (ws[0], ws[1]);
        if wd != d || b.shape() != [d] {
            return Err(Error::shape(
                "causal_depthwise_conv",
                format!("channel mismatch: x {:?}, w {:?}, b {:?}", xs, ws, b.shape()),
            ));
        }
        let mut y = vec![F::zero(); n * d];
        x.with_data(|xd| {
            w.with_data(|wv| {
                b.with_data(|bd| {
                    for r in 0..n {
                        for c in 0..d {
                            let mut acc = bd[c];
                            for j in 0..k {
                                // tap j reads row r - (k-1) + j
                                if r + j + 1 >= k {
                                    let src = r + j + 1 - k;
                                    acc = acc + wv[c * k + j] * xd[src * d + c];
                                }
                            }
                            y[r * d + c] = acc;
                        }
                    }
                })
            })
        });
        let out = Tensor::from_data(&[n, d], y)?;
        let (xc, wc, bc, oc) = (x.clone(), w.clone(), b.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let xd = xc.to_vec();
            let wv = wc.to_vec();
            let mut gx = vec![F::zero(); n * d];
            let mut gw = vec![F::zero(); d * k];
            let mut gb = vec![F::zero(); d];
            for r in 0..n {
                for c in 0..d {
                    let g = gy[r * d + c];
                    gb[c] = gb[c] + g;
                    for j in 0..k {
                        if r + j + 1 >= k {
                            let src = r + j + 1 - k;
                            gx[src * d + c] = gx[src * d + c] + g * wv[c * k + j];
                            gw[c * k + j] = gw[c * k + j] + g * xd[src * d + c];
                        }
                    }
                }
            }
            xc.accumulate_grad(&gx);
            wc.accumulate_grad(&gw);
            bc.accumulate_grad(&gb);
        });
        Ok(out)
    }

    /// Root-mean-square normalization per row of `[n, d]` with gain `g: [d]`.
    pub fn rmsnorm(&self, x: &Tensor<F>, gain: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
        let xs = x.shape();
        if xs.len() != 2 {
            return Err(Error::shape("rmsnorm", format!("expected [n,d], got {:?}", xs)));
        }
        let (n, d) = (xs[0], xs[1]);
        if gain.shape() != [d] {
            return Err(Error::shape("rmsnorm", format!("gain {:?}, want [{}]", gain.shape(), d)));
        }
        let dn = lit::<F>(d as f64);
        let mut y = vec![F::zero(); n * d];
        let mut inv_rms = vec![F::zero(); n];
        x.with_data(|xd| {
            gain.with_data(|gd| {
                for r in 0..n {
                    let xr = &xd[r * d..(r + 1) * d];
                    let ms = xr.iter().map(|v| *v * *v).sum::<F>() / dn;
                    let ir = F::one() / (ms + eps).sqrt();
                    inv_rms[r] = ir;
                    for c in 0..d {
                        y[r * d + c] = gd[c] * xr[c] * ir;
                    }
                }
            })
        });
        let out = Tensor::from_data(&[n, d], y)?;
        let (xc, gc, oc) = (x.clone(), gain.clone(), out.clone());
        self.record(move || {
            let Some(gy) = oc.grad() else { return };
            let xd = xc.to_vec();
            let gd = gc.to_vec();
            let mut gx = vec![F::zero(); n * d];
            let mut ggain = vec![F::zero(); d];
            for r in 0..n {
                let xr = &xd[r * d..(r + 1) * d];
                let gyr = &gy[r * d..(r + 1) * d];
                let ir = inv_rms[r];
                let mut dot = F::zero();
                for c in 0..d {
                    dot = dot + gd[c] * gyr[c] * xr[c];
                    ggain[c] = ggain[c] + gyr[c] * xr[c] * ir;
                }
                let coef = dot * ir * ir * ir / dn;
                for c in 0..d {
                    gx[r * d + c] = gd[c] * gyr[c] * ir - xr[c] * coef;
                }
            }
            xc.accumulate_grad(&gx);
            gc.accumulate_grad(&ggain);
        });
        Ok(out)
    }
}
