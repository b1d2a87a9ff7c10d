//! Layer definitions and their forward/backward kernels.
//!
//! Kernels are plain nested loops over flat buffers. In bfloat16-emulated
//! mode every multiply-accumulate *input* (activations, weights, and incoming
//! gradients) is rounded to the nearest bfloat16 value first; accumulation
//! always stays in f64.

use crate::bf16::round_to_bfloat16;
use crate::tensor::Tensor;
use crate::{PrecisionMode, Result, TensorError};

/// Index of a parameter tensor inside its owning network.
pub type ParamId = usize;
/// Index of a running-statistics slot inside its owning network.
pub type StatsId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Dense {
        in_features: usize,
        out_features: usize,
        weight: ParamId,
        bias: ParamId,
    },
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: usize,
        padding: Padding,
        weight: ParamId,
        bias: ParamId,
    },
    BatchNorm {
        features: usize,
        eps: f64,
        momentum: f64,
        gamma: ParamId,
        beta: ParamId,
        stats: StatsId,
    },
    LeakyRelu {
        slope: f64,
    },
    Relu,
    Sigmoid,
    Tanh,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    ConcatInput,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv3d { .. } => "conv3d",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Tanh => "tanh",
            Layer::Flatten => "flatten",
            Layer::Reshape { .. } => "reshape",
            Layer::ConcatInput => "concat_input",
        }
    }
}

fn rounded(t: &Tensor, precision: PrecisionMode) -> Tensor {
    match precision {
        PrecisionMode::Full => t.clone(),
        PrecisionMode::Bfloat16Emulated => round_to_bfloat16(t),
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// y[n,o] = sum_i x[n,i] * w[o,i] + b[o]
pub(crate) fn dense_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    precision: PrecisionMode,
) -> Result<Tensor> {
    let (n, in_f) = match x.shape() {
        [n, i] => (*n, *i),
        other => {
            return Err(TensorError::ShapeMismatch(format!(
                "dense input must be 2-d, got {other:?}"
            )))
        }
    };
    let (out_f, w_in) = (w.shape()[0], w.shape()[1]);
    if w_in != in_f {
        return Err(TensorError::ShapeMismatch(format!(
            "dense weight expects {w_in} input features, input has {in_f}"
        )));
    }
    let x = rounded(x, precision);
    let w = rounded(w, precision);
    let xs = x.data();
    let ws = w.data();
    let bs = b.data();
    let mut out = vec![0.0; n * out_f];
    for s in 0..n {
        let xrow = &xs[s * in_f..(s + 1) * in_f];
        for o in 0..out_f {
            let wrow = &ws[o * in_f..(o + 1) * in_f];
            let mut acc = bs[o];
            for i in 0..in_f {
                acc += xrow[i] * wrow[i];
            }
            out[s * out_f + o] = acc;
        }
    }
    Tensor::new(vec![n, out_f], out)
}

/// Returns (dw, db, dx).
pub(crate) fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    precision: PrecisionMode,
) -> (Tensor, Tensor, Tensor) {
    let n = x.shape()[0];
    let in_f = x.shape()[1];
    let out_f = w.shape()[0];
    let x = rounded(x, precision);
    let w = rounded(w, precision);
    let g = rounded(grad_out, precision);
    let xs = x.data();
    let ws = w.data();
    let gs = g.data();
    let mut dw = vec![0.0; out_f * in_f];
    let mut db = vec![0.0; out_f];
    let mut dx = vec![0.0; n * in_f];
    for s in 0..n {
        let xrow = &xs[s * in_f..(s + 1) * in_f];
        let grow = &gs[s * out_f..(s + 1) * out_f];
        let dxrow = &mut dx[s * in_f..(s + 1) * in_f];
        for o in 0..out_f {
            let go = grow[o];
            db[o] += go;
            let wrow = &ws[o * in_f..(o + 1) * in_f];
            let dwrow = &mut dw[o * in_f..(o + 1) * in_f];
            for i in 0..in_f {
                dwrow[i] += go * xrow[i];
                dxrow[i] += go * wrow[i];
            }
        }
    }
    (
        Tensor::new(vec![out_f, in_f], dw).expect("dense dw shape"),
        Tensor::new(vec![out_f], db).expect("dense db shape"),
        Tensor::new(vec![n, in_f], dx).expect("dense dx shape"),
    )
}

// ---------------------------------------------------------------------------
// Conv3d
// ---------------------------------------------------------------------------

/// Per-axis padding (low side, high side) and output size.
pub(crate) fn conv_axis(
    dim: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize)> {
    match padding {
        Padding::Valid => {
            if k > dim {
                return Err(TensorError::ShapeMismatch(format!(
                    "kernel extent {k} larger than input extent {dim} with valid padding"
                )));
            }
            Ok((0, 0, (dim - k) / stride + 1))
        }
        Padding::Same => {
            let out = dim.div_ceil(stride);
            let needed = (out - 1) * stride + k;
            let total = needed.saturating_sub(dim);
            let lo = total / 2;
            // Odd padding puts the extra cell on the high side.
            let hi = total - lo;
            if k > dim + total {
                return Err(TensorError::ShapeMismatch(format!(
                    "kernel extent {k} larger than padded input extent {}",
                    dim + total
                )));
            }
            Ok((lo, hi, out))
        }
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    k_out: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: [(usize, usize); 3],
    in_dims: [usize; 3],
    pad_dims: [usize; 3],
    out_dims: [usize; 3],
}

fn conv_geometry(x: &Tensor, k: &Tensor, stride: usize, padding: Padding) -> Result<ConvGeom> {
    if stride == 0 {
        return Err(TensorError::ShapeMismatch("stride must be >= 1".into()));
    }
    let (n, c, d, h, w) = match x.shape() {
        [n, c, d, h, w] => (*n, *c, *d, *h, *w),
        other => {
            return Err(TensorError::ShapeMismatch(format!(
                "conv3d input must be 5-d [N,C,D,H,W], got {other:?}"
            )))
        }
    };
    let (k_out, kc, kd, kh, kw) = match k.shape() {
        [ko, kc, kd, kh, kw] => (*ko, *kc, *kd, *kh, *kw),
        other => {
            return Err(TensorError::ShapeMismatch(format!(
                "conv3d kernel must be 5-d [K,C,kd,kh,kw], got {other:?}"
            )))
        }
    };
    if kc != c {
        return Err(TensorError::ShapeMismatch(format!(
            "conv3d channel mismatch: input has {c} channels, kernel expects {kc}"
        )));
    }
    let (pd, ph, pw) = (
        conv_axis(d, kd, stride, padding)?,
        conv_axis(h, kh, stride, padding)?,
        conv_axis(w, kw, stride, padding)?,
    );
    Ok(ConvGeom {
        n,
        c,
        k_out,
        kd,
        kh,
        kw,
        stride,
        pad: [(pd.0, pd.1), (ph.0, ph.1), (pw.0, pw.1)],
        in_dims: [d, h, w],
        pad_dims: [d + pd.0 + pd.1, h + ph.0 + ph.1, w + pw.0 + pw.1],
        out_dims: [pd.2, ph.2, pw.2],
    })
}

fn pad_input(x: &Tensor, g: &ConvGeom) -> Vec<f64> {
    let [d, h, w] = g.in_dims;
    let [dp, hp, wp] = g.pad_dims;
    let mut out = vec![0.0; g.n * g.c * dp * hp * wp];
    let xs = x.data();
    for n in 0..g.n {
        for c in 0..g.c {
            let src_base = (n * g.c + c) * d * h * w;
            let dst_base = (n * g.c + c) * dp * hp * wp;
            for z in 0..d {
                for y in 0..h {
                    let src = src_base + (z * h + y) * w;
                    let dst = dst_base + ((z + g.pad[0].0) * hp + y + g.pad[1].0) * wp + g.pad[2].0;
                    out[dst..dst + w].copy_from_slice(&xs[src..src + w]);
                }
            }
        }
    }
    out
}

/// 3-d cross-correlation without bias.
///
/// Output extent per axis is floor((padded - kernel)/stride) + 1; `Same`
/// padding is symmetric with the extra cell on the high side.
pub fn conv3d_forward(x: &Tensor, k: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    conv3d_forward_bias(x, k, None, stride, padding, PrecisionMode::Full)
}

pub(crate) fn conv3d_forward_bias(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
    precision: PrecisionMode,
) -> Result<Tensor> {
    let geom = conv_geometry(x, k, stride, padding)?;
    let x = rounded(x, precision);
    let k = rounded(k, precision);
    let xpad = pad_input(&x, &geom);
    let ks = k.data();
    let [dp, hp, wp] = geom.pad_dims;
    let [od, oh, ow] = geom.out_dims;
    let s = geom.stride;
    let mut out = vec![0.0; geom.n * geom.k_out * od * oh * ow];
    for n in 0..geom.n {
        for ko in 0..geom.k_out {
            let b = bias.map_or(0.0, |b| b.data()[ko]);
            let out_base = (n * geom.k_out + ko) * od * oh * ow;
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = b;
                        for c in 0..geom.c {
                            let in_base = (n * geom.c + c) * dp * hp * wp;
                            let k_base = (ko * geom.c + c) * geom.kd * geom.kh * geom.kw;
                            for zd in 0..geom.kd {
                                for zh in 0..geom.kh {
                                    let row =
                                        in_base + ((z * s + zd) * hp + y * s + zh) * wp + xo * s;
                                    let krow = k_base + (zd * geom.kh + zh) * geom.kw;
                                    for zw in 0..geom.kw {
                                        acc += xpad[row + zw] * ks[krow + zw];
                                    }
                                }
                            }
                        }
                        out[out_base + (z * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![geom.n, geom.k_out, od, oh, ow], out)
}

/// Returns (dk, db, dx).
pub(crate) fn conv3d_backward(
    x: &Tensor,
    k: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
    precision: PrecisionMode,
) -> Result<(Tensor, Tensor, Tensor)> {
    let geom = conv_geometry(x, k, stride, padding)?;
    let xr = rounded(x, precision);
    let kr = rounded(k, precision);
    let gr = rounded(grad_out, precision);
    let xpad = pad_input(&xr, &geom);
    let ks = kr.data();
    let gs = gr.data();
    let [dp, hp, wp] = geom.pad_dims;
    let [od, oh, ow] = geom.out_dims;
    let s = geom.stride;
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; geom.k_out];
    let mut dxpad = vec![0.0; xpad.len()];
    for n in 0..geom.n {
        for ko in 0..geom.k_out {
            let out_base = (n * geom.k_out + ko) * od * oh * ow;
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let go = gs[out_base + (z * oh + y) * ow + xo];
                        if go == 0.0 {
                            continue;
                        }
                        db[ko] += go;
                        for c in 0..geom.c {
                            let in_base = (n * geom.c + c) * dp * hp * wp;
                            let k_base = (ko * geom.c + c) * geom.kd * geom.kh * geom.kw;
                            for zd in 0..geom.kd {
                                for zh in 0..geom.kh {
                                    let row =
                                        in_base + ((z * s + zd) * hp + y * s + zh) * wp + xo * s;
                                    let krow = k_base + (zd * geom.kh + zh) * geom.kw;
                                    for zw in 0..geom.kw {
                                        dk[krow + zw] += xpad[row + zw] * go;
                                        dxpad[row + zw] += ks[krow + zw] * go;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // Crop the padded input gradient back to the input extent.
    let [d, h, w] = geom.in_dims;
    let mut dx = vec![0.0; x.len()];
    for n in 0..geom.n {
        for c in 0..geom.c {
            let src_base = (n * geom.c + c) * dp * hp * wp;
            let dst_base = (n * geom.c + c) * d * h * w;
            for z in 0..d {
                for y in 0..h {
                    let src = src_base + ((z + geom.pad[0].0) * hp + y + geom.pad[1].0) * wp + geom.pad[2].0;
                    let dst = dst_base + (z * h + y) * w;
                    dx[dst..dst + w].copy_from_slice(&dxpad[src..src + w]);
                }
            }
        }
    }
    Ok((
        Tensor::new(k.shape().to_vec(), dk)?,
        Tensor::new(vec![geom.k_out], db)?,
        Tensor::new(x.shape().to_vec(), dx)?,
    ))
}

// ---------------------------------------------------------------------------
// BatchNorm (channel axis = 1, statistics over all other axes)
// ---------------------------------------------------------------------------

pub(crate) struct BnDims {
    pub n: usize,
    pub c: usize,
    pub spatial: usize,
}

pub(crate) fn bn_dims(x: &Tensor, features: usize) -> Result<BnDims> {
    let shape = x.shape();
    if shape.len() < 2 || shape[1] != features {
        return Err(TensorError::ShapeMismatch(format!(
            "batchnorm over {features} features got input shape {shape:?}"
        )));
    }
    Ok(BnDims {
        n: shape[0],
        c: features,
        spatial: shape[2..].iter().product::<usize>().max(1),
    })
}

/// Per-channel biased mean/variance of a batch.
pub(crate) fn bn_batch_stats(x: &Tensor, dims: &BnDims) -> (Vec<f64>, Vec<f64>) {
    let m = (dims.n * dims.spatial) as f64;
    let xs = x.data();
    let mut mean = vec![0.0; dims.c];
    let mut var = vec![0.0; dims.c];
    for n in 0..dims.n {
        for c in 0..dims.c {
            let base = (n * dims.c + c) * dims.spatial;
            for i in 0..dims.spatial {
                mean[c] += xs[base + i];
            }
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for n in 0..dims.n {
        for c in 0..dims.c {
            let base = (n * dims.c + c) * dims.spatial;
            for i in 0..dims.spatial {
                let d = xs[base + i] - mean[c];
                var[c] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= m;
    }
    (mean, var)
}

pub(crate) fn bn_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    dims: &BnDims,
) -> Tensor {
    let xs = x.data();
    let gs = gamma.data();
    let bs = beta.data();
    let mut out = vec![0.0; xs.len()];
    for n in 0..dims.n {
        for c in 0..dims.c {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let base = (n * dims.c + c) * dims.spatial;
            for i in 0..dims.spatial {
                out[base + i] = gs[c] * (xs[base + i] - mean[c]) * inv + bs[c];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("bn shape")
}

/// Backward through train-mode normalization (statistics depend on the batch).
/// Returns (dgamma, dbeta, dx).
pub(crate) fn bn_backward_train(
    x: &Tensor,
    gamma: &Tensor,
    grad_out: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    dims: &BnDims,
) -> (Tensor, Tensor, Tensor) {
    let m = (dims.n * dims.spatial) as f64;
    let xs = x.data();
    let gs = grad_out.data();
    let gam = gamma.data();
    let mut dgamma = vec![0.0; dims.c];
    let mut dbeta = vec![0.0; dims.c];
    let mut sum_g = vec![0.0; dims.c];
    let mut sum_gx = vec![0.0; dims.c];
    for n in 0..dims.n {
        for c in 0..dims.c {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let base = (n * dims.c + c) * dims.spatial;
            for i in 0..dims.spatial {
                let xh = (xs[base + i] - mean[c]) * inv;
                let g = gs[base + i];
                dgamma[c] += g * xh;
                dbeta[c] += g;
                sum_g[c] += g;
                sum_gx[c] += g * xh;
            }
        }
    }
    let mut dx = vec![0.0; xs.len()];
    for n in 0..dims.n {
        for c in 0..dims.c {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let base = (n * dims.c + c) * dims.spatial;
            for i in 0..dims.spatial {
                let xh = (xs[base + i] - mean[c]) * inv;
                let g = gs[base + i];
                dx[base + i] = gam[c] * inv / m * (m * g - sum_g[c] - xh * sum_gx[c]);
            }
        }
    }
    (
        Tensor::new(vec![dims.c], dgamma).expect("bn dgamma"),
        Tensor::new(vec![dims.c], dbeta).expect("bn dbeta"),
        Tensor::new(x.shape().to_vec(), dx).expect("bn dx"),
    )
}

/// Backward through eval-mode normalization (running statistics are constants).
pub(crate) fn bn_backward_eval(
    x: &Tensor,
    gamma: &Tensor,
    grad_out: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    dims: &BnDims,
) -> (Tensor, Tensor, Tensor) {
    let xs = x.data();
    let gs = grad_out.data();
    let gam = gamma.data();
    let mut dgamma = vec![0.0; dims.c];
    let mut dbeta = vec![0.0; dims.c];
    let mut dx = vec![0.0; xs.len()];
    for n in 0..dims.n {
        for c in 0..dims.c {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let base = (n * dims.c + c) * dims.spatial;
            for i in 0..dims.spatial {
                let g = gs[base + i];
                dgamma[c] += g * (xs[base + i] - mean[c]) * inv;
                dbeta[c] += g;
                dx[base + i] = g * gam[c] * inv;
            }
        }
    }
    (
        Tensor::new(vec![dims.c], dgamma).expect("bn dgamma"),
        Tensor::new(vec![dims.c], dbeta).expect("bn dbeta"),
        Tensor::new(x.shape().to_vec(), dx).expect("bn dx"),
    )
}
