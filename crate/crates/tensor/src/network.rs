//! Layered networks: construction, forward evaluation, reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layer::{
    bn_backward_eval, bn_backward_train, bn_batch_stats, bn_dims, bn_forward, conv3d_backward,
    conv3d_forward_bias, conv_axis, dense_backward, dense_forward, Layer, Padding,
};
use crate::tensor::Tensor;
use crate::{PrecisionMode, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter tensor.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Running mean/variance for one batchnorm layer.
#[derive(Clone, Debug)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// An ordered stack of layers with its parameters and batchnorm state.
///
/// Immutable during evaluation except for batchnorm running statistics,
/// which are updated only in train mode.
#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<Param>,
    stats: Vec<RunningStats>,
}

/// One gradient tensor per parameter tensor, in parameter order.
#[derive(Clone, Debug)]
pub struct ParamGrads(pub Vec<Tensor>);

impl ParamGrads {
    pub fn zeros_like(params: &[Param]) -> Self {
        Self(params.iter().map(|p| Tensor::zeros(p.value.shape())).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.0.iter().map(Tensor::len).sum()
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    /// Index of the first gradient tensor containing a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|t| t.first_non_finite().is_some())
    }

    pub fn max_abs_diff(&self, other: &ParamGrads) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    /// Concatenates all gradients into one flat vector.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_elements());
        for t in &self.0 {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds gradients from a flat vector using `self` shapes as template.
    pub fn from_flat_like(template: &ParamGrads, flat: &[f64]) -> Result<Self> {
        if flat.len() != template.total_elements() {
            return Err(TensorError::ShapeMismatch(format!(
                "flat gradient length {} does not match template ({} elements)",
                flat.len(),
                template.total_elements()
            )));
        }
        let mut out = Vec::with_capacity(template.len());
        let mut off = 0;
        for t in &template.0 {
            let n = t.len();
            out.push(Tensor::new(t.shape().to_vec(), flat[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Self(out))
    }
}

/// Batchnorm statistics captured during a forward pass.
#[derive(Clone, Debug)]
pub struct BnAux {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// All layer activations retained from one forward pass.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    mode: Mode,
    precision: PrecisionMode,
    /// activations[0] is the input; activations[i + 1] is layer i's output.
    activations: Vec<Tensor>,
    aux: Vec<Option<BnAux>>,
}

impl ActivationTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace has at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn activation(&self, i: usize) -> &Tensor {
        &self.activations[i]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn precision(&self) -> PrecisionMode {
        self.precision
    }
}

impl Network {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Per-sample output shape implied by the layer chain.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut cur = self.input_shape.clone();
        for layer in &self.layers {
            cur = layer_output_shape(layer, &cur, &self.input_shape)?;
        }
        Ok(cur)
    }

    pub fn max_param_abs_diff(&self, other: &Network) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        params: Vec<Param>,
        stats: Vec<RunningStats>,
    ) -> Self {
        Self {
            input_shape,
            layers,
            params,
            stats,
        }
    }
}

pub(crate) fn layer_shape_for_load(
    layer: &Layer,
    cur: &[usize],
    input_shape: &[usize],
) -> Result<Vec<usize>> {
    layer_output_shape(layer, cur, input_shape)
}

fn layer_output_shape(layer: &Layer, cur: &[usize], input_shape: &[usize]) -> Result<Vec<usize>> {
    match layer {
        Layer::Dense {
            in_features,
            out_features,
            ..
        } => {
            if cur != [*in_features] {
                return Err(TensorError::ShapeMismatch(format!(
                    "dense expects per-sample shape [{in_features}], got {cur:?}"
                )));
            }
            Ok(vec![*out_features])
        }
        Layer::Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            let [c, d, h, w] = match cur {
                [c, d, h, w] => [*c, *d, *h, *w],
                other => {
                    return Err(TensorError::ShapeMismatch(format!(
                        "conv3d expects per-sample shape [C,D,H,W], got {other:?}"
                    )))
                }
            };
            if c != *in_channels {
                return Err(TensorError::ShapeMismatch(format!(
                    "conv3d expects {in_channels} channels, got {c}"
                )));
            }
            let od = conv_axis(d, kernel[0], *stride, *padding)?.2;
            let oh = conv_axis(h, kernel[1], *stride, *padding)?.2;
            let ow = conv_axis(w, kernel[2], *stride, *padding)?.2;
            Ok(vec![*out_channels, od, oh, ow])
        }
        Layer::BatchNorm { features, .. } => {
            if cur.first() != Some(features) {
                return Err(TensorError::ShapeMismatch(format!(
                    "batchnorm over {features} features got per-sample shape {cur:?}"
                )));
            }
            Ok(cur.to_vec())
        }
        Layer::LeakyRelu { .. } | Layer::Relu | Layer::Sigmoid | Layer::Tanh => Ok(cur.to_vec()),
        Layer::Flatten => Ok(vec![cur.iter().product()]),
        Layer::Reshape { shape } => {
            let have: usize = cur.iter().product();
            let want: usize = shape.iter().product();
            if have != want {
                return Err(TensorError::ShapeMismatch(format!(
                    "reshape from {cur:?} ({have}) to {shape:?} ({want})"
                )));
            }
            Ok(shape.clone())
        }
        Layer::ConcatInput => {
            let f = match cur {
                [f] => *f,
                other => {
                    return Err(TensorError::ShapeMismatch(format!(
                        "concat_input expects a flat per-sample shape, got {other:?}"
                    )))
                }
            };
            Ok(vec![f + input_shape.iter().product::<usize>()])
        }
    }
}

/// Incremental network constructor with seeded Glorot-uniform initialisation.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    cur: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<Param>,
    stats: Vec<RunningStats>,
    rng: ChaCha8Rng,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize], seed: u64) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            cur: input_shape.to_vec(),
            layers: Vec::new(),
            params: Vec::new(),
            stats: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn init_weight(&mut self, shape: &[usize], fan_in: usize, fan_out: usize, name: String) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.random_range(-limit..limit)).collect();
        self.params.push(Param {
            name,
            value: Tensor::new(shape.to_vec(), data).expect("init shape"),
        });
        self.params.len() - 1
    }

    fn push_param(&mut self, shape: &[usize], fill: f64, name: String) -> usize {
        self.params.push(Param {
            name,
            value: Tensor::filled(shape, fill),
        });
        self.params.len() - 1
    }

    pub fn dense(mut self, out_features: usize) -> Result<Self> {
        let in_features = match self.cur.as_slice() {
            [f] => *f,
            other => {
                return Err(TensorError::InvalidLayer(format!(
                    "dense requires a flat per-sample shape, found {other:?}; insert flatten first"
                )))
            }
        };
        let idx = self.layers.len();
        let weight = self.init_weight(
            &[out_features, in_features],
            in_features,
            out_features,
            format!("layer{idx}.weight"),
        );
        let bias = self.push_param(&[out_features], 0.0, format!("layer{idx}.bias"));
        self.layers.push(Layer::Dense {
            in_features,
            out_features,
            weight,
            bias,
        });
        self.cur = vec![out_features];
        Ok(self)
    }

    pub fn conv3d(
        mut self,
        out_channels: usize,
        kernel: [usize; 3],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let in_channels = match self.cur.as_slice() {
            [c, _, _, _] => *c,
            other => {
                return Err(TensorError::InvalidLayer(format!(
                    "conv3d requires per-sample shape [C,D,H,W], found {other:?}"
                )))
            }
        };
        let idx = self.layers.len();
        let taps = kernel[0] * kernel[1] * kernel[2];
        let weight = self.init_weight(
            &[out_channels, in_channels, kernel[0], kernel[1], kernel[2]],
            in_channels * taps,
            out_channels * taps,
            format!("layer{idx}.weight"),
        );
        let bias = self.push_param(&[out_channels], 0.0, format!("layer{idx}.bias"));
        let layer = Layer::Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        };
        self.cur = layer_output_shape(&layer, &self.cur, &self.input_shape)?;
        self.layers.push(layer);
        Ok(self)
    }

    pub fn batchnorm(mut self) -> Result<Self> {
        let features = match self.cur.first() {
            Some(&c) => c,
            None => {
                return Err(TensorError::InvalidLayer(
                    "batchnorm requires a non-scalar per-sample shape".into(),
                ))
            }
        };
        let idx = self.layers.len();
        let gamma = self.push_param(&[features], 1.0, format!("layer{idx}.gamma"));
        let beta = self.push_param(&[features], 0.0, format!("layer{idx}.beta"));
        self.stats.push(RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        });
        self.layers.push(Layer::BatchNorm {
            features,
            eps: 1e-5,
            momentum: 0.99,
            gamma,
            beta,
            stats: self.stats.len() - 1,
        });
        Ok(self)
    }

    pub fn leaky_relu(mut self, slope: f64) -> Self {
        self.layers.push(Layer::LeakyRelu { slope });
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn sigmoid(mut self) -> Self {
        self.layers.push(Layer::Sigmoid);
        self
    }

    pub fn tanh(mut self) -> Self {
        self.layers.push(Layer::Tanh);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.cur = vec![self.cur.iter().product()];
        self.layers.push(Layer::Flatten);
        self
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let layer = Layer::Reshape {
            shape: shape.to_vec(),
        };
        self.cur = layer_output_shape(&layer, &self.cur, &self.input_shape)?;
        self.layers.push(layer);
        Ok(self)
    }

    pub fn concat_input(mut self) -> Result<Self> {
        let layer = Layer::ConcatInput;
        self.cur = layer_output_shape(&layer, &self.cur, &self.input_shape)?;
        self.layers.push(layer);
        Ok(self)
    }

    pub fn build(self) -> Network {
        Network {
            input_shape: self.input_shape,
            layers: self.layers,
            params: self.params,
            stats: self.stats,
        }
    }
}

/// Runs a forward pass, retaining every layer output.
///
/// Deterministic given (parameters, input, mode). In eval mode nothing is
/// mutated; in train mode batchnorm layers update their running statistics.
pub fn evaluate(
    net: &mut Network,
    input: &Tensor,
    mode: Mode,
    precision: PrecisionMode,
) -> Result<ActivationTrace> {
    let batch = input.batch();
    let expected: Vec<usize> = std::iter::once(batch)
        .chain(net.input_shape.iter().copied())
        .collect();
    if input.shape() != expected.as_slice() {
        return Err(TensorError::ShapeMismatch(format!(
            "network expects input shape {:?}, got {:?}",
            expected,
            input.shape()
        )));
    }
    let mut activations = Vec::with_capacity(net.layers.len() + 1);
    let mut aux: Vec<Option<BnAux>> = Vec::with_capacity(net.layers.len());
    activations.push(input.clone());
    for (i, layer) in net.layers.iter().enumerate() {
        let x = activations.last().expect("non-empty");
        let mut layer_aux = None;
        let out = match layer {
            Layer::Dense { weight, bias, .. } => dense_forward(
                x,
                &net.params[*weight].value,
                &net.params[*bias].value,
                precision,
            )?,
            Layer::Conv3d {
                weight,
                bias,
                stride,
                padding,
                ..
            } => conv3d_forward_bias(
                x,
                &net.params[*weight].value,
                Some(&net.params[*bias].value),
                *stride,
                *padding,
                precision,
            )?,
            Layer::BatchNorm {
                features,
                eps,
                momentum,
                gamma,
                beta,
                stats,
            } => {
                let dims = bn_dims(x, *features)?;
                let (mean, var) = match mode {
                    Mode::Train => {
                        let (mean, var) = bn_batch_stats(x, &dims);
                        let running = &mut net.stats[*stats];
                        for c in 0..*features {
                            running.mean[c] = momentum * running.mean[c] + (1.0 - momentum) * mean[c];
                            running.var[c] = momentum * running.var[c] + (1.0 - momentum) * var[c];
                        }
                        (mean, var)
                    }
                    Mode::Eval => {
                        let running = &net.stats[*stats];
                        (running.mean.clone(), running.var.clone())
                    }
                };
                let out = bn_forward(
                    x,
                    &net.params[*gamma].value,
                    &net.params[*beta].value,
                    &mean,
                    &var,
                    *eps,
                    &dims,
                );
                layer_aux = Some(BnAux { mean, var });
                out
            }
            Layer::LeakyRelu { slope } => {
                let s = *slope;
                x.map(|v| if v > 0.0 { v } else { s * v })
            }
            Layer::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            Layer::Sigmoid => x.map(|v| 1.0 / (1.0 + (-v).exp())),
            Layer::Tanh => x.map(f64::tanh),
            Layer::Flatten => {
                let rest: usize = x.shape()[1..].iter().product();
                x.reshaped(&[batch, rest])?
            }
            Layer::Reshape { shape } => {
                let full: Vec<usize> = std::iter::once(batch).chain(shape.iter().copied()).collect();
                x.reshaped(&full)?
            }
            Layer::ConcatInput => {
                let f = match x.shape() {
                    [_, f] => *f,
                    other => {
                        return Err(TensorError::ShapeMismatch(format!(
                            "concat_input expects a 2-d activation, got {other:?}"
                        )))
                    }
                };
                let g: usize = net.input_shape.iter().product();
                let inp = &activations[0];
                let mut data = Vec::with_capacity(batch * (f + g));
                for n in 0..batch {
                    data.extend_from_slice(&x.data()[n * f..(n + 1) * f]);
                    data.extend_from_slice(&inp.data()[n * g..(n + 1) * g]);
                }
                Tensor::new(vec![batch, f + g], data)?
            }
        };
        if let Some(idx) = out.first_non_finite() {
            return Err(TensorError::NonFinite {
                context: format!("layer {i} ({}) output", layer.kind_name()),
                index: idx,
                value: out.data()[idx],
            });
        }
        aux.push(layer_aux);
        activations.push(out);
    }
    Ok(ActivationTrace {
        mode,
        precision,
        activations,
        aux,
    })
}

/// Reverse-mode gradients of a scalar loss whose output gradient is `loss_grad`.
///
/// Returns per-parameter gradients plus the gradient with respect to the
/// network input.
pub fn gradients(
    net: &Network,
    trace: &ActivationTrace,
    loss_grad: &Tensor,
) -> Result<(ParamGrads, Tensor)> {
    if trace.activations.len() != net.layers.len() + 1 {
        return Err(TensorError::TraceMismatch(format!(
            "trace holds {} activations but the network has {} layers",
            trace.activations.len(),
            net.layers.len()
        )));
    }
    if loss_grad.shape() != trace.output().shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "loss gradient shape {:?} does not match output shape {:?}",
            loss_grad.shape(),
            trace.output().shape()
        )));
    }
    let precision = trace.precision;
    let mut grads = ParamGrads::zeros_like(&net.params);
    let mut g = loss_grad.clone();
    // concat_input layers feed part of their gradient directly to the input.
    let mut input_extra = Tensor::zeros(trace.activations[0].shape());
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let x = &trace.activations[i];
        let y = &trace.activations[i + 1];
        g = match layer {
            Layer::Dense { weight, bias, .. } => {
                let (dw, db, dx) = dense_backward(x, &net.params[*weight].value, &g, precision);
                accumulate(&mut grads, *weight, dw);
                accumulate(&mut grads, *bias, db);
                dx
            }
            Layer::Conv3d {
                weight,
                bias,
                stride,
                padding,
                ..
            } => {
                let (dk, db, dx) = conv3d_backward(
                    x,
                    &net.params[*weight].value,
                    &g,
                    *stride,
                    *padding,
                    precision,
                )?;
                accumulate(&mut grads, *weight, dk);
                accumulate(&mut grads, *bias, db);
                dx
            }
            Layer::BatchNorm {
                features,
                eps,
                gamma,
                beta,
                ..
            } => {
                let dims = bn_dims(x, *features)?;
                let aux = trace.aux[i].as_ref().ok_or_else(|| {
                    TensorError::TraceMismatch(format!("layer {i} batchnorm aux missing"))
                })?;
                let (dgamma, dbeta, dx) = match trace.mode {
                    Mode::Train => bn_backward_train(
                        x,
                        &net.params[*gamma].value,
                        &g,
                        &aux.mean,
                        &aux.var,
                        *eps,
                        &dims,
                    ),
                    Mode::Eval => bn_backward_eval(
                        x,
                        &net.params[*gamma].value,
                        &g,
                        &aux.mean,
                        &aux.var,
                        *eps,
                        &dims,
                    ),
                };
                accumulate(&mut grads, *gamma, dgamma);
                accumulate(&mut grads, *beta, dbeta);
                dx
            }
            Layer::LeakyRelu { slope } => {
                let s = *slope;
                elementwise(&g, x, |gv, xv| if xv > 0.0 { gv } else { s * gv })
            }
            Layer::Relu => elementwise(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            Layer::Sigmoid => elementwise(&g, y, |gv, yv| gv * yv * (1.0 - yv)),
            Layer::Tanh => elementwise(&g, y, |gv, yv| gv * (1.0 - yv * yv)),
            Layer::Flatten | Layer::Reshape { .. } => g.reshaped(x.shape())?,
            Layer::ConcatInput => {
                let batch = x.shape()[0];
                let f = x.shape()[1];
                let gin: usize = net.input_shape.iter().product();
                let mut dx = Tensor::zeros(x.shape());
                for n in 0..batch {
                    let row = &g.data()[n * (f + gin)..(n + 1) * (f + gin)];
                    dx.data_mut()[n * f..(n + 1) * f].copy_from_slice(&row[..f]);
                    for (j, v) in row[f..].iter().enumerate() {
                        input_extra.data_mut()[n * gin + j] += v;
                    }
                }
                dx
            }
        };
    }
    let mut input_grad = g;
    for (a, b) in input_grad.data_mut().iter_mut().zip(input_extra.data()) {
        *a += b;
    }
    Ok((grads, input_grad))
}

fn accumulate(grads: &mut ParamGrads, id: usize, delta: Tensor) {
    let slot = &mut grads.0[id];
    for (a, b) in slot.data_mut().iter_mut().zip(delta.data()) {
        *a += b;
    }
}

fn elementwise(g: &Tensor, basis: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(basis.data())
        .map(|(&gv, &bv)| f(gv, bv))
        .collect();
    Tensor::new(g.shape().to_vec(), data).expect("elementwise shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_network_is_identity() {
        let mut net = NetworkBuilder::new(&[3], 0).build();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let trace = evaluate(&mut net, &x, Mode::Eval, PrecisionMode::Full).unwrap();
        assert_eq!(trace.output().data(), x.data());
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut net = NetworkBuilder::new(&[1], 0).sigmoid().build();
        let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let trace = evaluate(&mut net, &x, Mode::Eval, PrecisionMode::Full).unwrap();
        assert_eq!(trace.output().data()[0], 0.5);
    }

    #[test]
    fn eval_mode_is_pure_and_deterministic() {
        let mut net = NetworkBuilder::new(&[4], 11)
            .dense(8)
            .unwrap()
            .tanh()
            .dense(2)
            .unwrap()
            .build();
        let before = net.clone();
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = evaluate(&mut net, &x, Mode::Eval, PrecisionMode::Full).unwrap();
        let b = evaluate(&mut net, &x, Mode::Eval, PrecisionMode::Full).unwrap();
        assert_eq!(a.output().data(), b.output().data());
        assert_eq!(net.max_param_abs_diff(&before), 0.0);
        for (s, t) in net.stats().iter().zip(before.stats()) {
            assert_eq!(s.mean, t.mean);
            assert_eq!(s.var, t.var);
        }
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut net = NetworkBuilder::new(&[4], 11).batchnorm().unwrap().build();
        let x = Tensor::new(vec![4, 4], (0..16).map(|i| i as f64).collect()).unwrap();
        evaluate(&mut net, &x, Mode::Train, PrecisionMode::Full).unwrap();
        assert!(net.stats()[0].mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = NetworkBuilder::new(&[4], 5).dense(8).unwrap().build();
        let b = NetworkBuilder::new(&[4], 5).dense(8).unwrap().build();
        assert_eq!(a.max_param_abs_diff(&b), 0.0);
        let c = NetworkBuilder::new(&[4], 6).dense(8).unwrap().build();
        assert!(a.max_param_abs_diff(&c) > 0.0);
    }

    #[test]
    fn linear_form_gradient_is_input() {
        // L = sum(w . x) over one sample: dL/dw = x.
        let mut net = NetworkBuilder::new(&[3], 7).dense(1).unwrap().build();
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.5, 2.0]).unwrap();
        let trace = evaluate(&mut net, &x, Mode::Train, PrecisionMode::Full).unwrap();
        let ones = Tensor::filled(trace.output().shape(), 1.0);
        let (grads, _) = gradients(&net, &trace, &ones).unwrap();
        assert_eq!(grads.0[0].data(), x.data());
        assert_eq!(grads.0[1].data(), &[1.0]);
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let mut net = NetworkBuilder::new(&[3], 7)
            .dense(4)
            .unwrap()
            .leaky_relu(0.2)
            .dense(2)
            .unwrap()
            .build();
        let x = Tensor::new(vec![2, 3], vec![0.1; 6]).unwrap();
        let trace = evaluate(&mut net, &x, Mode::Train, PrecisionMode::Full).unwrap();
        let zeros = Tensor::zeros(trace.output().shape());
        let (grads, input_grad) = gradients(&net, &trace, &zeros).unwrap();
        assert!(grads.0.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_input_routes_gradient_to_input() {
        let mut net = NetworkBuilder::new(&[2], 3)
            .dense(2)
            .unwrap()
            .concat_input()
            .unwrap()
            .build();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let trace = evaluate(&mut net, &x, Mode::Train, PrecisionMode::Full).unwrap();
        assert_eq!(trace.output().shape(), &[1, 4]);
        assert_eq!(&trace.output().data()[2..], &[1.0, 2.0]);
        // Push gradient only through the concatenated raw-input lanes.
        let lg = Tensor::new(vec![1, 4], vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        let (_, input_grad) = gradients(&net, &trace, &lg).unwrap();
        assert_eq!(input_grad.data(), &[3.0, 4.0]);
    }
}
