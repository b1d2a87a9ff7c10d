//! Central finite-difference gradients, the independent oracle used to
//! validate reverse-mode results.

use crate::network::{evaluate, Mode, Network, ParamGrads};
use crate::tensor::Tensor;
use crate::{PrecisionMode, Result};

/// Central-difference gradient estimate (f(p+h) - f(p-h)) / 2h for every
/// parameter element. `loss_fn` maps the network output to a scalar.
///
/// Each probe runs on a fresh clone of the network, so train-mode batchnorm
/// statistics on `net` are left untouched.
pub fn finite_diff_gradients(
    net: &Network,
    input: &Tensor,
    mode: Mode,
    precision: PrecisionMode,
    loss_fn: &dyn Fn(&Tensor) -> f64,
    h: f64,
) -> Result<ParamGrads> {
    let mut grads = ParamGrads::zeros_like(net.params());
    for p in 0..net.params().len() {
        for j in 0..net.params()[p].value.len() {
            grads.0[p].data_mut()[j] =
                finite_diff_param(net, input, mode, precision, loss_fn, h, p, j)?;
        }
    }
    Ok(grads)
}

/// Central difference for a single parameter element.
pub fn finite_diff_param(
    net: &Network,
    input: &Tensor,
    mode: Mode,
    precision: PrecisionMode,
    loss_fn: &dyn Fn(&Tensor) -> f64,
    h: f64,
    param: usize,
    elem: usize,
) -> Result<f64> {
    let eval_at = |delta: f64| -> Result<f64> {
        let mut probe = net.clone();
        probe.params_mut()[param].value.data_mut()[elem] += delta;
        let trace = evaluate(&mut probe, input, mode, precision)?;
        Ok(loss_fn(trace.output()))
    };
    Ok((eval_at(h)? - eval_at(-h)?) / (2.0 * h))
}

/// True if perturbing one parameter by +/-h flips the sign of any relu or
/// leaky-relu pre-activation. Finite differences are unreliable across such
/// a kink, so callers resample instead of comparing.
pub fn relu_kink_crossed(
    net: &Network,
    input: &Tensor,
    mode: Mode,
    precision: PrecisionMode,
    h: f64,
    param: usize,
    elem: usize,
) -> Result<bool> {
    let trace_at = |delta: f64| -> Result<Vec<Vec<f64>>> {
        let mut probe = net.clone();
        probe.params_mut()[param].value.data_mut()[elem] += delta;
        let trace = evaluate(&mut probe, input, mode, precision)?;
        Ok(relu_preactivations(&probe, &trace))
    };
    let plus = trace_at(h)?;
    let minus = trace_at(-h)?;
    for (a, b) in plus.iter().zip(&minus) {
        for (x, y) in a.iter().zip(b) {
            if (*x > 0.0) != (*y > 0.0) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Pre-activation values feeding each relu/leaky-relu layer.
pub fn relu_preactivations(net: &Network, trace: &crate::network::ActivationTrace) -> Vec<Vec<f64>> {
    use crate::layer::Layer;
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Relu | Layer::LeakyRelu { .. }))
        .map(|(i, _)| trace.activation(i).data().to_vec())
        .collect()
}

/// max over elements of |a - b| / max(|a|, |b|, floor).
pub fn max_rel_error(a: &ParamGrads, b: &ParamGrads, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (ta, tb) in a.0.iter().zip(&b.0) {
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{gradients, NetworkBuilder};

    #[test]
    fn quadratic_loss_recovers_known_derivative() {
        // f(w) = w^2 at w = 3 via a 1x1 dense layer fed with x = 1.
        let mut net = NetworkBuilder::new(&[1], 0).dense(1).unwrap().build();
        net.params_mut()[0].value.data_mut()[0] = 3.0;
        let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let loss = |out: &Tensor| out.data()[0] * out.data()[0];
        let g = finite_diff_param(
            &net,
            &x,
            Mode::Eval,
            PrecisionMode::Full,
            &loss,
            1e-5,
            0,
            0,
        )
        .unwrap();
        assert!((g - 6.0).abs() < 1e-6, "got {g}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = NetworkBuilder::new(&[2], 1).dense(3).unwrap().build();
        let x = Tensor::new(vec![1, 2], vec![0.4, -0.2]).unwrap();
        let g = finite_diff_gradients(
            &net,
            &x,
            Mode::Eval,
            PrecisionMode::Full,
            &|_| 5.0,
            1e-5,
        )
        .unwrap();
        assert!(g.0.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn matches_reverse_mode_on_dense_layer() {
        let mut net = NetworkBuilder::new(&[3], 9).dense(2).unwrap().build();
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.7, 0.2, 0.9, 0.1, -0.4]).unwrap();
        let loss = |out: &Tensor| out.data().iter().sum::<f64>();
        let fd = finite_diff_gradients(&net, &x, Mode::Eval, PrecisionMode::Full, &loss, 1e-5)
            .unwrap();
        let trace = evaluate(&mut net, &x, Mode::Train, PrecisionMode::Full).unwrap();
        let ones = Tensor::filled(trace.output().shape(), 1.0);
        let (an, _) = gradients(&net, &trace, &ones).unwrap();
        assert!(max_rel_error(&an, &fd, 1e-6) < 1e-4);
    }
}
