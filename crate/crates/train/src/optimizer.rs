//! SGD and Adam parameter updates.

use calo_tensor::network::Param;
use calo_tensor::{ParamGrads, Tensor};

use crate::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    /// Adam with the usual adversarial-training beta1 = 0.5.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators and the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn for_params(params: &[&Param]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one update. SGD: w -= lr * g. Adam: bias-corrected moments.
/// A non-finite gradient entry aborts with the parameter's name.
pub fn optimizer_step(
    params: &mut [&mut Param],
    grads: &ParamGrads,
    state: &mut OptimizerState,
    kind: &OptimizerKind,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TrainError::BatchMismatch(format!(
            "{} parameter tensors but {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(&grads.0) {
        if p.value.shape() != g.shape() {
            return Err(TrainError::BatchMismatch(format!(
                "gradient shape {:?} does not match parameter {} {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if g.first_non_finite().is_some() {
            return Err(TrainError::NonFiniteGradient {
                param: p.name.clone(),
            });
        }
    }
    state.step += 1;
    match *kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(&grads.0) {
                for (w, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * gv;
                }
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for ((p, g), (m, v)) in params
                .iter_mut()
                .zip(&grads.0)
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                for (((w, &gv), mi), vi) in p
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * gv;
                    *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> Vec<Param> {
        vec![Param {
            name: "w".into(),
            value: Tensor::scalar(value),
        }]
    }

    fn grads(value: f64) -> ParamGrads {
        ParamGrads(vec![Tensor::scalar(value)])
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam_default()] {
            let mut params = one_param(1.25);
            let mut refs: Vec<&mut Param> = params.iter_mut().collect();
            let mut state = OptimizerState::for_params(&[&Param {
                name: "w".into(),
                value: Tensor::scalar(0.0),
            }]);
            optimizer_step(&mut refs, &grads(0.0), &mut state, &kind, 0.1).unwrap();
            assert_eq!(params[0].value.data()[0], 1.25);
        }
    }

    #[test]
    fn sgd_closed_form() {
        let mut params = one_param(1.0);
        let mut refs: Vec<&mut Param> = params.iter_mut().collect();
        let mut state = OptimizerState::for_params(&[&params_clone(&refs)[0]]);
        optimizer_step(&mut refs, &grads(0.5), &mut state, &OptimizerKind::Sgd, 0.1).unwrap();
        assert!((params[0].value.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // With g = 1 everywhere: m_hat = 1, v_hat = 1, so the update is
        // exactly lr / (1 + eps) independent of the betas.
        let mut params = one_param(0.0);
        let mut refs: Vec<&mut Param> = params.iter_mut().collect();
        let mut state = OptimizerState::for_params(&[&params_clone(&refs)[0]]);
        optimizer_step(
            &mut refs,
            &grads(1.0),
            &mut state,
            &OptimizerKind::adam_default(),
            1e-3,
        )
        .unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].value.data()[0] - expected).abs() < 1e-18);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = one_param(0.0);
        let mut refs: Vec<&mut Param> = params.iter_mut().collect();
        let mut state = OptimizerState::for_params(&[&params_clone(&refs)[0]]);
        let err = optimizer_step(
            &mut refs,
            &grads(f64::NAN),
            &mut state,
            &OptimizerKind::Sgd,
            0.1,
        )
        .unwrap_err();
        match err {
            TrainError::NonFiniteGradient { param } => assert_eq!(param, "w"),
            other => panic!("unexpected error {other}"),
        }
    }

    fn params_clone(refs: &[&mut Param]) -> Vec<Param> {
        refs.iter().map(|p| Param {
            name: p.name.clone(),
            value: p.value.clone(),
        }).collect()
    }
}
