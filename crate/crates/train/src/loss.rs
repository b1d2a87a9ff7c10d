//! Composite adversarial losses and their analytic output gradients.
//!
//! All terms are means over the batch, which keeps per-sample losses
//! independent: the shard-mean of shard-gradients then equals the
//! full-batch gradient for equal shards.

use crate::gan::{DiscOutputGrads, DiscOutputs};
use crate::labels::LabelBatch;

pub const BCE_CLAMP: f64 = 1e-7;
pub const MAPE_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub bce: f64,
    pub ep: f64,
    pub ang: f64,
    pub ecal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            bce: 1.0,
            ep: 0.1,
            ang: 0.1,
            ecal: 0.1,
        }
    }
}

/// Weighted total plus the unweighted per-term values.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce: f64,
    pub ep: f64,
    pub ang: f64,
    pub ecal: f64,
}

impl LossBreakdown {
    fn weighted(w: &LossWeights, bce: f64, ep: f64, ang: f64, ecal: f64) -> Self {
        // The total is formed from exactly these products so that the
        // breakdown re-sums to it without rounding slack.
        Self {
            total: w.bce * bce + w.ep * ep + w.ang * ang + w.ecal * ecal,
            bce,
            ep,
            ang,
            ecal,
        }
    }

    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.bce * self.bce + w.ep * self.ep + w.ang * self.ang + w.ecal * self.ecal
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.bce, self.ep, self.ang, self.ecal]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Binary cross entropy against a constant target, mean over the batch.
fn bce_terms(p: &[f64], target: f64) -> f64 {
    let b = p.len() as f64;
    p.iter()
        .map(|&pi| {
            let pc = clamp_p(pi);
            -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln())
        })
        .sum::<f64>()
        / b
}

fn bce_grad(p: &[f64], target: f64, weight: f64) -> Vec<f64> {
    let b = p.len() as f64;
    p.iter()
        .map(|&pi| {
            let pc = clamp_p(pi);
            weight * (pc - target) / (pc * (1.0 - pc)) / b
        })
        .collect()
}

/// Mean absolute fractional error with a floored reference.
fn mape(pred: &[f64], reference: &[f64]) -> f64 {
    let b = pred.len() as f64;
    pred.iter()
        .zip(reference)
        .map(|(&a, &r)| (a - r).abs() / r.abs().max(MAPE_FLOOR))
        .sum::<f64>()
        / b
}

fn mape_grad(pred: &[f64], reference: &[f64], weight: f64) -> Vec<f64> {
    let b = pred.len() as f64;
    pred.iter()
        .zip(reference)
        .map(|(&a, &r)| weight * (a - r).signum() / r.abs().max(MAPE_FLOOR) / b)
        .collect()
}

fn mae(pred: &[f64], reference: &[f64]) -> f64 {
    let b = pred.len() as f64;
    pred.iter()
        .zip(reference)
        .map(|(&a, &r)| (a - r).abs())
        .sum::<f64>()
        / b
}

fn mae_grad(pred: &[f64], reference: &[f64], weight: f64) -> Vec<f64> {
    let b = pred.len() as f64;
    pred.iter()
        .zip(reference)
        .map(|(&a, &r)| weight * (a - r).signum() / b)
        .collect()
}

fn ep_normalized(labels: &LabelBatch, max_energy: f64) -> Vec<f64> {
    labels.ep.iter().map(|&e| e / max_energy).collect()
}

/// Discriminator loss on one batch: BCE toward real/fake plus the two
/// auxiliary regressions. No Ecal term.
pub fn discriminator_loss(
    out: &DiscOutputs,
    labels: &LabelBatch,
    is_real: bool,
    weights: &LossWeights,
    max_energy: f64,
) -> LossBreakdown {
    let target = if is_real { 1.0 } else { 0.0 };
    let ep_ref = ep_normalized(labels, max_energy);
    LossBreakdown::weighted(
        weights,
        bce_terms(&out.p, target),
        mape(&out.ep_hat, &ep_ref),
        mae(&out.theta_hat, &labels.theta),
        0.0,
    )
}

pub fn discriminator_loss_grads(
    out: &DiscOutputs,
    labels: &LabelBatch,
    is_real: bool,
    weights: &LossWeights,
    max_energy: f64,
) -> (LossBreakdown, DiscOutputGrads) {
    let target = if is_real { 1.0 } else { 0.0 };
    let ep_ref = ep_normalized(labels, max_energy);
    let breakdown = discriminator_loss(out, labels, is_real, weights, max_energy);
    let grads = DiscOutputGrads {
        d_p: bce_grad(&out.p, target, weights.bce),
        d_ep: mape_grad(&out.ep_hat, &ep_ref, weights.ep),
        d_theta: mae_grad(&out.theta_hat, &labels.theta, weights.ang),
    };
    (breakdown, grads)
}

/// Generator loss on discriminator outputs over fakes: BCE toward the real
/// label, auxiliary regressions toward the conditioning labels, and the
/// total-energy constraint against the labelled Ecal.
pub fn generator_loss(
    out_on_fake: &DiscOutputs,
    labels: &LabelBatch,
    fake_ecal: &[f64],
    weights: &LossWeights,
    max_energy: f64,
) -> LossBreakdown {
    let ep_ref = ep_normalized(labels, max_energy);
    LossBreakdown::weighted(
        weights,
        bce_terms(&out_on_fake.p, 1.0),
        mape(&out_on_fake.ep_hat, &ep_ref),
        mae(&out_on_fake.theta_hat, &labels.theta),
        mape(fake_ecal, &labels.ecal),
    )
}

/// Returns (breakdown, gradients w.r.t. discriminator outputs, gradient
/// w.r.t. each sample's fake Ecal).
pub fn generator_loss_grads(
    out_on_fake: &DiscOutputs,
    labels: &LabelBatch,
    fake_ecal: &[f64],
    weights: &LossWeights,
    max_energy: f64,
) -> (LossBreakdown, DiscOutputGrads, Vec<f64>) {
    let ep_ref = ep_normalized(labels, max_energy);
    let breakdown = generator_loss(out_on_fake, labels, fake_ecal, weights, max_energy);
    let grads = DiscOutputGrads {
        d_p: bce_grad(&out_on_fake.p, 1.0, weights.bce),
        d_ep: mape_grad(&out_on_fake.ep_hat, &ep_ref, weights.ep),
        d_theta: mae_grad(&out_on_fake.theta_hat, &labels.theta, weights.ang),
    };
    let d_ecal = mape_grad(fake_ecal, &labels.ecal, weights.ecal);
    (breakdown, grads, d_ecal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels3() -> LabelBatch {
        LabelBatch::new(
            vec![50.0, 20.0, 80.0],
            vec![1.2, 1.5, 1.9],
            vec![1.25, 0.5, 2.0],
        )
        .unwrap()
    }

    fn perfect_real_outputs(labels: &LabelBatch, max_energy: f64) -> DiscOutputs {
        DiscOutputs {
            p: vec![1.0; labels.len()],
            ep_hat: labels.ep.iter().map(|e| e / max_energy).collect(),
            theta_hat: labels.theta.clone(),
        }
    }

    #[test]
    fn confident_correct_real_scores_near_zero() {
        let labels = labels3();
        let out = perfect_real_outputs(&labels, 100.0);
        let w = LossWeights {
            bce: 1.0,
            ep: 0.0,
            ang: 0.0,
            ecal: 0.0,
        };
        let l = discriminator_loss(&out, &labels, true, &w, 100.0);
        assert!(l.bce <= 1e-6, "bce {}", l.bce);
        assert_eq!(l.ep, 0.0);
        assert_eq!(l.ang, 0.0);
    }

    #[test]
    fn coin_flip_probability_costs_ln_two() {
        let labels = labels3();
        let out = DiscOutputs {
            p: vec![0.5; 3],
            ep_hat: vec![0.0; 3],
            theta_hat: vec![0.0; 3],
        };
        let w = LossWeights {
            bce: 1.0,
            ep: 0.0,
            ang: 0.0,
            ecal: 0.0,
        };
        let l = discriminator_loss(&out, &labels, true, &w, 100.0);
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn generator_terms_vanish_on_perfect_match() {
        let labels = labels3();
        let out = perfect_real_outputs(&labels, 100.0);
        let w = LossWeights::default();
        let l = generator_loss(&out, &labels, &labels.ecal.clone(), &w, 100.0);
        assert_eq!(l.ecal, 0.0);
        assert!(l.bce < 1e-6);
        assert_eq!(l.ep, 0.0);
        assert_eq!(l.ang, 0.0);
    }

    #[test]
    fn zero_weights_zero_loss() {
        let labels = labels3();
        let out = DiscOutputs {
            p: vec![0.3; 3],
            ep_hat: vec![0.9; 3],
            theta_hat: vec![0.1; 3],
        };
        let w = LossWeights {
            bce: 0.0,
            ep: 0.0,
            ang: 0.0,
            ecal: 0.0,
        };
        let l = generator_loss(&out, &labels, &[0.1, 0.1, 0.1], &w, 100.0);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn breakdown_resums_to_total() {
        let labels = labels3();
        let out = DiscOutputs {
            p: vec![0.31, 0.72, 0.55],
            ep_hat: vec![0.4, 0.3, 0.9],
            theta_hat: vec![1.0, 1.4, 2.0],
        };
        let w = LossWeights {
            bce: 0.7,
            ep: 0.25,
            ang: 0.15,
            ecal: 0.4,
        };
        let l = generator_loss(&out, &labels, &[1.0, 0.4, 2.2], &w, 100.0);
        assert!((l.weighted_sum(&w) - l.total).abs() < 1e-12);
    }

    #[test]
    fn mape_guards_small_references() {
        let got = mape(&[1.0], &[0.0]);
        assert!(got.is_finite());
        assert!(got > 0.0);
    }
}
