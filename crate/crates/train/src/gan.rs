//! Generator and discriminator definitions with energy/angle conditioning
//! and the total-energy constraint.
//!
//! The generator maps [noise | Ep_norm | theta] to a non-negative deposit
//! grid. The discriminator is a shared conv trunk with three heads: a
//! real/fake probability, an energy regression (normalized units), and an
//! angle regression.

use calo_tensor::network::{evaluate, gradients, ActivationTrace, Mode, Param};
use calo_tensor::{Network, NetworkBuilder, Padding, ParamGrads, PrecisionMode, Tensor};

use crate::loss::LossWeights;
use crate::seeds::{derive_seed, Purpose};
use crate::{Result, TrainError};

#[derive(Clone, Debug)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub grid: [usize; 3],
    /// Hidden channel widths of the generator conv stack.
    pub gen_channels: Vec<usize>,
    /// Channel widths of the discriminator conv trunk (stride-2 stages).
    pub disc_channels: Vec<usize>,
    pub weights: LossWeights,
    /// Ep is divided by this before entering any network.
    pub max_energy: f64,
    /// Batchnorm in the generator stack; disable for exact data-parallel
    /// equivalence checks (per-shard statistics break sample independence).
    pub batchnorm: bool,
    pub leaky_slope: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            grid: [8, 8, 8],
            gen_channels: vec![8, 8],
            disc_channels: vec![8, 16, 32],
            weights: LossWeights::default(),
            max_energy: 100.0,
            batchnorm: true,
            leaky_slope: 0.2,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(TrainError::InvalidConfig("latent_dim must be >= 1".into()));
        }
        if self.grid.iter().any(|&d| d < 2) {
            return Err(TrainError::InvalidConfig(format!(
                "grid dims must be >= 2, got {:?}",
                self.grid
            )));
        }
        if self.gen_channels.is_empty() || self.disc_channels.is_empty() {
            return Err(TrainError::InvalidConfig("channel lists must be non-empty".into()));
        }
        let w = &self.weights;
        if [w.bce, w.ep, w.ang, w.ecal].iter().any(|&v| v < 0.0) {
            return Err(TrainError::InvalidConfig("loss weights must be >= 0".into()));
        }
        if !(self.max_energy > 0.0) {
            return Err(TrainError::InvalidConfig("max_energy must be positive".into()));
        }
        Ok(())
    }

    pub fn voxels(&self) -> usize {
        self.grid.iter().product()
    }
}

/// dense -> reshape -> (conv3d [+ batchnorm] + relu) x N -> conv3d head,
/// relu output so deposits stay non-negative.
pub fn build_generator(cfg: &GanConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let [nx, ny, nz] = cfg.grid;
    let init = derive_seed(seed, Purpose::GeneratorInit, 0, 0, 0);
    let mut b = NetworkBuilder::new(&[cfg.latent_dim + 2], init)
        .dense(cfg.voxels())?
        .reshape(&[1, nx, ny, nz])?;
    for &c in &cfg.gen_channels {
        b = b.conv3d(c, [3, 3, 3], 1, Padding::Same)?;
        if cfg.batchnorm {
            b = b.batchnorm()?;
        }
        b = b.relu();
    }
    let net = b.conv3d(1, [3, 3, 3], 1, Padding::Same)?.relu().build();
    Ok(net)
}

/// Conv trunk (stride-2 stages with leaky-relu) feeding three dense heads.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub trunk: Network,
    pub head_p: Network,
    pub head_ep: Network,
    pub head_ang: Network,
}

/// Per-sample discriminator outputs.
#[derive(Clone, Debug)]
pub struct DiscOutputs {
    /// Real/fake probability, strictly inside (0, 1).
    pub p: Vec<f64>,
    /// Energy regression in normalized (Ep / max_energy) units.
    pub ep_hat: Vec<f64>,
    /// Angle regression in radians.
    pub theta_hat: Vec<f64>,
}

/// Retained forward traces for the trunk and each head.
pub struct DiscTrace {
    trunk: ActivationTrace,
    p: ActivationTrace,
    ep: ActivationTrace,
    ang: ActivationTrace,
}

/// Loss gradients with respect to the three outputs.
#[derive(Clone, Debug)]
pub struct DiscOutputGrads {
    pub d_p: Vec<f64>,
    pub d_ep: Vec<f64>,
    pub d_theta: Vec<f64>,
}

pub fn build_discriminator(cfg: &GanConfig, seed: u64) -> Result<Discriminator> {
    cfg.validate()?;
    let [nx, ny, nz] = cfg.grid;
    let init = |salt: u64| derive_seed(seed, Purpose::DiscriminatorInit, 0, 0, salt);
    let mut b = NetworkBuilder::new(&[1, nx, ny, nz], init(0));
    for &c in &cfg.disc_channels {
        b = b.conv3d(c, [3, 3, 3], 2, Padding::Same)?.leaky_relu(cfg.leaky_slope);
    }
    let trunk = b.flatten().build();
    let features = trunk.output_shape()?[0];
    let head_p = NetworkBuilder::new(&[features], init(1)).dense(1)?.sigmoid().build();
    let head_ep = NetworkBuilder::new(&[features], init(2)).dense(1)?.build();
    let head_ang = NetworkBuilder::new(&[features], init(3)).dense(1)?.build();
    Ok(Discriminator {
        trunk,
        head_p,
        head_ep,
        head_ang,
    })
}

impl Discriminator {
    pub fn forward(
        &mut self,
        grids: &Tensor,
        mode: Mode,
        precision: PrecisionMode,
    ) -> Result<(DiscOutputs, DiscTrace)> {
        let trunk = evaluate(&mut self.trunk, grids, mode, precision)?;
        let feat = trunk.output().clone();
        let p = evaluate(&mut self.head_p, &feat, mode, precision)?;
        let ep = evaluate(&mut self.head_ep, &feat, mode, precision)?;
        let ang = evaluate(&mut self.head_ang, &feat, mode, precision)?;
        let out = DiscOutputs {
            p: p.output().data().to_vec(),
            ep_hat: ep.output().data().to_vec(),
            theta_hat: ang.output().data().to_vec(),
        };
        Ok((out, DiscTrace { trunk, p, ep, ang }))
    }

    /// Backpropagates head-output gradients through the heads and trunk.
    /// Returns gradients for every parameter (trunk, p, ep, ang order) and
    /// the gradient with respect to the input grids.
    pub fn backward(&self, trace: &DiscTrace, out_grads: &DiscOutputGrads) -> Result<(ParamGrads, Tensor)> {
        let batch = trace.p.output().shape()[0];
        let col = |v: &[f64]| Tensor::new(vec![batch, 1], v.to_vec()).map_err(TrainError::from);
        let (p_grads, p_in) = gradients(&self.head_p, &trace.p, &col(&out_grads.d_p)?)?;
        let (ep_grads, ep_in) = gradients(&self.head_ep, &trace.ep, &col(&out_grads.d_ep)?)?;
        let (ang_grads, ang_in) = gradients(&self.head_ang, &trace.ang, &col(&out_grads.d_theta)?)?;
        let mut feat_grad = p_in;
        for (a, b) in feat_grad.data_mut().iter_mut().zip(ep_in.data()) {
            *a += b;
        }
        for (a, b) in feat_grad.data_mut().iter_mut().zip(ang_in.data()) {
            *a += b;
        }
        let (trunk_grads, input_grad) = gradients(&self.trunk, &trace.trunk, &feat_grad)?;
        let mut all = trunk_grads.0;
        all.extend(p_grads.0);
        all.extend(ep_grads.0);
        all.extend(ang_grads.0);
        Ok((ParamGrads(all), input_grad))
    }

    pub fn all_params(&self) -> Vec<&Param> {
        self.trunk
            .params()
            .iter()
            .chain(self.head_p.params())
            .chain(self.head_ep.params())
            .chain(self.head_ang.params())
            .collect()
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk
            .params_mut()
            .iter_mut()
            .chain(self.head_p.params_mut().iter_mut())
            .chain(self.head_ep.params_mut().iter_mut())
            .chain(self.head_ang.params_mut().iter_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count()
            + self.head_p.param_count()
            + self.head_ep.param_count()
            + self.head_ang.param_count()
    }

    pub fn max_param_abs_diff(&self, other: &Discriminator) -> f64 {
        self.all_params()
            .iter()
            .zip(other.all_params())
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(0.0, f64::max)
    }
}

/// Builds the generator input rows [noise..., Ep_norm, theta].
pub fn make_generator_input(noise: &Tensor, ep_norm: &[f64], theta: &[f64]) -> Result<Tensor> {
    let (batch, latent) = match noise.shape() {
        [b, l] => (*b, *l),
        other => {
            return Err(TrainError::BatchMismatch(format!(
                "noise must be 2-d, got {other:?}"
            )))
        }
    };
    if ep_norm.len() != batch || theta.len() != batch {
        return Err(TrainError::BatchMismatch(format!(
            "noise batch {batch} vs ep {} / theta {}",
            ep_norm.len(),
            theta.len()
        )));
    }
    let mut data = Vec::with_capacity(batch * (latent + 2));
    for n in 0..batch {
        data.extend_from_slice(&noise.data()[n * latent..(n + 1) * latent]);
        data.push(ep_norm[n]);
        data.push(theta[n]);
    }
    Ok(Tensor::new(vec![batch, latent + 2], data)?)
}

/// Per-sample total deposited energy of a grid batch.
pub fn compute_ecal(grids: &Tensor) -> Vec<f64> {
    let batch = grids.batch();
    if batch == 0 {
        return Vec::new();
    }
    let per = grids.len() / batch;
    (0..batch)
        .map(|n| grids.data()[n * per..(n + 1) * per].iter().sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(batch: usize, cfg: &GanConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = batch * cfg.voxels();
        Tensor::new(
            vec![batch, 1, cfg.grid[0], cfg.grid[1], cfg.grid[2]],
            (0..n).map(|_| rng.random_range(0.0..0.1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn generator_output_contract() {
        let cfg = GanConfig::default();
        let mut gen = build_generator(&cfg, 7).unwrap();
        assert!(gen.param_count() <= 50_000, "params {}", gen.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = Tensor::new(
            vec![4, cfg.latent_dim],
            (0..4 * cfg.latent_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let input = make_generator_input(&noise, &[0.1, 0.5, 0.9, 0.3], &[1.2, 1.5, 1.8, 1.6]).unwrap();
        let trace = evaluate(&mut gen, &input, Mode::Eval, PrecisionMode::Full).unwrap();
        assert_eq!(trace.output().shape(), &[4, 1, 8, 8, 8]);
        assert!(trace.output().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn generator_builds_are_seed_deterministic() {
        let cfg = GanConfig::default();
        let a = build_generator(&cfg, 3).unwrap();
        let b = build_generator(&cfg, 3).unwrap();
        assert_eq!(a.max_param_abs_diff(&b), 0.0);
        let c = build_generator(&cfg, 4).unwrap();
        assert!(a.max_param_abs_diff(&c) > 0.0);
    }

    #[test]
    fn discriminator_output_contract() {
        let cfg = GanConfig::default();
        let mut disc = build_discriminator(&cfg, 11).unwrap();
        let grids = random_grid(5, &cfg, 2);
        let (out, _) = disc.forward(&grids, Mode::Eval, PrecisionMode::Full).unwrap();
        assert_eq!(out.p.len(), 5);
        assert_eq!(out.ep_hat.len(), 5);
        assert_eq!(out.theta_hat.len(), 5);
        assert!(out.p.iter().all(|&p| p > 0.0 && p < 1.0));
        let again = build_discriminator(&cfg, 11).unwrap();
        assert_eq!(disc.max_param_abs_diff(&again), 0.0);
    }

    #[test]
    fn generator_input_layout() {
        let noise = Tensor::new(vec![1, 2], vec![0.1, 0.2]).unwrap();
        let input = make_generator_input(&noise, &[0.5], &[1.57]).unwrap();
        assert_eq!(input.data(), &[0.1, 0.2, 0.5, 1.57]);

        // Degenerate latent width: rows are just [Ep_norm, theta].
        let empty = Tensor::new(vec![2, 0], vec![]).unwrap();
        let input = make_generator_input(&empty, &[0.5, 0.6], &[1.0, 1.1]).unwrap();
        assert_eq!(input.data(), &[0.5, 1.0, 0.6, 1.1]);

        // Empty batch keeps the latent+2 width.
        let none = Tensor::new(vec![0, 3], vec![]).unwrap();
        let input = make_generator_input(&none, &[], &[]).unwrap();
        assert_eq!(input.shape(), &[0, 5]);

        assert!(make_generator_input(&noise, &[0.5, 0.6], &[1.57]).is_err());
    }

    #[test]
    fn ecal_is_the_voxel_sum() {
        let zero = Tensor::zeros(&[2, 1, 2, 2, 2]);
        assert_eq!(compute_ecal(&zero), vec![0.0, 0.0]);

        let mut single = Tensor::zeros(&[1, 1, 2, 2, 2]);
        single.data_mut()[3] = 5.0;
        assert_eq!(compute_ecal(&single), vec![5.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grids = Tensor::new(
            vec![3, 1, 2, 2, 2],
            (0..24).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let got = compute_ecal(&grids);
        for n in 0..3 {
            let mut want = 0.0;
            for i in 0..8 {
                want += grids.data()[n * 8 + i];
            }
            assert!((got[n] - want).abs() < 1e-12);
        }
    }
}
