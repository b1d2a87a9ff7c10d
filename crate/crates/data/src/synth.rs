//! Parametrized synthetic shower generator.
//!
//! A desk-scale stand-in for full Monte Carlo reference data: deposits
//! follow a longitudinal profile t^a * exp(-b t) along an axis tilted by
//! theta in the x-z plane with Gaussian transverse falloff, normalized so
//! the total deposited energy equals sampling_fraction * Ep up to a
//! configurable noise factor.

use calo_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{DataError, Result};

/// One calorimeter event: a non-negative energy-deposit grid plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ShowerEvent {
    /// Shape [1, nx, ny, nz]; z is the longitudinal axis.
    pub grid: Tensor,
    /// Primary particle energy (energy units).
    pub ep: f64,
    /// Incidence angle in radians; pi/2 is perpendicular.
    pub theta: f64,
}

impl ShowerEvent {
    /// Total deposited energy: the sum of all voxels.
    pub fn ecal(&self) -> f64 {
        self.grid.sum()
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        let s = self.grid.shape();
        [s[1], s[2], s[3]]
    }
}

/// Shower-shape constants. Defaults are invented surrogate physics chosen
/// to give shower-like profiles; everything is configurable.
#[derive(Clone, Debug)]
pub struct ShowerParams {
    /// Longitudinal profile rise exponent.
    pub a: f64,
    /// Longitudinal profile decay constant (per depth unit).
    pub b: f64,
    /// Transverse Gaussian sigma in cells.
    pub sigma_cells: f64,
    /// Fraction of the primary energy deposited in the grid.
    pub sampling_fraction: f64,
    /// Depth unit in cells; `None` means a quarter of the grid depth, which
    /// puts the default profile peak about 40% into the volume.
    pub depth_unit_cells: Option<f64>,
    /// Allowed angle range in radians.
    pub theta_range: (f64, f64),
}

impl Default for ShowerParams {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 1.2,
            sigma_cells: 1.0,
            sampling_fraction: 0.025,
            depth_unit_cells: None,
            theta_range: (std::f64::consts::FRAC_PI_3, 2.0 * std::f64::consts::FRAC_PI_3),
        }
    }
}

/// Generates one deterministic synthetic shower.
pub fn synth_shower(
    ep: f64,
    theta: f64,
    grid_shape: [usize; 3],
    noise_level: f64,
    seed: u64,
) -> Result<ShowerEvent> {
    synth_shower_with(&ShowerParams::default(), ep, theta, grid_shape, noise_level, seed)
}

pub fn synth_shower_with(
    params: &ShowerParams,
    ep: f64,
    theta: f64,
    grid_shape: [usize; 3],
    noise_level: f64,
    seed: u64,
) -> Result<ShowerEvent> {
    if !(ep > 0.0) || !ep.is_finite() {
        return Err(DataError::InvalidLabel(format!("Ep must be positive, got {ep}")));
    }
    let (lo, hi) = params.theta_range;
    if !(theta >= lo && theta <= hi) {
        return Err(DataError::InvalidLabel(format!(
            "theta {theta} outside configured range [{lo}, {hi}]"
        )));
    }
    let [nx, ny, nz] = grid_shape;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(DataError::InvalidLabel(format!(
            "grid dims must be >= 2, got {grid_shape:?}"
        )));
    }
    let depth_unit = params.depth_unit_cells.unwrap_or(nz as f64 / 4.0);
    // Axis enters at the centre of the z = 0 face, tilted in the x-z plane.
    let entry = [nx as f64 / 2.0, ny as f64 / 2.0, 0.0];
    let dir = [theta.cos(), 0.0, theta.sin()];
    let inv_two_sigma2 = 1.0 / (2.0 * params.sigma_cells * params.sigma_cells);

    let mut raw = vec![0.0; nx * ny * nz];
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let p = [ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5];
                let rel = [p[0] - entry[0], p[1] - entry[1], p[2] - entry[2]];
                let u = rel[0] * dir[0] + rel[1] * dir[1] + rel[2] * dir[2];
                if u <= 0.0 {
                    continue;
                }
                let d2 = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]) - u * u;
                let t = u / depth_unit;
                let longitudinal = t.powf(params.a) * (-params.b * t).exp();
                raw[(ix * ny + iy) * nz + iz] = longitudinal * (-d2.max(0.0) * inv_two_sigma2).exp();
            }
        }
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(DataError::InvalidLabel(format!(
            "shower axis misses the grid entirely (theta = {theta})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = if noise_level > 0.0 {
        rng.random_range(-noise_level..noise_level)
    } else {
        0.0
    };
    let target = params.sampling_fraction * ep * (1.0 + eps);
    let scale = target / total;
    for v in &mut raw {
        *v *= scale;
    }
    Ok(ShowerEvent {
        grid: Tensor::new(vec![1, nx, ny, nz], raw).expect("grid shape"),
        ep,
        theta,
    })
}

/// Samples a batch of events with labels drawn uniformly from the given
/// ranges, seeded per event.
pub fn synth_dataset(
    params: &ShowerParams,
    n: usize,
    grid_shape: [usize; 3],
    ep_range: (f64, f64),
    theta_range: (f64, f64),
    noise_level: f64,
    seed: u64,
) -> Result<Vec<ShowerEvent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ep = rng.random_range(ep_range.0..ep_range.1);
        let theta = rng.random_range(theta_range.0..theta_range.1);
        out.push(synth_shower_with(
            params,
            ep,
            theta,
            grid_shape,
            noise_level,
            seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_noise_hits_target_energy_exactly() {
        let ev = synth_shower(40.0, FRAC_PI_2, [8, 8, 8], 0.0, 1).unwrap();
        let want = 0.025 * 40.0;
        assert!((ev.ecal() - want).abs() < 1e-9, "ecal {}", ev.ecal());
    }

    #[test]
    fn perpendicular_axis_has_no_transverse_drift() {
        let ev = synth_shower(40.0, FRAC_PI_2, [8, 8, 8], 0.0, 2).unwrap();
        let [nx, ny, nz] = ev.grid_dims();
        let mut centroids = Vec::new();
        for iz in 0..nz {
            let mut num = 0.0;
            let mut den = 0.0;
            for ix in 0..nx {
                for iy in 0..ny {
                    let v = ev.grid.data()[(ix * ny + iy) * nz + iz];
                    num += v * (ix as f64 + 0.5);
                    den += v;
                }
            }
            if den > 0.0 {
                centroids.push(num / den);
            }
        }
        for c in &centroids {
            assert!(
                (c - centroids[0]).abs() < 0.5,
                "centroid drifted: {centroids:?}"
            );
        }
    }

    #[test]
    fn tilted_axis_does_drift() {
        let ev = synth_shower(40.0, 1.2, [12, 8, 8], 0.0, 3).unwrap();
        let [nx, ny, nz] = ev.grid_dims();
        let centroid = |iz: usize| {
            let mut num = 0.0;
            let mut den = 0.0;
            for ix in 0..nx {
                for iy in 0..ny {
                    let v = ev.grid.data()[(ix * ny + iy) * nz + iz];
                    num += v * (ix as f64 + 0.5);
                    den += v;
                }
            }
            num / den
        };
        assert!(centroid(nz - 1) - centroid(0) > 0.5);
    }

    #[test]
    fn same_seed_is_deterministic() {
        let a = synth_shower(25.0, 1.8, [8, 8, 8], 0.1, 42).unwrap();
        let b = synth_shower(25.0, 1.8, [8, 8, 8], 0.1, 42).unwrap();
        assert_eq!(a.grid.data(), b.grid.data());
        let c = synth_shower(25.0, 1.8, [8, 8, 8], 0.1, 43).unwrap();
        assert_ne!(a.grid.data(), c.grid.data());
    }

    #[test]
    fn deposits_are_non_negative_and_bounded() {
        let ev = synth_shower(100.0, 1.9, [8, 8, 8], 0.1, 7).unwrap();
        assert!(ev.grid.data().iter().all(|&v| v >= 0.0));
        assert!(ev.ecal() <= 1.5 * 0.025 * 100.0);
    }

    #[test]
    fn invalid_labels_are_rejected() {
        assert!(synth_shower(-5.0, FRAC_PI_2, [8, 8, 8], 0.0, 1).is_err());
        assert!(synth_shower(10.0, 0.1, [8, 8, 8], 0.0, 1).is_err());
        assert!(synth_shower(10.0, FRAC_PI_2, [1, 8, 8], 0.0, 1).is_err());
    }
}
