//! Counter-based RNG stream derivation.
//!
//! Every random draw in training is keyed by (master seed, purpose, epoch,
//! batch, counter) through a splitmix64 chain, so the same sample position
//! receives the same noise regardless of how the batch is sharded across
//! replicas. This is what makes R-replica runs reproduce the single-replica
//! run exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable tags for independent stream families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    GeneratorInit,
    DiscriminatorInit,
    /// Latent noise for the fake batch used in the discriminator phase.
    DiscFakeNoise,
    /// Latent noise for generator inner step `0` or `1`.
    GenStepNoise(u32),
    /// Label resampling permutation for a generator inner step.
    GenStepLabels(u32),
}

fn tag(p: Purpose) -> u64 {
    match p {
        Purpose::GeneratorInit => 0x01,
        Purpose::DiscriminatorInit => 0x02,
        Purpose::DiscFakeNoise => 0x10,
        Purpose::GenStepNoise(i) => 0x20 + i as u64,
        Purpose::GenStepLabels(i) => 0x40 + i as u64,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives one stream seed from the master seed and a purpose/counter key.
pub fn derive_seed(master: u64, purpose: Purpose, epoch: u64, batch: u64, counter: u64) -> u64 {
    let mut s = splitmix64(master);
    for v in [tag(purpose), epoch, batch, counter] {
        s = splitmix64(s ^ v);
    }
    s
}

pub fn rng_for(master: u64, purpose: Purpose, epoch: u64, batch: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, epoch, batch, counter))
}

/// Deterministic Fisher-Yates permutation of 0..n.
pub fn permutation(n: usize, master: u64, purpose: Purpose, epoch: u64, batch: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = rng_for(master, purpose, epoch, batch, 0);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
