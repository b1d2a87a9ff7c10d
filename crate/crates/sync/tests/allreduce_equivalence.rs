//! Ring all-reduce must agree with the gather-then-mean reference for any
//! replica count and vector length, including awkward chunkings.

use calo_sync::{naive_allreduce, ring_allreduce};
use calo_tensor::{ParamGrads, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grads(replicas: usize, shapes: &[Vec<usize>], seed: u64) -> Vec<ParamGrads> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..replicas)
        .map(|_| {
            ParamGrads(
                shapes
                    .iter()
                    .map(|s| {
                        let n: usize = s.iter().product();
                        Tensor::new(s.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                            .unwrap()
                    })
                    .collect(),
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn ring_matches_naive(replicas in 1usize..=16, len in 1usize..=4096, seed in any::<u64>()) {
        let grads = random_grads(replicas, &[vec![len]], seed);
        let ring = ring_allreduce(&grads).unwrap();
        let naive = naive_allreduce(&grads).unwrap();
        prop_assert!(ring.max_abs_diff(&naive) < 1e-12);
    }

    #[test]
    fn ring_matches_naive_multi_tensor(replicas in 2usize..=8, seed in any::<u64>()) {
        let shapes = vec![vec![3, 5], vec![17], vec![2, 2, 2]];
        let grads = random_grads(replicas, &shapes, seed);
        let ring = ring_allreduce(&grads).unwrap();
        let naive = naive_allreduce(&grads).unwrap();
        prop_assert!(ring.max_abs_diff(&naive) < 1e-12);
    }
}

#[test]
fn large_vector_sixteen_replicas() {
    let grads = random_grads(16, &[vec![100_000]], 77);
    let ring = ring_allreduce(&grads).unwrap();
    let naive = naive_allreduce(&grads).unwrap();
    assert!(ring.max_abs_diff(&naive) < 1e-12);
}
