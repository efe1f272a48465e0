use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nncore::{Real, Tensor};

pub const LATENT_DIM: usize = 256;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of ensemble member `j` derived from a frame's base seed.
pub fn split_seed(base: u64, j: u64) -> u64 {
    mix64(base ^ j.wrapping_mul(GOLDEN))
}

/// `dim` i.i.d. standard normals from a ChaCha12 stream keyed by `seed`.
pub fn gaussian_vector<T: Real>(seed: u64, dim: usize) -> Tensor<T> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let v: Vec<T> = (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z)
        })
        .collect();
    Tensor::from_vec(v)
}

/// `z_H ~ N(0, I)` of width 256.
pub fn sample_latent_input(seed: u64) -> Tensor<f32> {
    gaussian_vector(seed, LATENT_DIM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_vector() {
        assert_eq!(sample_latent_input(42), sample_latent_input(42));
        assert_ne!(sample_latent_input(42), sample_latent_input(43));
        assert_eq!(sample_latent_input(0).shape(), &[256]);
    }

    #[test]
    fn latent_moments_are_standard_normal() {
        let v: Vec<f64> = (0..400).flat_map(|s| gaussian_vector::<f64>(s, 256).into_data()).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(v.len() >= 100_000);
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn split_seeds_are_distinct() {
        let seeds: HashSet<u64> = (0..10_000).map(|j| split_seed(7, j)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(split_seed(7, 0), split_seed(8, 0));
    }

    #[test]
    fn mix64_known_values() {
        // First SplitMix64 output for state 0 is mix64(GOLDEN).
        assert_eq!(mix64(GOLDEN), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(0), 0);
    }
}
