//! Seeded synthetic datasets for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::Dataset;

/// `n` vectors with components uniform in `[0, 1)`; ids `0..n`.
pub fn uniform(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.random::<f32>()).collect();
    Dataset::from_flat(dim, data).expect("finite by construction")
}

/// Gaussian mixture with a decaying per-dimension spectrum and a positive
/// offset, loosely shaped like SIFT descriptors: a few directions carry most
/// of the spread between clusters, and the mean sits far from the origin.
#[derive(Clone, Debug)]
pub struct ClusteredMixture {
    dim: usize,
    centers: Vec<Vec<f32>>,
    noise_scale: Vec<f64>,
}

impl ClusteredMixture {
    pub fn new(dim: usize, clusters: usize, seed: u64) -> Self {
        assert!(dim > 0 && clusters > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spread: Vec<f64> = (0..dim).map(|j| 40.0 * 0.85f64.powi(j as i32) + 2.0).collect();
        let centers = (0..clusters)
            .map(|_| {
                spread
                    .iter()
                    .map(|s| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (50.0 + s * z) as f32
                    })
                    .collect()
            })
            .collect();
        let noise_scale = (0..dim).map(|j| 3.0 * 0.93f64.powi(j as i32) + 1.0).collect();
        Self {
            dim,
            centers,
            noise_scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draws `n` points with ids `0..n`.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let c = &self.centers[rng.random_range(0..self.centers.len())];
            for (j, &mu) in c.iter().enumerate() {
                let noise = Normal::new(0.0, self.noise_scale[j]).expect("positive scale");
                data.push((f64::from(mu) + noise.sample(&mut rng)) as f32);
            }
        }
        Dataset::from_flat(self.dim, data).expect("finite by construction")
    }
}
