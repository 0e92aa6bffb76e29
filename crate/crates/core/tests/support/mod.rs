//! Shared fixtures for integration and acceptance tests.

#![allow(dead_code)]

pub mod gradcheck;
pub mod monolithic;

use std::path::Path;

use metamf::dataset::{split_per_user, RatingsTable, ShardSet, SplitConfig};
use metamf::metanet::ModelDims;
use metamf::numkernel::Seed;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// The tiny configuration used by the gradient checks.
pub fn tiny_dims() -> ModelDims {
    ModelDims {
        num_users: 2,
        num_items: 3,
        user_dim: 2,
        item_dim: 2,
        memory_dim: 2,
        low_rank: 1,
        hidden: 2,
        layer_sizes: vec![2, 1],
    }
}

/// Every user rates every item; ratings in [1, 5].
pub fn dense_table(m: usize, n: usize, seed: u64) -> RatingsTable {
    let mut rng = Seed(seed).rng();
    let mut triples = Vec::new();
    for u in 0..m {
        for i in 0..n {
            triples.push((u.to_string(), i.to_string(), rng.gen_range(1.0..5.0)));
        }
    }
    RatingsTable::from_triples(triples, Path::new("dense")).unwrap()
}

pub fn shards_of(table: &RatingsTable, seed: u64) -> ShardSet {
    split_per_user(
        table,
        &SplitConfig {
            seed: Seed(seed),
            ..SplitConfig::default()
        },
    )
    .unwrap()
    .shards
}

/// Low-rank synthetic ratings: `clamp(μ + p_uᵀ q_i + ε, 1, 5)` with `ε ~ N(0, noise²)`.
pub struct Synthetic {
    pub triples: Vec<(String, String, f64)>,
}

impl Synthetic {
    pub fn generate(
        users: usize,
        items: usize,
        rank: usize,
        per_user: usize,
        noise: f64,
        seed: u64,
    ) -> Self {
        let mut rng = Seed(seed).rng();
        let factor = Normal::new(0.0, 0.7).unwrap();
        let eps = Normal::new(0.0, noise).unwrap();
        let mu = 3.0;
        let p: Vec<Vec<f64>> = (0..users)
            .map(|_| (0..rank).map(|_| factor.sample(&mut rng)).collect())
            .collect();
        let q: Vec<Vec<f64>> = (0..items)
            .map(|_| (0..rank).map(|_| factor.sample(&mut rng)).collect())
            .collect();
        let all_items: Vec<usize> = (0..items).collect();
        let mut triples = Vec::new();
        for (u, pu) in p.iter().enumerate() {
            for &i in all_items.choose_multiple(&mut rng, per_user.min(items)) {
                let dot: f64 = pu.iter().zip(&q[i]).map(|(a, b)| a * b).sum();
                let r = (mu + dot + eps.sample(&mut rng)).clamp(1.0, 5.0);
                triples.push((u.to_string(), i.to_string(), r));
            }
        }
        Self { triples }
    }

    pub fn table(&self) -> RatingsTable {
        RatingsTable::from_triples(self.triples.clone(), Path::new("synthetic")).unwrap()
    }

    /// Tab-separated `user item rating` lines.
    pub fn to_text(&self) -> String {
        self.triples
            .iter()
            .map(|(u, i, r)| format!("{u}\t{i}\t{r}\n"))
            .collect()
    }

    pub fn rating_variance(&self) -> f64 {
        let n = self.triples.len() as f64;
        let mean = self.triples.iter().map(|t| t.2).sum::<f64>() / n;
        self.triples.iter().map(|t| (t.2 - mean).powi(2)).sum::<f64>() / n
    }
}
