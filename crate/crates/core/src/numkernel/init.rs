use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Root of all randomness. Identical seeds give bit-identical streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives an independent child seed for a named stream (splitmix64 finalizer).
    pub fn derive(self, stream: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Xavier/Glorot uniform initialization in `[-√(6/(rows+cols)), +√(6/(rows+cols))]`.
pub fn xavier_init(rows: usize, cols: usize, seed: Seed) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!(
            "xavier_init needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let bound = xavier_bound(rows, cols);
    let mut rng = seed.rng();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}
