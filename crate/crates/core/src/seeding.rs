//! Deterministic random streams.
//!
//! Every generator in the crate draws from a ChaCha8 stream keyed by a
//! `(seed, stream)` pair, so per-sample and per-trial draws are independent
//! of scheduling order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{Matrix, Vector};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Mixes a label into a seed so that unrelated consumers of the same user
/// seed never share a stream.
pub fn derive(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded with splitmix64 of the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    // Fill column by column so the draw order is independent of storage layout.
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let z: f64 = StandardNormal.sample(rng);
            out[(i, j)] = std * z;
        }
    }
    out
}

pub fn gaussian_vector(rng: &mut Rng, len: usize, std: f64) -> Vector {
    Vector::from_fn(len, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Uniform random point on the unit sphere in `dim` dimensions.
pub fn unit_sphere(rng: &mut Rng, dim: usize) -> Vector {
    loop {
        let v = gaussian_vector(rng, dim, 1.0);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}
