//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by a master
//! seed and a stream index, so work split by index reproduces bit-for-bit
//! regardless of how it is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Vector;

pub type Stream = ChaCha8Rng;

/// Independent stream `index` derived from `seed`.
pub fn substream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Fills `out` with a uniform draw on the sphere of radius `radius`.
pub fn fill_sphere<R: Rng + ?Sized>(rng: &mut R, radius: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    loop {
        let mut sq = 0.0;
        for o in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *o = g;
            sq += g * g;
        }
        if sq > 1e-300 {
            let scale = radius / num_traits::Float::sqrt(sq);
            for o in out.iter_mut() {
                *o *= scale;
            }
            return;
        }
    }
}

/// Uniform point in the closed ball `B(center, radius)`.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, center: &Vector, radius: f64) -> Vector {
    let d = center.len();
    let mut dir = alloc::vec![0.0; d];
    fill_sphere(rng, 1.0, &mut dir);
    let u: f64 = rng.random();
    let rho = radius * num_traits::Float::powf(u, 1.0 / d.max(1) as f64);
    Vector::from_iterator(d, center.iter().zip(&dir).map(|(c, v)| c + rho * v))
}

/// Uniform point in the axis-aligned box `[lo, hi]`.
pub fn uniform_in_box<R: Rng + ?Sized>(rng: &mut R, lo: &Vector, hi: &Vector) -> Vector {
    Vector::from_iterator(
        lo.len(),
        lo.iter().zip(hi.iter()).map(|(a, b)| a + (b - a) * rng.random::<f64>()),
    )
}
