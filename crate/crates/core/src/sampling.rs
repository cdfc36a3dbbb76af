//! Seeded Lebesgue sampling on a fine rational grid.
//!
//! Sample i of seed s comes from the ChaCha stream i keyed by s, so any sample
//! can be regenerated alone and the draw order never matters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Point;
use crate::measures::{OrbitPolicy, DEFAULT_DEPTH};
use crate::numeric::rat;

/// Grid denominator: samples are k/P with 0 < k < P.
pub const GRID: i64 = 1_000_003;

pub fn sample_point(seed: u64, index: u64, dim: usize) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let coords = (0..dim).map(|_| rat(rng.random_range(1..GRID), GRID)).collect();
    Point::new(coords).expect("grid points lie in M")
}

/// Monte Carlo settings shared by the sampling experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub horizon: usize,
    pub seed: u64,
    pub depth: usize,
    pub policy: OrbitPolicy,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo { samples: 10_000, horizon: 1_000, seed: 0, depth: DEFAULT_DEPTH, policy: OrbitPolicy::default() }
    }
}
