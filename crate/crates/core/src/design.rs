//! Maximin Latin hypercube designs on [−1, 1]^p.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_LHS_ITERATIONS: usize = 1000;

/// One jittered Latin hypercube: column j places one point uniformly in
/// each of the n strata of width 2/n, in a random order.
pub fn random_lhs(n: usize, p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..p {
        perm.shuffle(rng);
        for i in 0..n {
            let u: f64 = rng.random();
            x[(i, j)] = (-1.0 + 2.0 * (perm[i] as f64 + u) / n as f64).min(1.0);
        }
    }
    x
}

/// Smallest Euclidean distance between two rows (infinite for n < 2).
pub fn min_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.nrows() {
        for k in (i + 1)..x.nrows() {
            let d = (x.row(i) - x.row(k)).norm();
            best = best.min(d);
        }
    }
    best
}

/// Among `iterations` random hypercubes drawn from a ChaCha8 stream seeded
/// with `seed`, the one with the largest minimum pairwise distance. Ties go
/// to the earliest candidate.
pub fn maximin_lhs(n: usize, p: usize, seed: u64, iterations: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = random_lhs(n, p, &mut rng);
    let mut best_d = min_pairwise_distance(&best);
    for _ in 1..iterations.max(1) {
        let cand = random_lhs(n, p, &mut rng);
        let d = min_pairwise_distance(&cand);
        if d > best_d {
            best = cand;
            best_d = d;
        }
    }
    best
}
