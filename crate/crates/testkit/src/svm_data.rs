//! Small two-dimensional SVM problems with known generation parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::qp_oracle;

pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<i32>,
    pub gamma: f64,
    pub c: f64,
}

/// Two Gaussian blobs of 10..=30 points with random separation. Even seeds use
/// the scaled gamma rule, odd seeds a random gamma; every fifth seed has C = 10.
pub fn dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(10..=30);
    let sep = rng.random_range(0.5..3.0);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1 } else { -1 };
        let center = f64::from(label) * sep / 2.0;
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x.push(vec![center + a, b]);
        y.push(label);
    }
    let gamma = if seed.is_multiple_of(2) {
        qp_oracle::gamma_rule(&x)
    } else {
        rng.random_range(0.2..3.0)
    };
    let c = if seed % 5 == 4 { 10.0 } else { 1.0 };
    Dataset { x, y, gamma, c }
}

/// 41 x 41 evaluation grid over [-4, 4]^2.
pub fn grid() -> Vec<Vec<f64>> {
    (0..41)
        .flat_map(|i| {
            (0..41).map(move |j| vec![-4.0 + 0.2 * f64::from(i), -4.0 + 0.2 * f64::from(j)])
        })
        .collect()
}
