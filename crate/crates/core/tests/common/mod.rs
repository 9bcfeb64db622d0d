#![allow(dead_code)]

use attnsketch::linalg::DenseMatrix;
use attnsketch::qsim::rng_from_seed;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng_from_seed(seed ^ 0x7465_7374);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
    gaussian(n, n, seed).symmetrize()
}

/// Gram–Schmidt on a Gaussian matrix.
pub fn orthonormal(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let g = gaussian(rows, cols, seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in 0..cols {
        let mut v = g.column(c);
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    DenseMatrix::from_fn(rows, cols, |i, j| basis[j][i])
}
