use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, DenseMatrix};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn random_psd(n: usize, seed: u64) -> DenseMatrix {
    let g = gaussian(n, n, seed);
    g.matmul(&g.transpose()).symmetrize()
}

pub fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let g = gaussian(rows, cols, seed).to_nalgebra();
    let q = g.qr().q();
    DenseMatrix::from_nalgebra(&q.columns(0, cols).into_owned())
}

pub fn max_eig(m: &DenseMatrix) -> f64 {
    linalg::symmetric_eigenvalues(m)[0]
}
