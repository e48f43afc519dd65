use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-compressed sparse square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let n = dense.nrows();
        let mut row_start = Vec::with_capacity(n + 1);
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for r in 0..n {
            row_start.push(cols.len());
            for c in 0..dense.ncols() {
                let v = dense[(r, c)];
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
        }
        row_start.push(cols.len());
        Self {
            n,
            row_start,
            cols,
            vals,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for i in self.row_start[r]..self.row_start[r + 1] {
                d[(r, self.cols[i])] = self.vals[i];
            }
        }
        d
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `out += self * x`.
    #[inline]
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in self.row_start[r]..self.row_start[r + 1] {
                acc += self.vals[i] * x[self.cols[i]];
            }
            *o += acc;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.vals {
            *v *= factor;
        }
    }
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(dense: &DMatrix<f64>) -> f64 {
    dense
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Uniform `[-0.5, 0.5]` input weights of shape `m x (1 + n)`.
pub fn random_input_weights(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, 1 + n, |_, _| rng.random_range(-0.5..=0.5))
}

/// Sparse recurrent weights scaled to `target_radius`. A matrix that came out
/// all zero is returned unscaled.
pub fn random_reservoir(
    rng: &mut ChaCha8Rng,
    m: usize,
    sparsity: f64,
    target_radius: f64,
) -> SparseMatrix {
    let mut dense = DMatrix::from_fn(m, m, |_, _| {
        if rng.random_bool(sparsity) {
            rng.random_range(-0.5..=0.5)
        } else {
            0.0
        }
    });
    let radius = spectral_radius(&dense);
    if radius > 0.0 {
        dense *= target_radius / radius;
    }
    SparseMatrix::from_dense(&dense)
}

pub fn branch_rng(seed: u64, branch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::rcap::derive_seed(seed, branch as u64))
}
