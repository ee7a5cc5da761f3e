//! Seeded random problem instances shared by tests, experiments and the
//! self-test runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::ensemble::{AttentionWeights, Ensemble};
use crate::{Matrix, Result, Vector};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Matrix with i.i.d. `N(0, scale^2)` entries.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Matrix {
    let g = gaussian_matrix(rng, d, d, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(lo..=hi))
}

fn from_spectrum(q: &Matrix, eig: &Vector) -> Matrix {
    let m = q * Matrix::from_diagonal(eig) * q.transpose();
    0.5 * (&m + m.transpose())
}

/// Symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn spd<R: Rng + ?Sized>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Matrix {
    let q = orthogonal(rng, d);
    from_spectrum(&q, &uniform_vec(rng, d, lo, hi))
}

/// Weights whose `A` and `B` share eigenvectors, so that `V = B A` is
/// symmetric and `B` is symmetric positive definite.
///
/// `A` has eigenvalues in `a_range` and `B` in `b_range`.
pub fn commuting_weights<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    a_range: (f64, f64),
    b_range: (f64, f64),
) -> Result<AttentionWeights> {
    let q = orthogonal(rng, d);
    let a_eig = uniform_vec(rng, d, a_range.0, a_range.1);
    let b_eig = uniform_vec(rng, d, b_range.0, b_range.1);
    let v_eig = a_eig.component_mul(&b_eig);
    AttentionWeights::new(from_spectrum(&q, &a_eig), from_spectrum(&q, &v_eig))
}

/// Ensemble with Gaussian positions and momenta.
pub fn gaussian_ensemble<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    d: usize,
    x_scale: f64,
    y_scale: f64,
) -> Result<Ensemble> {
    let x = gaussian_matrix(rng, n, d, x_scale);
    let y = gaussian_matrix(rng, n, d, y_scale);
    Ensemble::new(x, y, 0.0)
}
