//! Particle ensembles and attention weight matrices.

use nalgebra::SymmetricEigen;

use crate::{Error, Matrix, Result};

/// Paired positions and momenta of `N` tokens in `d` dimensions.
///
/// Row `i` of `x` is the token position `X_i`; row `i` of `y` is its momentum
/// `Y_i`, the gradient of the potential at `X_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub x: Matrix,
    pub y: Matrix,
    pub t: f64,
}

impl Ensemble {
    pub fn new(x: Matrix, y: Matrix, t: f64) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Dimension("ensemble needs N >= 1 and d >= 1".into()));
        }
        if x.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "positions are {:?} but momenta are {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Domain(format!("ensemble time must be finite and >= 0, got {t}")));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ensemble entries".into()));
        }
        Ok(Self { x, y, t })
    }

    /// Ensemble at rest: `Y = 0`.
    pub fn at_rest(x: Matrix, t: f64) -> Result<Self> {
        let y = Matrix::zeros(x.nrows(), x.ncols());
        Self::new(x, y, t)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

pub(crate) fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn asymmetry(m: &Matrix) -> f64 {
    max_abs(&(m - m.transpose()))
}

/// Symmetric bilinear form `A`, value matrix `V` and the mobility `B = V A^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    a: Matrix,
    v: Matrix,
    b: Matrix,
}

pub const SYMMETRY_TOL: f64 = 1e-12;
const SINGULAR_REL_TOL: f64 = 1e-10;
const RESIDUAL_REL_TOL: f64 = 1e-10;

impl AttentionWeights {
    /// Builds the weights from a symmetric `A` and symmetric `V`.
    ///
    /// `B` is formed through the eigendecomposition of `A`; construction fails
    /// when the smallest eigenvalue magnitude is below `1e-10 * ||A||_2`.
    pub fn new(a: Matrix, v: Matrix) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || !a.is_square() || v.shape() != a.shape() {
            return Err(Error::Dimension(format!(
                "A is {:?} and V is {:?}; both must be d x d",
                a.shape(),
                v.shape()
            )));
        }
        if !a.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("attention weights".into()));
        }
        let asym_a = asymmetry(&a);
        if asym_a > SYMMETRY_TOL {
            return Err(Error::NotSymmetric("A", asym_a));
        }
        let asym_v = asymmetry(&v);
        if asym_v > SYMMETRY_TOL {
            return Err(Error::NotSymmetric("V", asym_v));
        }

        let eig = SymmetricEigen::new(a.clone());
        let spectral = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        let smallest = eig
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, l| m.min(l.abs()));
        let threshold = SINGULAR_REL_TOL * spectral;
        if spectral == 0.0 || smallest < threshold {
            return Err(Error::Singular {
                name: "A",
                smallest,
                threshold,
            });
        }
        let inv_diag = Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let a_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
        let b = &v * a_inv;

        let residual = max_abs(&(&b * &a - &v));
        if residual > RESIDUAL_REL_TOL * max_abs(&v) {
            return Err(Error::InvalidParameter(format!(
                "B A reproduces V only to {residual:e}; A is too ill-conditioned"
            )));
        }
        Ok(Self { a, v, b })
    }

    /// Builds `A` from query/key factors as `(K^T Q + Q^T K) / 2`.
    pub fn from_factors(q: &Matrix, k: &Matrix, v: Matrix) -> Result<Self> {
        Self::new(symmetrized_product(q, k)?, v)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a_is_positive_definite(&self) -> bool {
        is_spd(&self.a)
    }

    /// `B` symmetric (to `1e-10` relative) and positive definite.
    pub fn b_is_spd(&self) -> bool {
        asymmetry(&self.b) <= 1e-10 * max_abs(&self.b).max(1.0) && is_spd(&(0.5 * (&self.b + self.b.transpose())))
    }

    /// Fails unless `A` is positive definite, as the linear system requires.
    pub fn require_positive_definite_a(&self) -> Result<()> {
        if self.a_is_positive_definite() {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite("A"))
        }
    }

    /// Fails unless `B` is symmetric positive definite, as the softmax system requires.
    pub fn require_spd_b(&self) -> Result<()> {
        if self.b_is_spd() {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite("B"))
        }
    }
}

/// `(K^T Q + Q^T K) / 2` for query/key projections of shape `m x d`.
pub fn symmetrized_product(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.shape() != k.shape() {
        return Err(Error::Dimension(format!(
            "Q is {:?} but K is {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let ktq = k.transpose() * q;
    Ok(0.5 * (&ktq + ktq.transpose()))
}

pub(crate) fn is_spd(m: &Matrix) -> bool {
    m.clone().cholesky().is_some()
}
