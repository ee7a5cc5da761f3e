//! Conservative vector fields, Hamiltonians and energies of the accelerated
//! linear and softmax attention particle systems.
//!
//! Every field here is the conservative part `(F, G)` of the dynamics
//! `X' = F(X, Y)`, `Y' = -alpha(t) Y + G(X, Y)`. Damping is applied by the
//! integrators.

use crate::damping::DampingSchedule;
use crate::ensemble::{AttentionWeights, Ensemble};
use crate::{Error, Matrix, Result, Vector};

/// Largest admissible exponent `X_i^T A X_j` before the score build fails.
pub const DEFAULT_OVERFLOW_GUARD: f64 = 700.0;

/// Conservative rates of positions (`f`) and momenta (`g`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub f: Matrix,
    pub g: Matrix,
}

/// Softmax scores `M_ij = exp(X_i^T A X_j)` with cached row sums.
///
/// Entries removed by a causal mask are stored as exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub m: Matrix,
    pub rowsum: Vector,
}

impl ScoreMatrix {
    /// Exponentiates pre-activation scores, optionally keeping only `j <= i`.
    pub fn from_logits(logits: &Matrix, guard: f64, causal: bool) -> Result<Self> {
        let n = logits.nrows();
        if logits.ncols() != n {
            return Err(Error::Dimension(format!(
                "score logits must be square, got {:?}",
                logits.shape()
            )));
        }
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let upper = if causal { i + 1 } else { n };
            for j in 0..upper {
                let z = logits[(i, j)];
                if !(z <= guard) {
                    return Err(Error::ScoreOverflow {
                        i,
                        j,
                        exponent: z,
                        guard,
                    });
                }
                m[(i, j)] = z.exp();
            }
        }
        let rowsum = Vector::from_iterator(n, m.row_iter().map(|r| r.sum()));
        Ok(Self { m, rowsum })
    }

    pub fn total(&self) -> f64 {
        self.rowsum.sum()
    }
}

/// A conservative field evaluated with positions frozen.
///
/// Both systems are linear in the momentum given the positions, so a single
/// frozen score build serves every momentum the stepper asks about.
pub trait FrozenField {
    /// Position rate `F(X, Y)`.
    fn drift(&self, y: &Matrix) -> Matrix;
    /// Conservative momentum rate `G(X, Y)`.
    fn force(&self, y: &Matrix) -> Matrix;
    /// `G` with the trailing position factor replaced by `x_new`; only the
    /// softmax worked-example discretization uses this.
    fn force_with_positions(&self, y: &Matrix, _x_new: &Matrix) -> Matrix {
        self.force(y)
    }
}

/// Source of conservative fields for a particle system.
pub trait ConservativeField {
    type Frozen: FrozenField;

    /// Builds the positional part of the field: one oracle call.
    fn freeze(&self, x: &Matrix) -> Result<Self::Frozen>;

    fn hamiltonian(&self, x: &Matrix, y: &Matrix) -> Result<f64>;

    fn energy(&self, x: &Matrix) -> Result<f64>;

    fn fields(&self, x: &Matrix, y: &Matrix) -> Result<FieldPair> {
        let frozen = self.freeze(x)?;
        Ok(FieldPair {
            f: frozen.drift(y),
            g: frozen.force(y),
        })
    }
}

impl<T: ConservativeField + ?Sized> ConservativeField for &T {
    type Frozen = T::Frozen;

    fn freeze(&self, x: &Matrix) -> Result<Self::Frozen> {
        (**self).freeze(x)
    }

    fn hamiltonian(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        (**self).hamiltonian(x, y)
    }

    fn energy(&self, x: &Matrix) -> Result<f64> {
        (**self).energy(x)
    }
}

fn check_dims(x: &Matrix, y: Option<&Matrix>, w: &AttentionWeights) -> Result<()> {
    if x.ncols() != w.dim() {
        return Err(Error::Dimension(format!(
            "particles have d = {} but weights are {} x {}",
            x.ncols(),
            w.dim(),
            w.dim()
        )));
    }
    if let Some(y) = y {
        if y.shape() != x.shape() {
            return Err(Error::Dimension(format!(
                "positions are {:?} but momenta are {:?}",
                x.shape(),
                y.shape()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Linear attention

/// Accelerated linear attention: `F = X A X^T Y / N`,
/// `G = -Y Y^T X A / N + X V`.
#[derive(Debug, Clone)]
pub struct LinearAttention {
    pub weights: AttentionWeights,
}

impl LinearAttention {
    pub fn new(weights: AttentionWeights) -> Self {
        Self { weights }
    }
}

#[derive(Debug, Clone)]
pub struct LinearFrozen {
    x: Matrix,
    xa: Matrix,
    xv: Matrix,
    inv_n: f64,
}

impl FrozenField for LinearFrozen {
    fn drift(&self, y: &Matrix) -> Matrix {
        // X A (X^T Y) keeps the cost at O(N d^2)
        &self.xa * (self.x.transpose() * y) * self.inv_n
    }

    fn force(&self, y: &Matrix) -> Matrix {
        &self.xv - y * (y.transpose() * &self.xa) * self.inv_n
    }
}

impl ConservativeField for LinearAttention {
    type Frozen = LinearFrozen;

    fn freeze(&self, x: &Matrix) -> Result<LinearFrozen> {
        check_dims(x, None, &self.weights)?;
        Ok(LinearFrozen {
            x: x.clone(),
            xa: x * self.weights.a(),
            xv: x * self.weights.v(),
            inv_n: 1.0 / x.nrows() as f64,
        })
    }

    fn hamiltonian(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        check_dims(x, Some(y), &self.weights)?;
        Ok(linear_hamiltonian_unchecked(x, y, &self.weights))
    }

    fn energy(&self, x: &Matrix) -> Result<f64> {
        check_dims(x, None, &self.weights)?;
        Ok(linear_energy_unchecked(x, &self.weights))
    }
}

fn linear_hamiltonian_unchecked(x: &Matrix, y: &Matrix, w: &AttentionWeights) -> f64 {
    let n = x.nrows() as f64;
    let xty = x.transpose() * y;
    let kinetic = (xty.transpose() * w.a() * &xty).trace() / (2.0 * n);
    let potential = 0.5 * (x.transpose() * x * w.v()).trace();
    kinetic - potential
}

fn linear_energy_unchecked(x: &Matrix, w: &AttentionWeights) -> f64 {
    let n = x.nrows() as f64;
    -(x.transpose() * x * w.v()).trace() / (2.0 * n)
}

/// Conservative fields of the accelerated linear attention system.
pub fn linear_fields(e: &Ensemble, w: &AttentionWeights) -> Result<FieldPair> {
    LinearAttention::new(w.clone()).fields(&e.x, &e.y)
}

/// Linear attention fields from explicit score logits `S = X A X^T`.
///
/// With `causal`, pairs `j > i` are dropped from both the drift and the
/// momentum interaction term.
pub fn linear_fields_from_scores(
    scores: &Matrix,
    x: &Matrix,
    y: &Matrix,
    a: &Matrix,
    v: &Matrix,
    causal: bool,
) -> FieldPair {
    let n = x.nrows();
    let inv_n = 1.0 / n as f64;
    let mut s = scores.clone();
    let mut gram = y * y.transpose();
    if causal {
        for i in 0..n {
            for j in (i + 1)..n {
                s[(i, j)] = 0.0;
                gram[(i, j)] = 0.0;
            }
        }
    }
    let f = &s * y * inv_n;
    let g = x * v - gram * x * a * inv_n;
    FieldPair { f, g }
}

/// Generator of the linear system:
/// `H = tr(Y^T X A X^T Y) / (2N) - tr(X V X^T) / 2`.
pub fn hamiltonian_linear(e: &Ensemble, w: &AttentionWeights) -> Result<f64> {
    check_dims(&e.x, Some(&e.y), w)?;
    Ok(linear_hamiltonian_unchecked(&e.x, &e.y, w))
}

/// Particle energy `-(1/2N) sum_i X_i^T V X_i`.
pub fn energy_linear(e: &Ensemble, w: &AttentionWeights) -> Result<f64> {
    check_dims(&e.x, None, w)?;
    Ok(linear_energy_unchecked(&e.x, w))
}

// ---------------------------------------------------------------------------
// Softmax attention

/// Accelerated softmax attention with mobility `B = V A^{-1}`.
#[derive(Debug, Clone)]
pub struct SoftmaxAttention {
    pub weights: AttentionWeights,
    pub guard: f64,
}

impl SoftmaxAttention {
    pub fn new(weights: AttentionWeights) -> Self {
        Self {
            weights,
            guard: DEFAULT_OVERFLOW_GUARD,
        }
    }

    pub fn with_guard(weights: AttentionWeights, guard: f64) -> Self {
        Self { weights, guard }
    }

    pub fn scores(&self, x: &Matrix) -> Result<ScoreMatrix> {
        check_dims(x, None, &self.weights)?;
        let logits = x * self.weights.a() * x.transpose();
        ScoreMatrix::from_logits(&logits, self.guard, false)
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxFrozen {
    scores: ScoreMatrix,
    xa: Matrix,
    a: Matrix,
    b: Matrix,
    n: f64,
}

impl SoftmaxFrozen {
    pub fn new(scores: ScoreMatrix, x: &Matrix, a: &Matrix, b: &Matrix) -> Self {
        let n = scores.m.nrows() as f64;
        Self {
            scores,
            xa: x * a,
            a: a.clone(),
            b: b.clone(),
            n,
        }
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    /// `R_i = ||Y_i||_B^2 / (M 1)_i^2`.
    fn r_diag(&self, y: &Matrix) -> Vector {
        let yb = y * self.b.transpose();
        Vector::from_iterator(
            y.nrows(),
            (0..y.nrows()).map(|i| {
                let s = self.scores.rowsum[i];
                y.row(i).dot(&yb.row(i)) / (s * s)
            }),
        )
    }

    fn force_from(&self, y: &Matrix, xa: &Matrix) -> Matrix {
        let r = self.r_diag(y);
        let m = &self.scores.m;
        let mut rxa = xa.clone();
        for (i, mut row) in rxa.row_iter_mut().enumerate() {
            row *= r[i];
        }
        let m_xa = m * xa;
        // ({R, M} + 2M) X A = R (M XA) + M (R XA) + 2 M XA
        let mut g = m * rxa + 2.0 * &m_xa;
        for i in 0..g.nrows() {
            let scaled = m_xa.row(i) * r[i];
            let mut row = g.row_mut(i);
            row += scaled;
        }
        g * (0.5 * self.n)
    }
}

impl FrozenField for SoftmaxFrozen {
    fn drift(&self, y: &Matrix) -> Matrix {
        let mut f = y * self.b.transpose();
        for (i, mut row) in f.row_iter_mut().enumerate() {
            row *= self.n / self.scores.rowsum[i];
        }
        f
    }

    fn force(&self, y: &Matrix) -> Matrix {
        self.force_from(y, &self.xa)
    }

    fn force_with_positions(&self, y: &Matrix, x_new: &Matrix) -> Matrix {
        self.force_from(y, &(x_new * &self.a))
    }
}

impl ConservativeField for SoftmaxAttention {
    type Frozen = SoftmaxFrozen;

    fn freeze(&self, x: &Matrix) -> Result<SoftmaxFrozen> {
        let scores = self.scores(x)?;
        Ok(SoftmaxFrozen::new(scores, x, self.weights.a(), self.weights.b()))
    }

    fn hamiltonian(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        check_dims(x, Some(y), &self.weights)?;
        let scores = self.scores(x)?;
        Ok(softmax_kinetic(&scores, y, self.weights.b()) - 0.5 * x.nrows() as f64 * scores.total())
    }

    fn energy(&self, x: &Matrix) -> Result<f64> {
        let scores = self.scores(x)?;
        let n = x.nrows() as f64;
        Ok(-scores.total() / (2.0 * n * n))
    }
}

/// `(N/2) tr(diag(M 1)^{-1} Y B^T Y^T)`.
fn softmax_kinetic(scores: &ScoreMatrix, y: &Matrix, b: &Matrix) -> f64 {
    let n = y.nrows() as f64;
    let yb = y * b.transpose();
    let quad: f64 = (0..y.nrows())
        .map(|i| y.row(i).dot(&yb.row(i)) / scores.rowsum[i])
        .sum();
    0.5 * n * quad
}

/// Score matrix `M_ij = exp(X_i^T A X_j)` with the default overflow guard.
pub fn softmax_scores(e: &Ensemble, w: &AttentionWeights) -> Result<ScoreMatrix> {
    SoftmaxAttention::new(w.clone()).scores(&e.x)
}

pub fn softmax_scores_with_guard(e: &Ensemble, w: &AttentionWeights, guard: f64) -> Result<ScoreMatrix> {
    SoftmaxAttention::with_guard(w.clone(), guard).scores(&e.x)
}

/// Conservative fields of the accelerated softmax system:
/// `F = N diag(M1)^{-1} Y B^T`, `G = (N/2)({R, M} + 2M) X A`.
pub fn softmax_fields(e: &Ensemble, w: &AttentionWeights) -> Result<FieldPair> {
    SoftmaxAttention::new(w.clone()).fields(&e.x, &e.y)
}

/// Softmax fields for precomputed (possibly masked) scores.
pub fn softmax_fields_from_scores(scores: ScoreMatrix, x: &Matrix, y: &Matrix, a: &Matrix, b: &Matrix) -> FieldPair {
    let frozen = SoftmaxFrozen::new(scores, x, a, b);
    FieldPair {
        f: frozen.drift(y),
        g: frozen.force(y),
    }
}

/// Normalized softmax self-attention velocity (no momentum):
/// row `i` is `sum_j M_ij V X_j / sum_l M_il`.
pub fn baseline_field(e: &Ensemble, w: &AttentionWeights) -> Result<Matrix> {
    baseline_field_x(&e.x, w, DEFAULT_OVERFLOW_GUARD)
}

pub(crate) fn baseline_field_x(x: &Matrix, w: &AttentionWeights, guard: f64) -> Result<Matrix> {
    let scores = SoftmaxAttention::with_guard(w.clone(), guard).scores(x)?;
    let mut out = &scores.m * x * w.v().transpose();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row /= scores.rowsum[i];
    }
    Ok(out)
}

/// `H = (N/2) tr(diag(M1)^{-1} Y B^T Y^T) - (N/2) 1^T M 1`.
pub fn hamiltonian_softmax(e: &Ensemble, w: &AttentionWeights) -> Result<f64> {
    SoftmaxAttention::new(w.clone()).hamiltonian(&e.x, &e.y)
}

/// Time-dependent Hamiltonian of the undamped reformulation in the
/// variables `(Q, P)` with `P = e^{eta(t)} Y`.
pub fn time_dep_hamiltonian_softmax(
    t: f64,
    q: &Matrix,
    p: &Matrix,
    w: &AttentionWeights,
    sched: &DampingSchedule,
) -> Result<f64> {
    check_dims(q, Some(p), w)?;
    let eta = checked_eta(sched, t)?;
    let scores = SoftmaxAttention::new(w.clone()).scores(q)?;
    let n = q.nrows() as f64;
    Ok((-eta).exp() * softmax_kinetic(&scores, p, w.b()) - 0.5 * n * eta.exp() * scores.total())
}

/// `eta(t)`, failing when `e^{eta}` would overflow.
pub fn checked_eta(sched: &DampingSchedule, t: f64) -> Result<f64> {
    let eta = sched.eta(t)?;
    if eta > 700.0 {
        return Err(Error::ExponentOverflow(eta));
    }
    Ok(eta)
}

/// Particle interaction energy `-(1/2N^2) 1^T M 1`.
pub fn energy_softmax(e: &Ensemble, w: &AttentionWeights) -> Result<f64> {
    SoftmaxAttention::new(w.clone()).energy(&e.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn w1(a: f64, v: f64) -> AttentionWeights {
        AttentionWeights::new(scalar(a), scalar(v)).unwrap()
    }

    #[test]
    fn linear_scalar_example() {
        let e = Ensemble::new(scalar(1.0), scalar(1.0), 0.0).unwrap();
        let fp = linear_fields(&e, &w1(2.0, 3.0)).unwrap();
        assert_eq!(fp.f[(0, 0)], 2.0);
        assert_eq!(fp.g[(0, 0)], 1.0);
        assert_eq!(hamiltonian_linear(&e, &w1(2.0, 3.0)).unwrap(), -0.5);
    }

    #[test]
    fn linear_zero_momentum() {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 0.0, 1.1]);
        let w = AttentionWeights::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]),
            Matrix::from_row_slice(2, 2, &[0.5, -0.1, -0.1, 0.7]),
        )
        .unwrap();
        let e = Ensemble::at_rest(x.clone(), 0.0).unwrap();
        let fp = linear_fields(&e, &w).unwrap();
        assert_eq!(fp.f, Matrix::zeros(3, 2));
        assert_eq!(fp.g, &x * w.v());
    }

    #[test]
    fn linear_zero_hamiltonian_and_energy() {
        let w = w1(2.0, 3.0);
        let e = Ensemble::at_rest(Matrix::zeros(4, 1), 0.0).unwrap();
        assert_eq!(hamiltonian_linear(&e, &w).unwrap(), 0.0);
        assert_eq!(energy_linear(&e, &w).unwrap(), 0.0);
        let e = Ensemble::at_rest(scalar(2.0), 0.0).unwrap();
        assert_eq!(energy_linear(&e, &w).unwrap(), -6.0);
    }

    #[test]
    fn scores_of_zero_positions_are_ones() {
        let w = AttentionWeights::new(Matrix::identity(2, 2), Matrix::identity(2, 2)).unwrap();
        let e = Ensemble::at_rest(Matrix::zeros(3, 2), 0.0).unwrap();
        let s = softmax_scores(&e, &w).unwrap();
        assert_eq!(s.m, Matrix::from_element(3, 3, 1.0));
        assert_eq!(s.rowsum, Vector::from_element(3, 3.0));
    }

    #[test]
    fn scalar_score() {
        let e = Ensemble::at_rest(scalar(2.0), 0.0).unwrap();
        let s = softmax_scores(&e, &w1(1.0, 1.0)).unwrap();
        assert!((s.m[(0, 0)] - 4.0_f64.exp()).abs() < 1e-12);
        assert!((s.m[(0, 0)] - 54.598_150_033_144_24).abs() < 1e-10);
    }

    #[test]
    fn orthonormal_scores() {
        let w = AttentionWeights::new(Matrix::identity(2, 2), Matrix::identity(2, 2)).unwrap();
        let e = Ensemble::at_rest(Matrix::identity(2, 2), 0.0).unwrap();
        let s = softmax_scores(&e, &w).unwrap();
        assert_eq!(s.m[(0, 1)], 1.0);
        assert_eq!(s.m[(1, 0)], 1.0);
        assert_eq!(s.m[(0, 0)], std::f64::consts::E);
    }

    #[test]
    fn overflow_guard_names_pair() {
        let w = w1(1.0, 1.0);
        let x = Matrix::from_column_slice(2, 1, &[1.0, 30.0]);
        let e = Ensemble::at_rest(x, 0.0).unwrap();
        match softmax_scores(&e, &w) {
            Err(Error::ScoreOverflow { i, j, .. }) => assert_eq!((i, j), (1, 1)),
            other => panic!("expected overflow, got {other:?}"),
        }
        assert!(softmax_scores_with_guard(&e, &w, 1000.0).is_ok());
        assert!(matches!(softmax_fields(&e, &w), Err(Error::ScoreOverflow { .. })));
    }

    #[test]
    fn softmax_zero_state() {
        let w = AttentionWeights::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]),
            Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let e = Ensemble::at_rest(Matrix::zeros(3, 2), 0.0).unwrap();
        let fp = softmax_fields(&e, &w).unwrap();
        assert_eq!(fp.f, Matrix::zeros(3, 2));
        assert_eq!(fp.g, Matrix::zeros(3, 2));
        // M is all-ones, so the potential term is -(N/2) N^2
        assert_eq!(hamiltonian_softmax(&e, &w).unwrap(), -13.5);
        assert_eq!(energy_softmax(&e, &w).unwrap(), -0.5);
    }

    #[test]
    fn softmax_scalar_reduction() {
        let w = w1(1.0, 1.0);
        for &(x, y) in &[(0.3, -0.7), (1.1, 0.4), (-0.5, 2.0)] {
            let e = Ensemble::new(scalar(x), scalar(y), 0.0).unwrap();
            let fp = softmax_fields(&e, &w).unwrap();
            let f_expected = (-x * x).exp() * y;
            let g_expected = (y * y * (-x * x).exp() + (x * x).exp()) * x;
            assert!((fp.f[(0, 0)] - f_expected).abs() < 1e-14);
            assert!((fp.g[(0, 0)] - g_expected).abs() < 1e-13);
        }
    }

    #[test]
    fn softmax_hamiltonian_scalar() {
        let e = Ensemble::new(scalar(0.0), scalar(1.0), 0.0).unwrap();
        assert_eq!(hamiltonian_softmax(&e, &w1(1.0, 1.0)).unwrap(), 0.0);
        let e = Ensemble::at_rest(scalar(1.0), 0.0).unwrap();
        assert!((energy_softmax(&e, &w1(1.0, 1.0)).unwrap() + 1.359_140_914_229_522_6).abs() < 1e-12);
    }

    #[test]
    fn baseline_single_token_and_zero_value() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let v = Matrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, -0.2]);
        let w = AttentionWeights::new(a.clone(), v.clone()).unwrap();
        let x = Matrix::from_row_slice(1, 2, &[0.7, -1.2]);
        let e = Ensemble::at_rest(x.clone(), 0.0).unwrap();
        let out = baseline_field(&e, &w).unwrap();
        let expected = (&v * x.transpose()).transpose();
        assert!((out - expected).abs().max() < 1e-15);

        let w0 = AttentionWeights::new(a, Matrix::zeros(2, 2)).unwrap();
        let e = Ensemble::at_rest(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]), 0.0).unwrap();
        assert_eq!(baseline_field(&e, &w0).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn baseline_two_token_hand_evaluation() {
        let w = w1(0.8, -0.6);
        let (x1, x2) = (0.9, -0.4);
        let e = Ensemble::at_rest(Matrix::from_column_slice(2, 1, &[x1, x2]), 0.0).unwrap();
        let out = baseline_field(&e, &w).unwrap();
        for (i, xi) in [x1, x2].into_iter().enumerate() {
            let k1 = (0.8 * xi * x1).exp();
            let k2 = (0.8 * xi * x2).exp();
            let expected = (k1 * -0.6 * x1 + k2 * -0.6 * x2) / (k1 + k2);
            assert!((out[(i, 0)] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn time_dependent_reductions() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
        let v = &a * 2.0;
        let w = AttentionWeights::new(a, v).unwrap();
        let q = Matrix::from_row_slice(3, 2, &[0.2, -0.1, 0.5, 0.3, -0.4, 0.6]);
        let y = Matrix::from_row_slice(3, 2, &[0.1, 0.2, -0.3, 0.05, 0.0, -0.2]);
        let e = Ensemble::new(q.clone(), y.clone(), 0.0).unwrap();
        let h = hamiltonian_softmax(&e, &w).unwrap();
        let ht = time_dep_hamiltonian_softmax(0.0, &q, &y, &w, &DampingSchedule::Zero).unwrap();
        assert!((h - ht).abs() < 1e-14);

        // kinetic part scales with e^{eta} when P = e^{eta} Y
        let sched = DampingSchedule::constant(1.0).unwrap();
        let t = 0.7;
        let eta: f64 = 0.7;
        let p = &y * eta.exp();
        let potential_only = time_dep_hamiltonian_softmax(t, &q, &(&y * 0.0), &w, &sched).unwrap();
        let kinetic_t = time_dep_hamiltonian_softmax(t, &q, &p, &w, &sched).unwrap() - potential_only;
        let e0 = Ensemble::at_rest(q.clone(), 0.0).unwrap();
        let kinetic = h - hamiltonian_softmax(&e0, &w).unwrap();
        assert!((kinetic_t - eta.exp() * kinetic).abs() < 1e-13);
    }

    #[test]
    fn time_dependent_exponent_guard() {
        let w = w1(1.0, 1.0);
        let sched = DampingSchedule::constant(1.0).unwrap();
        let r = time_dep_hamiltonian_softmax(701.0, &scalar(0.1), &scalar(0.1), &w, &sched);
        assert!(matches!(r, Err(Error::ExponentOverflow(_))));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let w = w1(1.0, 1.0);
        let e = Ensemble::at_rest(Matrix::zeros(2, 2), 0.0).unwrap();
        assert!(matches!(linear_fields(&e, &w), Err(Error::Dimension(_))));
        assert!(matches!(softmax_fields(&e, &w), Err(Error::Dimension(_))));
    }
}
