//! Moment dynamics of the linear system for elliptically contoured data.
//!
//! Under linear attention with a quadratic potential `Phi_t(x) = x^T P_t x / 2`
//! every particle moves by a common linear map, so elliptical laws stay
//! elliptical and their moments obey a closed ODE. The finite-N variant
//! replaces the population second moment by the empirical one and reproduces
//! the particle system exactly; it is the ground truth for the linear flow.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::damping::DampingSchedule;
use crate::dynamics::LinearAttention;
use crate::ensemble::{asymmetry, AttentionWeights, Ensemble};
use crate::integrators::{self, OdeState, Phase};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EllipticFamily {
    Gaussian,
    /// Multivariate Student-t with `v > 2` degrees of freedom.
    StudentT(f64),
}

impl EllipticFamily {
    pub fn student_t(v: f64) -> Result<Self> {
        let fam = Self::StudentT(v);
        fam.validate()?;
        Ok(fam)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian => Ok(()),
            Self::StudentT(v) if v.is_finite() && v > 2.0 => Ok(()),
            Self::StudentT(v) => Err(Error::InvalidParameter(format!(
                "Student-t needs more than 2 degrees of freedom, got {v}"
            ))),
        }
    }

    /// Variance factor: `Cov[X] = kappa * Sigma`.
    pub fn kappa(&self) -> f64 {
        match *self {
            Self::Gaussian => 1.0,
            Self::StudentT(v) => v / (v - 2.0),
        }
    }
}

/// Population moments `(m, Sigma, P)` plus the family's variance factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Vector,
    pub sigma: Matrix,
    pub p: Matrix,
    pub kappa: f64,
}

impl MomentState {
    pub fn new(m: Vector, sigma: Matrix, p: Matrix, kappa: f64) -> Result<Self> {
        let d = m.len();
        if sigma.shape() != (d, d) || p.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "mean of length {d} with Sigma {:?} and P {:?}",
                sigma.shape(),
                p.shape()
            )));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!("kappa must be > 0, got {kappa}")));
        }
        let tol = 1e-12 * sigma.abs().max().max(1.0);
        if asymmetry(&sigma) > tol {
            return Err(Error::NotSymmetric("Sigma", asymmetry(&sigma)));
        }
        if asymmetry(&p) > 1e-12 * p.abs().max().max(1.0) {
            return Err(Error::NotSymmetric("P", asymmetry(&p)));
        }
        let min_eig = sigma.clone().symmetric_eigenvalues().min();
        if min_eig < -tol {
            return Err(Error::NotPositiveDefinite("Sigma"));
        }
        Ok(Self { m, sigma, p, kappa })
    }

    /// Initial state with `P = 0`, i.e. particles at rest.
    pub fn at_rest(fam: EllipticFamily, m: Vector, sigma: Matrix) -> Result<Self> {
        fam.validate()?;
        let d = m.len();
        Self::new(m, sigma, Matrix::zeros(d, d), fam.kappa())
    }

    /// Second moment `kappa Sigma + m m^T`.
    pub fn second_moment(&self) -> Matrix {
        &self.sigma * self.kappa + &self.m * self.m.transpose()
    }

    pub fn covariance(&self) -> Matrix {
        &self.sigma * self.kappa
    }
}

impl OdeState for MomentState {
    fn add_scaled(&self, s: f64, other: &Self) -> Self {
        Self {
            m: &self.m + &other.m * s,
            sigma: &self.sigma + &other.sigma * s,
            p: &self.p + &other.p * s,
            kappa: self.kappa,
        }
    }

    fn is_finite(&self) -> bool {
        self.m.is_finite() && self.sigma.is_finite() && self.p.is_finite()
    }
}

fn check_dim(d: usize, w: &AttentionWeights) -> Result<()> {
    if w.dim() != d {
        return Err(Error::Dimension(format!("moments of dimension {d} with weights of dimension {}", w.dim())));
    }
    Ok(())
}

/// Time derivative of the population moments. The returned state holds
/// `(m', Sigma', P')` and carries `kappa` through unchanged.
pub fn moment_rhs(s: &MomentState, t: f64, w: &AttentionWeights, sched: &DampingSchedule) -> Result<MomentState> {
    check_dim(s.m.len(), w)?;
    let alpha = sched.alpha(t)?;
    let c = &s.p * s.second_moment() * w.a();
    let cp = c.transpose() * &s.p;
    Ok(MomentState {
        m: &c * &s.m,
        sigma: &s.sigma * c.transpose() + &c * &s.sigma,
        p: -&s.p * alpha - (&cp + cp.transpose()) + w.v(),
        kappa: s.kappa,
    })
}

/// Centered specialization of [`moment_rhs`]; returns `(Sigma', P')`.
pub fn zero_mean_rhs(
    sigma: &Matrix,
    p: &Matrix,
    t: f64,
    w: &AttentionWeights,
    kappa: f64,
    sched: &DampingSchedule,
) -> Result<(Matrix, Matrix)> {
    check_dim(sigma.nrows(), w)?;
    let alpha = sched.alpha(t)?;
    let a = w.a();
    let sas = sigma * a * sigma;
    let p2 = p * p;
    let sigma_dot = (&sas * p + p * &sas) * kappa;
    let p_dot = -p * alpha - (a * sigma * &p2 + &p2 * sigma * a) * kappa + w.v();
    Ok((sigma_dot, p_dot))
}

/// Empirical second moment `S`, potential coefficient `P` and accumulated
/// flow map `G` with `X_i(t) = G_t X_i(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteNMomentState {
    pub s: Matrix,
    pub p: Matrix,
    pub g: Matrix,
}

impl FiniteNMomentState {
    /// `S = X^T X / N`, `P = 0`, `G = I`: the state of particles at rest.
    pub fn from_positions(x: &Matrix) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Dimension("positions must be non-empty".into()));
        }
        let d = x.ncols();
        Ok(Self {
            s: second_moment(x),
            p: Matrix::zeros(d, d),
            g: Matrix::identity(d, d),
        })
    }

    /// Positions `X_i(0) -> G X_i(0)` written as rows.
    pub fn positions(&self, x0: &Matrix) -> Matrix {
        x0 * self.g.transpose()
    }

    /// Momenta `Y_i = P X_i` written as rows.
    pub fn momenta(&self, x: &Matrix) -> Matrix {
        x * &self.p
    }
}

impl OdeState for FiniteNMomentState {
    fn add_scaled(&self, s: f64, other: &Self) -> Self {
        Self {
            s: &self.s + &other.s * s,
            p: &self.p + &other.p * s,
            g: &self.g + &other.g * s,
        }
    }

    fn is_finite(&self) -> bool {
        self.s.is_finite() && self.p.is_finite() && self.g.is_finite()
    }
}

/// Time derivative `(S', P', G')` of the finite-N moment system.
pub fn finite_n_rhs(
    f: &FiniteNMomentState,
    t: f64,
    w: &AttentionWeights,
    sched: &DampingSchedule,
) -> Result<FiniteNMomentState> {
    check_dim(f.s.nrows(), w)?;
    let alpha = sched.alpha(t)?;
    let c = &f.p * &f.s * w.a();
    let cs = &c * &f.s;
    let cp = c.transpose() * &f.p;
    Ok(FiniteNMomentState {
        s: &cs + cs.transpose(),
        p: -&f.p * alpha - (&cp + cp.transpose()) + w.v(),
        g: &c * &f.g,
    })
}

/// RK4 path of the population moments, `steps + 1` states starting at `t0`.
pub fn integrate_moments(
    s0: &MomentState,
    t0: f64,
    w: &AttentionWeights,
    sched: &DampingSchedule,
    h: f64,
    steps: usize,
) -> Result<Vec<MomentState>> {
    rk4_path(|t, s: &MomentState| moment_rhs(s, t, w, sched), t0, s0, h, steps)
}

/// RK4 path of the finite-N moment system.
pub fn integrate_finite_n(
    f0: &FiniteNMomentState,
    t0: f64,
    w: &AttentionWeights,
    sched: &DampingSchedule,
    h: f64,
    steps: usize,
) -> Result<Vec<FiniteNMomentState>> {
    rk4_path(|t, f: &FiniteNMomentState| finite_n_rhs(f, t, w, sched), t0, f0, h, steps)
}

fn rk4_path<S, F>(mut f: F, t0: f64, y0: &S, h: f64, steps: usize) -> Result<Vec<S>>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be > 0, got {h}")));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0.clone());
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let next = integrators::rk4_step(&mut f, t, &out[k], h)?;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("moment state after t = {}", t + h)));
        }
        out.push(next);
    }
    Ok(out)
}

/// Largest deviations between the linear particle system and its finite-N
/// moment description under matched RK4 integration.
#[derive(Debug, Clone, PartialEq)]
pub struct DualReport {
    /// `max |X_i(t) - G_t X_i(0)|` over particles, coordinates and steps.
    pub max_dev_x: f64,
    /// `max |Y_i(t) - P_t X_i(t)|`.
    pub max_dev_y: f64,
    /// `max |S_t - X(t)^T X(t) / N|`.
    pub max_dev_s: f64,
    /// Smallest eigenvalue of `S_t` seen along the path.
    pub min_eig_s: f64,
}

/// Integrates the linear particle system from rest together with the finite-N
/// moment ODE and compares them at every step.
pub fn dual_integration(
    x0: &Matrix,
    w: &AttentionWeights,
    sched: &DampingSchedule,
    h: f64,
    steps: usize,
) -> Result<DualReport> {
    let t0 = sched.t0();
    let sys = LinearAttention::new(w.clone());
    let mut phase = Phase {
        x: x0.clone(),
        y: Matrix::zeros(x0.nrows(), x0.ncols()),
    };
    let path = integrate_finite_n(&FiniteNMomentState::from_positions(x0)?, t0, w, sched, h, steps)?;
    let mut report = DualReport {
        max_dev_x: 0.0,
        max_dev_y: 0.0,
        max_dev_s: 0.0,
        min_eig_s: f64::INFINITY,
    };
    for (k, f) in path.iter().enumerate() {
        if k > 0 {
            let t = t0 + (k - 1) as f64 * h;
            phase = integrators::rk4_step(|s, z: &Phase| integrators::damped_rhs(&sys, sched, s, z), t, &phase, h)?;
        }
        report.max_dev_x = report.max_dev_x.max((f.positions(x0) - &phase.x).abs().max());
        report.max_dev_y = report.max_dev_y.max((f.momenta(&phase.x) - &phase.y).abs().max());
        report.max_dev_s = report.max_dev_s.max((second_moment(&phase.x) - &f.s).abs().max());
        report.min_eig_s = report.min_eig_s.min(f.s.clone().symmetric_eigenvalues().min());
    }
    Ok(report)
}

/// Samples `n` rows from the elliptical law with location `m` and shape `sigma`.
///
/// Gaussian rows are `m + L z` with `sigma = L L^T`; Student-t rows scale `L z`
/// by `sqrt(v / c)` for an independent chi-square draw `c`.
pub fn sample(fam: EllipticFamily, m: &Vector, sigma: &Matrix, n: usize, seed: u64) -> Result<Matrix> {
    fam.validate()?;
    let d = m.len();
    if sigma.shape() != (d, d) {
        return Err(Error::Dimension(format!("mean of length {d} with Sigma {:?}", sigma.shape())));
    }
    if asymmetry(sigma) > 1e-12 * sigma.abs().max().max(1.0) {
        return Err(Error::NotSymmetric("Sigma", asymmetry(sigma)));
    }
    let l = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("Sigma"))?
        .unpack();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chi = match fam {
        EllipticFamily::StudentT(v) => {
            Some((v, ChiSquared::new(v).map_err(|e| Error::InvalidParameter(e.to_string()))?))
        }
        EllipticFamily::Gaussian => None,
    };
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let z = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let mut row = &l * z;
        if let Some((v, dist)) = &chi {
            let c: f64 = dist.sample(&mut rng);
            row *= (v / c).sqrt();
        }
        row += m;
        out.set_row(i, &row.transpose());
    }
    Ok(out)
}

pub fn mean(x: &Matrix) -> Vector {
    x.row_mean().transpose()
}

/// `X^T X / N`.
pub fn second_moment(x: &Matrix) -> Matrix {
    x.transpose() * x / x.nrows() as f64
}

/// Sample mean, unbiased covariance (divisor `N - 1`) and second moment
/// (divisor `N`).
pub fn empirical_moments(x: &Matrix) -> Result<(Vector, Matrix, Matrix)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Dimension(format!("covariance needs at least 2 samples, got {n}")));
    }
    let mu = mean(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mu, cov, second_moment(x)))
}

/// Ensemble at rest drawn from an elliptical law; start time `t`.
pub fn sample_ensemble(fam: EllipticFamily, m: &Vector, sigma: &Matrix, n: usize, seed: u64, t: f64) -> Result<Ensemble> {
    Ensemble::at_rest(sample(fam, m, sigma, n, seed)?, t)
}
