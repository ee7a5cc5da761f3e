//! Damping schedules `alpha(t)`, their antiderivative `eta`, and the discrete
//! coefficients used by the damped integrators.

use crate::quadrature;
use crate::{Error, Result};

/// Absolute tolerance of the log-linear exponential-Euler weight.
pub const WEIGHT_QUADRATURE_TOL: f64 = 1e-12;

/// Damping rate family.
///
/// `Polynomial` and `LogLinear` are singular at `t = 0` and therefore carry a
/// start time `t0 > 0`; integration clocks start there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingSchedule {
    /// `alpha(t) = m`.
    Constant { m: f64, t0: f64 },
    /// `alpha(t) = r / t`.
    Polynomial { r: f64, t0: f64 },
    /// `alpha(t) = r / t + m`.
    LogLinear { r: f64, m: f64, t0: f64 },
    /// No damping.
    Zero,
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl DampingSchedule {
    /// Constant damping starting at `t0 = 0`.
    pub fn constant(m: f64) -> Result<Self> {
        Self::constant_from(m, 0.0)
    }

    pub fn constant_from(m: f64, t0: f64) -> Result<Self> {
        check_nonneg("m", m)?;
        check_nonneg("t0", t0)?;
        Ok(Self::Constant { m, t0 })
    }

    pub fn polynomial(r: f64, t0: f64) -> Result<Self> {
        check_nonneg("r", r)?;
        check_positive("t0", t0)?;
        Ok(Self::Polynomial { r, t0 })
    }

    pub fn log_linear(r: f64, m: f64, t0: f64) -> Result<Self> {
        check_nonneg("r", r)?;
        check_nonneg("m", m)?;
        check_positive("t0", t0)?;
        Ok(Self::LogLinear { r, m, t0 })
    }

    /// Re-checks parameter ranges; useful for values built literally.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant { m, t0 } => Self::constant_from(m, t0).map(|_| ()),
            Self::Polynomial { r, t0 } => Self::polynomial(r, t0).map(|_| ()),
            Self::LogLinear { r, m, t0 } => Self::log_linear(r, m, t0).map(|_| ()),
            Self::Zero => Ok(()),
        }
    }

    /// Simulation origin: `eta` vanishes here.
    pub fn t0(&self) -> f64 {
        match *self {
            Self::Constant { t0, .. } | Self::Polynomial { t0, .. } | Self::LogLinear { t0, .. } => t0,
            Self::Zero => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Zero => true,
            Self::Constant { m, .. } => m == 0.0,
            Self::Polynomial { r, .. } => r == 0.0,
            Self::LogLinear { r, m, .. } => r == 0.0 && m == 0.0,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("time {t} is not finite")));
        }
        match *self {
            Self::Zero => Ok(()),
            _ if t < self.t0() => Err(Error::Domain(format!(
                "time {t} precedes schedule origin t0 = {}",
                self.t0()
            ))),
            _ => Ok(()),
        }
    }

    /// Damping rate `alpha(t)`.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match *self {
            Self::Constant { m, .. } => m,
            Self::Polynomial { r, .. } => r / t,
            Self::LogLinear { r, m, .. } => r / t + m,
            Self::Zero => 0.0,
        })
    }

    /// `int_a^b alpha(s) ds` for `t0 <= a <= b`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        self.check_time(a)?;
        self.check_time(b)?;
        if b < a {
            return Err(Error::Domain(format!("interval [{a}, {b}] is reversed")));
        }
        Ok(match *self {
            Self::Constant { m, .. } => m * (b - a),
            Self::Polynomial { r, .. } => r * (b / a).ln(),
            Self::LogLinear { r, m, .. } => r * (b / a).ln() + m * (b - a),
            Self::Zero => 0.0,
        })
    }

    /// Antiderivative `eta(t) = int_{t0}^t alpha(s) ds`.
    pub fn eta(&self, t: f64) -> Result<f64> {
        match self {
            Self::Zero => {
                self.check_time(t)?;
                Ok(0.0)
            }
            _ => self.integral(self.t0(), t),
        }
    }

    /// Discrete damping coefficient `exp(-int_{t_k}^{t_next} alpha)` in `(0, 1]`.
    pub fn sigma(&self, t_k: f64, t_next: f64) -> Result<f64> {
        Ok((-self.integral(t_k, t_next)?).exp())
    }

    /// Weight `int_0^h exp(-int_s^h alpha(z) dz) ds` multiplying the force in
    /// the exponential Euler update, evaluated on the window `[0, h]`.
    pub fn exp_euler_weight(&self, h: f64) -> Result<f64> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Domain(format!("step size must be > 0, got {h}")));
        }
        Ok(match *self {
            Self::Zero => h,
            Self::Constant { m, .. } => constant_weight(m, h),
            Self::Polynomial { r, .. } => h / (r + 1.0),
            Self::LogLinear { r, m, .. } if r == 0.0 => constant_weight(m, h),
            Self::LogLinear { r, m, .. } if m == 0.0 => h / (r + 1.0),
            Self::LogLinear { r, m, .. } => {
                // exp(-int_s^h (r/z + m) dz) = (s/h)^r exp(-m (h - s))
                quadrature::integrate(
                    |s| (s / h).powf(r) * (-m * (h - s)).exp(),
                    0.0,
                    h,
                    WEIGHT_QUADRATURE_TOL,
                )?
            }
        })
    }
}

fn constant_weight(m: f64, h: f64) -> f64 {
    if m == 0.0 {
        h
    } else {
        -(-m * h).exp_m1() / m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(DampingSchedule::constant(3.0).unwrap().alpha(7.0).unwrap(), 3.0);
        assert_eq!(DampingSchedule::polynomial(3.0, 1.0).unwrap().alpha(2.0).unwrap(), 1.5);
        assert_eq!(
            DampingSchedule::log_linear(3.0, 0.5, 1.0).unwrap().alpha(3.0).unwrap(),
            1.5
        );
        assert_eq!(DampingSchedule::Zero.alpha(123.0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_domain_errors() {
        let p = DampingSchedule::polynomial(3.0, 1.0).unwrap();
        assert!(matches!(p.alpha(0.5), Err(Error::Domain(_))));
        assert!(matches!(p.alpha(0.0), Err(Error::Domain(_))));
        assert!(DampingSchedule::polynomial(3.0, 0.0).is_err());
        assert!(DampingSchedule::log_linear(1.0, 1.0, -1.0).is_err());
        assert!(DampingSchedule::constant(-1.0).is_err());
    }

    #[test]
    fn eta_examples() {
        assert_eq!(DampingSchedule::constant(1.0).unwrap().eta(2.0).unwrap(), 2.0);
        let p = DampingSchedule::polynomial(3.0, 1.0).unwrap();
        assert!(close(p.eta(std::f64::consts::E).unwrap(), 3.0, 1e-15));
        assert_eq!(p.eta(1.0).unwrap(), 0.0);
        assert_eq!(DampingSchedule::Zero.eta(42.0).unwrap(), 0.0);
        assert!(p.eta(0.9).is_err());
    }

    #[test]
    fn sigma_examples() {
        let p = DampingSchedule::polynomial(3.0, 1.0).unwrap();
        assert!(close(p.sigma(1.0, 2.0).unwrap(), 0.125, 1e-15));
        let c = DampingSchedule::constant(1.0).unwrap();
        assert!(close(c.sigma(0.0, 1.0).unwrap(), 0.367_879_441_171_442_3, 1e-15));
        assert_eq!(DampingSchedule::Zero.sigma(3.0, 11.0).unwrap(), 1.0);
        assert!(matches!(c.sigma(2.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn weight_examples() {
        let p = DampingSchedule::polynomial(3.0, 1.0).unwrap();
        assert!(close(p.exp_euler_weight(0.1).unwrap(), 0.025, 1e-15));
        let c = DampingSchedule::constant(2.0).unwrap();
        assert!(close(c.exp_euler_weight(0.5).unwrap(), 0.316_060_279_414_278_8, 1e-15));
        assert_eq!(DampingSchedule::Zero.exp_euler_weight(0.3).unwrap(), 0.3);
        assert!(c.exp_euler_weight(0.0).is_err());
        assert!(c.exp_euler_weight(-1.0).is_err());
    }

    #[test]
    fn log_linear_weight_frozen_value() {
        // Fine-grid trapezoid (step 1e-6) of the double integral gives
        // 0.11520313228251884; the r = 1 closed form is
        // (1 - e^{-h}) - (1 - e^{-h} - h e^{-h}) / h = 0.11520313228561951.
        let s = DampingSchedule::log_linear(1.0, 1.0, 1.0).unwrap();
        let w = s.exp_euler_weight(0.25).unwrap();
        assert!(close(w, 0.115_203_132_285_619_51, 1e-12));
        assert!(close(w, 0.115_203_132_282_518_84, 1e-10));
    }

    proptest! {
        #[test]
        fn sigma_matches_eta_difference(
            kind in 0usize..4, r in 0.0f64..4.0, m in 0.0f64..3.0, t0 in 0.1f64..2.0,
            da in 0.0f64..5.0, len in 0.0f64..5.0,
        ) {
            let s = match kind {
                0 => DampingSchedule::constant_from(m, t0).unwrap(),
                1 => DampingSchedule::polynomial(r, t0).unwrap(),
                2 => DampingSchedule::log_linear(r, m, t0).unwrap(),
                _ => DampingSchedule::Zero,
            };
            let a = s.t0() + da;
            let b = a + len;
            let sig = s.sigma(a, b).unwrap();
            let via_eta = (s.eta(a).unwrap() - s.eta(b).unwrap()).exp();
            prop_assert!((sig - via_eta).abs() <= 1e-12);
            prop_assert!(sig > 0.0 && sig <= 1.0);
            let longer = s.sigma(a, b + 0.5).unwrap();
            prop_assert!(longer <= sig);
        }
    }
}
