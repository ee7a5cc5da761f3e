//! Time discretizations of the damped Hamiltonian particle systems.
//!
//! The conservative field comes from a [`ConservativeField`]; the damping
//! term `-alpha(t) Y` is handled here. Every stepper except the RK4
//! reference performs one positional field build (one oracle call) per step.

use std::cell::Cell;

use crate::damping::DampingSchedule;
use crate::dynamics::{self, checked_eta, ConservativeField, FrozenField, LinearAttention, SoftmaxAttention};
use crate::ensemble::{AttentionWeights, Ensemble};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    PlainEuler,
    ConformalEuler,
    ExpEuler,
    Ab2,
    EtdAb2,
    Rk4Reference,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::PlainEuler,
        Method::ConformalEuler,
        Method::ExpEuler,
        Method::Ab2,
        Method::EtdAb2,
        Method::Rk4Reference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::PlainEuler => "plain_euler",
            Method::ConformalEuler => "conformal_euler",
            Method::ExpEuler => "exp_euler",
            Method::Ab2 => "ab2",
            Method::EtdAb2 => "etd_ab2",
            Method::Rk4Reference => "rk4",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Positional field builds per step.
    pub fn oracle_calls_per_step(self) -> u64 {
        match self {
            Method::Rk4Reference => 4,
            _ => 1,
        }
    }
}

/// Momentum retention factor `alpha_k` of the plain Euler scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NesterovAlpha {
    /// `alpha_k = (k - 1) / (k + 2)` for the 1-based step index `k`.
    Ratio,
    Constant(f64),
}

impl NesterovAlpha {
    pub fn value(self, k: usize) -> f64 {
        match self {
            NesterovAlpha::Ratio => (k as f64 - 1.0) / (k as f64 + 2.0),
            NesterovAlpha::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSizes {
    Fixed(f64),
    /// `h_k` for steps `k = 1, 2, ...`.
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSpec {
    pub method: Method,
    pub steps: StepSizes,
    pub damping: DampingSchedule,
    pub nesterov_alpha: NesterovAlpha,
    /// Plain Euler only: use the softmax worked-example form
    /// `Y+ = -alpha_k Y + h G` with the new positions in the force.
    pub worked_example: bool,
}

impl IntegratorSpec {
    pub fn new(method: Method, h: f64, damping: DampingSchedule) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be > 0, got {h}")));
        }
        damping.validate()?;
        Ok(Self {
            method,
            steps: StepSizes::Fixed(h),
            damping,
            nesterov_alpha: NesterovAlpha::Constant(1.0),
            worked_example: false,
        })
    }

    pub fn with_step_schedule(mut self, hs: Vec<f64>) -> Result<Self> {
        if hs.is_empty() || hs.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidParameter("step schedule must be non-empty and positive".into()));
        }
        self.steps = StepSizes::Schedule(hs);
        Ok(self)
    }

    pub fn with_nesterov_alpha(mut self, mode: NesterovAlpha) -> Result<Self> {
        if let NesterovAlpha::Constant(c) = mode {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidParameter(format!("constant alpha must lie in (0, 1], got {c}")));
            }
        }
        self.nesterov_alpha = mode;
        Ok(self)
    }

    pub fn with_worked_example(mut self, on: bool) -> Self {
        self.worked_example = on;
        self
    }

    /// Step size of the 1-based step `k`.
    pub fn step_size(&self, k: usize) -> Result<f64> {
        match &self.steps {
            StepSizes::Fixed(h) => Ok(*h),
            StepSizes::Schedule(hs) => hs
                .get(k.saturating_sub(1))
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("step schedule has no entry for step {k}"))),
        }
    }
}

/// Wraps a field and counts positional builds.
#[derive(Debug)]
pub struct Counted<S> {
    inner: S,
    calls: Cell<u64>,
}

impl<S> Counted<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: ConservativeField> ConservativeField for Counted<S> {
    type Frozen = S::Frozen;

    fn freeze(&self, x: &Matrix) -> Result<Self::Frozen> {
        self.calls.set(self.calls.get() + 1);
        self.inner.freeze(x)
    }

    fn hamiltonian(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        self.inner.hamiltonian(x, y)
    }

    fn energy(&self, x: &Matrix) -> Result<f64> {
        self.inner.energy(x)
    }
}

fn next_state(x: Matrix, y: Matrix, t: f64) -> Result<Ensemble> {
    if !(x.iter().chain(y.iter()).all(|v| v.is_finite())) {
        return Err(Error::NonFinite(format!("state after step to t = {t}")));
    }
    Ok(Ensemble { x, y, t })
}

/// Plain explicit Euler: `X+ = X + h F`, `Y+ = alpha_k Y + h G`, both at the
/// old state. `k` is the 1-based step index.
pub fn step_plain_euler<S: ConservativeField>(sys: &S, e: &Ensemble, spec: &IntegratorSpec, k: usize) -> Result<Ensemble> {
    let h = spec.step_size(k)?;
    let alpha_k = spec.nesterov_alpha.value(k);
    let frozen = sys.freeze(&e.x)?;
    let x = &e.x + frozen.drift(&e.y) * h;
    let y = if spec.worked_example {
        frozen.force_with_positions(&e.y, &x) * h - &e.y * alpha_k
    } else {
        &e.y * alpha_k + frozen.force(&e.y) * h
    };
    next_state(x, y, e.t + h)
}

/// Conformally symplectic ("kick then damp") Euler:
/// `Y+ = sigma_k (Y + h G(X, Y))`, `X+ = X + h F(X, Y+)`.
pub fn step_conformal_euler<S: ConservativeField>(sys: &S, e: &Ensemble, spec: &IntegratorSpec, k: usize) -> Result<Ensemble> {
    let h = spec.step_size(k)?;
    let sigma = spec.damping.sigma(e.t, e.t + h)?;
    // F is linear in Y for fixed X, so the frozen scores serve both halves
    let frozen = sys.freeze(&e.x)?;
    let y = (&e.y + frozen.force(&e.y) * h) * sigma;
    let x = &e.x + frozen.drift(&y) * h;
    next_state(x, y, e.t + h)
}

/// Exponential Euler: `Y+ = sigma_k Y + w G`, `X+ = X + h F`.
pub fn step_exp_euler<S: ConservativeField>(sys: &S, e: &Ensemble, spec: &IntegratorSpec, k: usize) -> Result<Ensemble> {
    let h = spec.step_size(k)?;
    let sigma = spec.damping.sigma(e.t, e.t + h)?;
    let w = spec.damping.exp_euler_weight(h)?;
    let frozen = sys.freeze(&e.x)?;
    let x = &e.x + frozen.drift(&e.y) * h;
    let y = &e.y * sigma + frozen.force(&e.y) * w;
    next_state(x, y, e.t + h)
}

/// Variable-step AB-2 weights `(c_k, c_{k-1})` for the newest and previous slopes.
pub fn ab2_coefficients(h_prev: f64, h: f64) -> (f64, f64) {
    let r = h / (2.0 * h_prev);
    (1.0 + r, -r)
}

/// Slope record of the previous step of a two-step method.
#[derive(Debug, Clone, Default)]
pub struct Ab2History {
    prev: Option<(f64, Matrix, Matrix)>,
}

impl Ab2History {
    pub fn is_bootstrapped(&self) -> bool {
        self.prev.is_some()
    }
}

fn damped_slope<F: FrozenField>(frozen: &F, y: &Matrix, alpha: f64) -> (Matrix, Matrix) {
    (frozen.drift(y), frozen.force(y) - y * alpha)
}

/// Explicit Euler step on the damped system that starts an AB-2 run.
pub fn bootstrap_ab2<S: ConservativeField>(
    sys: &S,
    e: &Ensemble,
    spec: &IntegratorSpec,
    history: &mut Ab2History,
) -> Result<Ensemble> {
    let h = spec.step_size(1)?;
    let alpha = spec.damping.alpha(e.t)?;
    let frozen = sys.freeze(&e.x)?;
    let (fx, fy) = damped_slope(&frozen, &e.y, alpha);
    let x = &e.x + &fx * h;
    let y = &e.y + &fy * h;
    history.prev = Some((e.t, fx, fy));
    next_state(x, y, e.t + h)
}

/// AB-2 on the damped system; `k >= 2` is the 1-based step index.
pub fn step_ab2<S: ConservativeField>(
    sys: &S,
    e: &Ensemble,
    spec: &IntegratorSpec,
    history: &mut Ab2History,
    k: usize,
) -> Result<Ensemble> {
    let (t_prev, fx_prev, fy_prev) = history.prev.take().ok_or(Error::BootstrapRequired)?;
    let h = spec.step_size(k)?;
    let h_prev = e.t - t_prev;
    if !(h_prev > 0.0) {
        history.prev = Some((t_prev, fx_prev, fy_prev));
        return Err(Error::Domain(format!("history time {t_prev} does not precede {}", e.t)));
    }
    let (c_new, c_old) = ab2_coefficients(h_prev, h);
    let alpha = spec.damping.alpha(e.t)?;
    let frozen = sys.freeze(&e.x)?;
    let (fx, fy) = damped_slope(&frozen, &e.y, alpha);
    let x = &e.x + (&fx * c_new + &fx_prev * c_old) * h;
    let y = &e.y + (&fy * c_new + &fy_prev * c_old) * h;
    history.prev = Some((e.t, fx, fy));
    next_state(x, y, e.t + h)
}

/// Slope of the undamped time-dependent system in `(X, P)`, `P = e^eta Y`:
/// `X' = F(X, Y)`, `P' = e^eta G(X, Y)`.
fn transformed_slope<F: FrozenField>(frozen: &F, y: &Matrix, eta: f64) -> (Matrix, Matrix) {
    (frozen.drift(y), frozen.force(y) * eta.exp())
}

/// Explicit Euler start of an ETD-AB2 run, taken in transformed variables.
pub fn bootstrap_etd_ab2<S: ConservativeField>(
    sys: &S,
    e: &Ensemble,
    spec: &IntegratorSpec,
    history: &mut Ab2History,
) -> Result<Ensemble> {
    let h = spec.step_size(1)?;
    let eta = checked_eta(&spec.damping, e.t)?;
    let eta_next = checked_eta(&spec.damping, e.t + h)?;
    let frozen = sys.freeze(&e.x)?;
    let (fx, fp) = transformed_slope(&frozen, &e.y, eta);
    let p = &e.y * eta.exp() + &fp * h;
    let x = &e.x + &fx * h;
    history.prev = Some((e.t, fx, fp));
    next_state(x, p * (-eta_next).exp(), e.t + h)
}

/// AB-2 on the undamped reformulation; returns `Y = e^{-eta} P`.
pub fn step_etd_ab2<S: ConservativeField>(
    sys: &S,
    e: &Ensemble,
    spec: &IntegratorSpec,
    history: &mut Ab2History,
    k: usize,
) -> Result<Ensemble> {
    let (t_prev, fx_prev, fp_prev) = history.prev.take().ok_or(Error::BootstrapRequired)?;
    let h = spec.step_size(k)?;
    let h_prev = e.t - t_prev;
    if !(h_prev > 0.0) {
        history.prev = Some((t_prev, fx_prev, fp_prev));
        return Err(Error::Domain(format!("history time {t_prev} does not precede {}", e.t)));
    }
    let (c_new, c_old) = ab2_coefficients(h_prev, h);
    let eta = checked_eta(&spec.damping, e.t)?;
    let eta_next = checked_eta(&spec.damping, e.t + h)?;
    let frozen = sys.freeze(&e.x)?;
    let (fx, fp) = transformed_slope(&frozen, &e.y, eta);
    let x = &e.x + (&fx * c_new + &fx_prev * c_old) * h;
    let p = &e.y * eta.exp() + (&fp * c_new + &fp_prev * c_old) * h;
    history.prev = Some((e.t, fx, fp));
    next_state(x, p * (-eta_next).exp(), e.t + h)
}

// ---------------------------------------------------------------------------
// Runge–Kutta reference

/// State that an explicit Runge–Kutta method can combine linearly.
pub trait OdeState: Clone {
    /// `self + s * other`.
    fn add_scaled(&self, s: f64, other: &Self) -> Self;

    fn is_finite(&self) -> bool;
}

impl OdeState for f64 {
    fn add_scaled(&self, s: f64, other: &Self) -> Self {
        self + s * other
    }

    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl OdeState for Matrix {
    fn add_scaled(&self, s: f64, other: &Self) -> Self {
        self + other * s
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for Vector {
    fn add_scaled(&self, s: f64, other: &Self) -> Self {
        self + other * s
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Positions and momenta stacked for Runge–Kutta combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub x: Matrix,
    pub y: Matrix,
}

impl OdeState for Phase {
    fn add_scaled(&self, s: f64, other: &Self) -> Self {
        Phase {
            x: &self.x + &other.x * s,
            y: &self.y + &other.y * s,
        }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<S, F>(mut f: F, t: f64, y: &S, h: f64) -> Result<S>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
{
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &y.add_scaled(0.5 * h, &k1))?;
    let k3 = f(t + 0.5 * h, &y.add_scaled(0.5 * h, &k2))?;
    let k4 = f(t + h, &y.add_scaled(h, &k3))?;
    Ok(y
        .add_scaled(h / 6.0, &k1)
        .add_scaled(h / 3.0, &k2)
        .add_scaled(h / 3.0, &k3)
        .add_scaled(h / 6.0, &k4))
}

/// Full damped vector field `(F, G - alpha(t) Y)`.
pub fn damped_rhs<S: ConservativeField>(sys: &S, sched: &DampingSchedule, t: f64, state: &Phase) -> Result<Phase> {
    let alpha = sched.alpha(t)?;
    let frozen = sys.freeze(&state.x)?;
    let (x, y) = damped_slope(&frozen, &state.y, alpha);
    Ok(Phase { x, y })
}

/// Undamped time-dependent field in `(X, P)`.
pub fn transformed_rhs<S: ConservativeField>(sys: &S, sched: &DampingSchedule, t: f64, state: &Phase) -> Result<Phase> {
    let eta = checked_eta(sched, t)?;
    let y = &state.y * (-eta).exp();
    let frozen = sys.freeze(&state.x)?;
    let (x, p) = transformed_slope(&frozen, &y, eta);
    Ok(Phase { x, y: p })
}

/// RK4 on the damped system; used as a ground-truth oracle.
pub fn rk4_reference<S: ConservativeField>(
    sys: &S,
    e0: &Ensemble,
    sched: &DampingSchedule,
    h: f64,
    steps: usize,
) -> Result<Trajectory> {
    let spec = IntegratorSpec::new(Method::Rk4Reference, h, *sched)?;
    let traj = integrate_field(sys, e0, &spec, steps, 1);
    match traj.error {
        Some(err) => Err(err),
        None => Ok(traj),
    }
}

/// RK4 on the undamped reformulation; momenta are reported as `Y = e^{-eta} P`.
pub fn rk4_transformed<S: ConservativeField>(
    sys: &S,
    e0: &Ensemble,
    sched: &DampingSchedule,
    h: f64,
    steps: usize,
) -> Result<Vec<Ensemble>> {
    let mut t = e0.t;
    let mut state = Phase {
        x: e0.x.clone(),
        y: &e0.y * checked_eta(sched, t)?.exp(),
    };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(e0.clone());
    for _ in 0..steps {
        state = rk4_step(|s, z: &Phase| transformed_rhs(sys, sched, s, z), t, &state, h)?;
        t += h;
        let y = &state.y * (-checked_eta(sched, t)?).exp();
        out.push(next_state(state.x.clone(), y, t)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Euclidean Nesterov

/// Nesterov's two-sequence method with extrapolation `1 - 3/(k+3)`.
///
/// Returns `x^(0), ..., x^(steps)`.
pub fn nesterov_euclidean<G>(mut grad: G, x0: &Vector, tau: f64, steps: usize) -> Result<Vec<Vector>>
where
    G: FnMut(&Vector) -> Vector,
{
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    let mut xs = Vec::with_capacity(steps + 1);
    xs.push(x0.clone());
    let mut y = x0.clone();
    for k in 0..steps {
        let x_next = &y - grad(&y) * tau;
        let beta = 1.0 - 3.0 / (k as f64 + 3.0);
        y = &x_next + (&x_next - &xs[k]) * beta;
        xs.push(x_next);
    }
    Ok(xs)
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Conservative Hamiltonian; absent for the first-order baseline flow.
    pub hamiltonian: Option<f64>,
    /// `e^{eta(t)} H`, the time-dependent Hamiltonian, when damping is active.
    pub time_dep_hamiltonian: Option<f64>,
    pub energy: f64,
    pub momentum_norm: f64,
    pub oracle_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub ensemble: Ensemble,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub steps_taken: usize,
    pub oracle_calls: u64,
    /// First error hit; the trajectory stops there.
    pub error: Option<Error>,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory holds the initial snapshot")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.ensemble.t).collect()
    }
}

/// Particle system selector for [`integrate`].
#[derive(Debug, Clone)]
pub enum System {
    Linear(AttentionWeights),
    Softmax(AttentionWeights),
    /// First-order softmax attention flow `X' = Gamma(X)`; ignores momenta and damping.
    Baseline(AttentionWeights),
}

fn diagnose<S: ConservativeField>(sys: &S, sched: &DampingSchedule, e: &Ensemble, calls: u64) -> Result<Diagnostics> {
    let h = sys.hamiltonian(&e.x, &e.y)?;
    let time_dep = if sched.is_zero() {
        None
    } else {
        checked_eta(sched, e.t).ok().map(|eta| eta.exp() * h)
    };
    Ok(Diagnostics {
        hamiltonian: Some(h),
        time_dep_hamiltonian: time_dep,
        energy: sys.energy(&e.x)?,
        momentum_norm: e.y.norm(),
        oracle_calls: calls,
    })
}

/// Drives the stepper selected by `spec` over a conservative field.
///
/// Snapshots are recorded at step 0 and every `record_every` steps. An error
/// stops the run and is kept in the trajectory.
pub fn integrate_field<S: ConservativeField>(
    sys: &S,
    e0: &Ensemble,
    spec: &IntegratorSpec,
    steps: usize,
    record_every: usize,
) -> Trajectory {
    let counted = Counted::new(sys);
    let every = record_every.max(1);
    let mut traj = Trajectory {
        snapshots: Vec::new(),
        steps_taken: 0,
        oracle_calls: 0,
        error: None,
    };
    match diagnose(&counted, &spec.damping, e0, 0) {
        Ok(d) => traj.snapshots.push(Snapshot {
            ensemble: e0.clone(),
            diagnostics: d,
        }),
        Err(err) => {
            traj.error = Some(err);
            return traj;
        }
    }

    let mut state = e0.clone();
    let mut history = Ab2History::default();
    for k in 1..=steps {
        let next = match spec.method {
            Method::PlainEuler => step_plain_euler(&counted, &state, spec, k),
            Method::ConformalEuler => step_conformal_euler(&counted, &state, spec, k),
            Method::ExpEuler => step_exp_euler(&counted, &state, spec, k),
            Method::Ab2 if k == 1 => bootstrap_ab2(&counted, &state, spec, &mut history),
            Method::Ab2 => step_ab2(&counted, &state, spec, &mut history, k),
            Method::EtdAb2 if k == 1 => bootstrap_etd_ab2(&counted, &state, spec, &mut history),
            Method::EtdAb2 => step_etd_ab2(&counted, &state, spec, &mut history, k),
            Method::Rk4Reference => spec.step_size(k).and_then(|h| {
                let phase = Phase {
                    x: state.x.clone(),
                    y: state.y.clone(),
                };
                let out = rk4_step(|s, z: &Phase| damped_rhs(&counted, &spec.damping, s, z), state.t, &phase, h)?;
                next_state(out.x, out.y, state.t + h)
            }),
        };
        let next = match next {
            Ok(n) => n,
            Err(err) => {
                traj.error = Some(err);
                break;
            }
        };
        state = next;
        traj.steps_taken = k;
        traj.oracle_calls = counted.calls();
        if k % every == 0 {
            match diagnose(&counted, &spec.damping, &state, counted.calls()) {
                Ok(d) => traj.snapshots.push(Snapshot {
                    ensemble: state.clone(),
                    diagnostics: d,
                }),
                Err(err) => {
                    traj.error = Some(err);
                    break;
                }
            }
        }
    }
    traj
}

fn integrate_baseline(w: &AttentionWeights, e0: &Ensemble, spec: &IntegratorSpec, steps: usize, record_every: usize) -> Trajectory {
    let sm = SoftmaxAttention::new(w.clone());
    let every = record_every.max(1);
    let y0 = Matrix::zeros(e0.n(), e0.d());
    let diag = |x: &Matrix, calls: u64| -> Result<Diagnostics> {
        Ok(Diagnostics {
            hamiltonian: None,
            time_dep_hamiltonian: None,
            energy: sm.energy(x)?,
            momentum_norm: 0.0,
            oracle_calls: calls,
        })
    };
    let mut traj = Trajectory {
        snapshots: Vec::new(),
        steps_taken: 0,
        oracle_calls: 0,
        error: None,
    };
    let start = Ensemble {
        x: e0.x.clone(),
        y: y0.clone(),
        t: e0.t,
    };
    match diag(&start.x, 0) {
        Ok(d) => traj.snapshots.push(Snapshot {
            ensemble: start.clone(),
            diagnostics: d,
        }),
        Err(err) => {
            traj.error = Some(err);
            return traj;
        }
    }
    let calls = Cell::new(0u64);
    let field = |x: &Matrix| -> Result<Matrix> {
        calls.set(calls.get() + 1);
        dynamics::baseline_field_x(x, w, sm.guard)
    };
    let mut x = start.x;
    let mut t = start.t;
    for k in 1..=steps {
        let step = spec.step_size(k).and_then(|h| {
            let next = if spec.method == Method::Rk4Reference {
                rk4_step(|_, z: &Matrix| field(z), t, &x, h)?
            } else {
                &x + field(&x)? * h
            };
            Ok((next, t + h))
        });
        match step.and_then(|(nx, nt)| next_state(nx, y0.clone(), nt)) {
            Ok(e) => {
                x = e.x;
                t = e.t;
            }
            Err(err) => {
                traj.error = Some(err);
                break;
            }
        }
        traj.steps_taken = k;
        traj.oracle_calls = calls.get();
        if k % every == 0 {
            match diag(&x, calls.get()) {
                Ok(d) => traj.snapshots.push(Snapshot {
                    ensemble: Ensemble {
                        x: x.clone(),
                        y: y0.clone(),
                        t,
                    },
                    diagnostics: d,
                }),
                Err(err) => {
                    traj.error = Some(err);
                    break;
                }
            }
        }
    }
    traj
}

/// Integrates the chosen particle system, recording diagnostics every
/// `record_every` steps. Deterministic for fixed inputs.
pub fn integrate(e0: &Ensemble, system: &System, spec: &IntegratorSpec, steps: usize, record_every: usize) -> Trajectory {
    match system {
        System::Linear(w) => integrate_field(&LinearAttention::new(w.clone()), e0, spec, steps, record_every),
        System::Softmax(w) => integrate_field(&SoftmaxAttention::new(w.clone()), e0, spec, steps, record_every),
        System::Baseline(w) => integrate_baseline(w, e0, spec, steps, record_every),
    }
}

/// Small Hamiltonian systems used to check the steppers themselves.
pub mod surrogates {
    use super::*;

    /// `H = sum (x^2 + p^2) / 2`, entrywise harmonic oscillators.
    #[derive(Debug, Clone, Copy, Default)]
    pub struct Harmonic;

    #[derive(Debug, Clone)]
    pub struct HarmonicFrozen(Matrix);

    impl FrozenField for HarmonicFrozen {
        fn drift(&self, y: &Matrix) -> Matrix {
            y.clone()
        }

        fn force(&self, _y: &Matrix) -> Matrix {
            -&self.0
        }
    }

    impl ConservativeField for Harmonic {
        type Frozen = HarmonicFrozen;

        fn freeze(&self, x: &Matrix) -> Result<HarmonicFrozen> {
            Ok(HarmonicFrozen(x.clone()))
        }

        fn hamiltonian(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
            Ok(0.5 * (x.norm_squared() + y.norm_squared()))
        }

        fn energy(&self, x: &Matrix) -> Result<f64> {
            Ok(0.5 * x.norm_squared())
        }
    }

    /// `H = -sum x p`: positions obey `x' = -x` and momenta `p' = p`, so the
    /// position track is the scalar decay test.
    #[derive(Debug, Clone, Copy, Default)]
    pub struct ExponentialDecay;

    #[derive(Debug, Clone)]
    pub struct DecayFrozen(Matrix);

    impl FrozenField for DecayFrozen {
        fn drift(&self, _y: &Matrix) -> Matrix {
            -&self.0
        }

        fn force(&self, y: &Matrix) -> Matrix {
            y.clone()
        }
    }

    impl ConservativeField for ExponentialDecay {
        type Frozen = DecayFrozen;

        fn freeze(&self, x: &Matrix) -> Result<DecayFrozen> {
            Ok(DecayFrozen(x.clone()))
        }

        fn hamiltonian(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
            Ok(-x.component_mul(y).sum())
        }

        fn energy(&self, x: &Matrix) -> Result<f64> {
            Ok(0.5 * x.norm_squared())
        }
    }
}
