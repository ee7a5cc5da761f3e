//! The acceptance suite. Each criterion checks the library against an
//! oracle built here: finite differences, series expansions, brute-force
//! loops or a second formulation of the same dynamics.

use std::time::{Duration, Instant};

use accel_attn::dynamics::{self, ConservativeField};
use accel_attn::elliptic::{self, EllipticFamily, MomentState};
use accel_attn::instances::{commuting_weights, gaussian_matrix, rng, spd};
use accel_attn::integrators::{
    self, integrate, integrate_field, surrogates, IntegratorSpec, Method, NesterovAlpha, System,
};
use accel_attn::sympformer::{self, SympFormerConfig, SympFormerWeights, SympMethod};
use accel_attn::{AttentionWeights, DampingSchedule, Ensemble, LinearAttention, Matrix, SoftmaxAttention, Vector};
use rand::Rng;

use crate::config::SystemKind;
use crate::setup;

type Check = Result<String, String>;

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    /// Wall-clock limit that is part of the criterion, if any.
    pub time_limit: Option<Duration>,
    pub check: fn() -> Check,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub fn criteria() -> Vec<Criterion> {
    let secs = |s| Some(Duration::from_secs(s));
    vec![
        Criterion { id: 1, name: "gradient consistency", time_limit: secs(10), check: gradient_consistency },
        Criterion { id: 2, name: "finite-N elliptic equivalence", time_limit: secs(30), check: finite_n_equivalence },
        Criterion { id: 3, name: "mean-field moments", time_limit: secs(60), check: mean_field_moments },
        Criterion { id: 4, name: "conservation", time_limit: None, check: conservation },
        Criterion { id: 5, name: "dual formulation", time_limit: None, check: dual_formulation },
        Criterion { id: 6, name: "damping weights", time_limit: None, check: damping_weights },
        Criterion { id: 7, name: "Nesterov rate", time_limit: None, check: nesterov_rate },
        Criterion { id: 8, name: "acceleration at matched oracle calls", time_limit: None, check: acceleration },
        Criterion { id: 9, name: "sympformer forward", time_limit: None, check: sympformer_forward },
        Criterion { id: 10, name: "order of accuracy", time_limit: None, check: order_of_accuracy },
    ]
}

pub fn run_criterion(c: &Criterion) -> Outcome {
    let start = Instant::now();
    let result = std::panic::catch_unwind(c.check).unwrap_or_else(|_| Err("check panicked".into()));
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(limit) = c.time_limit {
        if elapsed > limit {
            passed = false;
            detail = format!("{detail}; exceeded time limit of {} s", limit.as_secs());
        }
    }
    Outcome {
        id: c.id,
        name: c.name,
        passed,
        detail,
        elapsed,
    }
}

pub fn run_all() -> Vec<Outcome> {
    criteria().iter().map(run_criterion).collect()
}

fn require(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn core<T>(r: accel_attn::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// 1

/// Central differences of `f` at `m`, one entry at a time.
fn fd_gradient(f: &dyn Fn(&Matrix) -> f64, m: &Matrix, step: f64) -> Matrix {
    let mut grad = Matrix::zeros(m.nrows(), m.ncols());
    let mut probe = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            probe[(i, j)] = v + step;
            let up = f(&probe);
            probe[(i, j)] = v - step;
            let down = f(&probe);
            probe[(i, j)] = v;
            grad[(i, j)] = (up - down) / (2.0 * step);
        }
    }
    grad
}

fn rel_err(approx: &Matrix, exact: &Matrix) -> f64 {
    (approx - exact).norm() / exact.norm().max(1e-300)
}

type Hamiltonian<'a> = dyn Fn(&Matrix, &Matrix) -> f64 + 'a;

fn gradient_consistency() -> Check {
    const TOL: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut r = rng(1000 + seed);
        let n = r.random_range(2..=8);
        let d = r.random_range(1..=4);
        let w = core(commuting_weights(&mut r, d, (0.2, 1.0), (0.2, 1.0)))?;
        let x = gaussian_matrix(&mut r, n, d, 0.5);
        let y = gaussian_matrix(&mut r, n, d, 0.5);
        let sm = SoftmaxAttention::new(w.clone());
        let lin = LinearAttention::new(w.clone());
        let systems: [(&str, &Hamiltonian, accel_attn::FieldPair); 2] = [
            (
                "softmax",
                &|x, y| sm.hamiltonian(x, y).expect("softmax hamiltonian"),
                core(sm.fields(&x, &y))?,
            ),
            (
                "linear",
                &|x, y| lin.hamiltonian(x, y).expect("linear hamiltonian"),
                core(lin.fields(&x, &y))?,
            ),
        ];
        for (label, h, fp) in systems {
            let dy = fd_gradient(&|yy| h(&x, yy), &y, 1e-5);
            let dx = fd_gradient(&|xx| h(xx, &y), &x, 1e-5);
            let ey = rel_err(&dy, &fp.f);
            let ex = rel_err(&(-dx), &fp.g);
            worst = worst.max(ey).max(ex);
            if ey > TOL || ex > TOL {
                return Err(format!(
                    "{label} instance {seed} (N={n}, d={d}): dH/dY error {ey:.2e}, -dH/dX error {ex:.2e}"
                ));
            }
        }
    }
    Ok(format!("50 instances, worst relative error {worst:.2e} <= {TOL:.0e}"))
}

// ---------------------------------------------------------------------------
// 2, 3

fn finite_n_equivalence() -> Check {
    const TOL: f64 = 1e-8;
    let inst = core(setup::instance(SystemKind::Linear, 7, 16, 2))?;
    let sched = core(DampingSchedule::constant(1.0))?;
    let rep = core(elliptic::dual_integration(&inst.x0, &inst.weights, &sched, 1e-3, 1000))?;
    require(
        rep.max_dev_x <= TOL && rep.max_dev_y <= TOL,
        format!(
            "max |X - G X0| = {:.2e}, max |Y - P X| = {:.2e} (tol {TOL:.0e}); min eig S = {:.3}",
            rep.max_dev_x, rep.max_dev_y, rep.min_eig_s
        ),
    )
}

fn mean_field_moments() -> Check {
    const N: usize = 2000;
    let tol = 5.0 / (N as f64).sqrt();
    let mut r = rng(3);
    let w = core(commuting_weights(&mut r, 2, setup::LINEAR_A, setup::LINEAR_B))?;
    let m0 = Vector::from_vec(vec![0.5, -0.3]);
    let sigma0 = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let sched = core(DampingSchedule::constant(1.0))?;
    let x0 = core(elliptic::sample(EllipticFamily::Gaussian, &m0, &sigma0, N, 33))?;
    let traj = core(integrators::rk4_reference(
        &LinearAttention::new(w.clone()),
        &core(Ensemble::at_rest(x0, 0.0))?,
        &sched,
        1e-3,
        1000,
    ))?;
    let (mu, cov, _) = core(elliptic::empirical_moments(&traj.last().ensemble.x))?;
    let s0 = core(MomentState::at_rest(EllipticFamily::Gaussian, m0, sigma0))?;
    let path = core(elliptic::integrate_moments(&s0, 0.0, &w, &sched, 1e-3, 1000))?;
    let last = path.last().expect("moment path");
    let dm = (&mu - &last.m).abs().max();
    let dc = (&cov - last.covariance()).abs().max();
    require(
        dm <= tol && dc <= tol,
        format!("mean error {dm:.4}, covariance error {dc:.4} (tol {tol:.4})"),
    )
}

// ---------------------------------------------------------------------------
// 4, 5

/// Softmax instance with moving momenta. The undamped flow has no lower
/// energy bound, so a mobility `B` of order one runs away within `t = 1`;
/// `b_range` keeps it on a bounded path.
fn softmax_probe(seed: u64, n: usize, d: usize, b_range: (f64, f64)) -> Result<(AttentionWeights, Ensemble), String> {
    let mut r = rng(seed);
    let w = core(commuting_weights(&mut r, d, (0.3, 0.6), b_range))?;
    let x = gaussian_matrix(&mut r, n, d, 0.5);
    let y = gaussian_matrix(&mut r, n, d, 0.3);
    Ok((w, core(Ensemble::new(x, y, 0.0))?))
}

fn harmonic_energy_errors() -> Result<(f64, f64), String> {
    let e0 = core(Ensemble::new(Matrix::from_element(1, 1, 1.0), Matrix::zeros(1, 1), 0.0))?;
    let energy = |e: &Ensemble| 0.5 * (e.x.norm_squared() + e.y.norm_squared());
    let h0 = energy(&e0);
    let conformal = core(IntegratorSpec::new(Method::ConformalEuler, 1e-2, DampingSchedule::Zero))?;
    let traj = integrate_field(&surrogates::Harmonic, &e0, &conformal, 1000, 1);
    let bounded = traj
        .snapshots
        .iter()
        .map(|s| (energy(&s.ensemble) - h0).abs())
        .fold(0.0, f64::max);
    let plain = core(
        IntegratorSpec::new(Method::PlainEuler, 1e-2, DampingSchedule::Zero)
            .and_then(|s| s.with_nesterov_alpha(NesterovAlpha::Constant(1.0))),
    )?;
    let traj = integrate_field(&surrogates::Harmonic, &e0, &plain, 1000, 1000);
    let drift = (energy(&traj.last().ensemble) - h0).abs();
    Ok((bounded, drift))
}

fn conservation() -> Check {
    let (w, e0) = softmax_probe(4, 8, 2, (1e-2, 2e-2))?;
    let sys = SoftmaxAttention::new(w);
    let traj = core(integrators::rk4_reference(&sys, &e0, &DampingSchedule::Zero, 1e-3, 1000))?;
    let h0 = traj.snapshots[0].diagnostics.hamiltonian.expect("conservative system");
    let drift = traj
        .snapshots
        .iter()
        .map(|s| (s.diagnostics.hamiltonian.expect("conservative system") - h0).abs() / h0.abs())
        .fold(0.0, f64::max);
    let (conformal_err, plain_err) = harmonic_energy_errors()?;
    require(
        drift <= 1e-6 && plain_err >= 2.0 * conformal_err,
        format!(
            "softmax RK4 relative H drift {drift:.2e} (tol 1e-6); harmonic: conformal max error {conformal_err:.2e}, \
             plain Euler final error {plain_err:.2e} (ratio {:.1}, need >= 2)",
            plain_err / conformal_err
        ),
    )
}

fn dual_formulation() -> Check {
    let (w, e0) = softmax_probe(5, 8, 2, (0.3, 0.6))?;
    let sys = SoftmaxAttention::new(w);
    let sched = core(DampingSchedule::constant(1.0))?;
    let damped = core(integrators::rk4_reference(&sys, &e0, &sched, 1e-3, 1000))?;
    let transformed = core(integrators::rk4_transformed(&sys, &e0, &sched, 1e-3, 1000))?;
    let dev = damped
        .snapshots
        .iter()
        .zip(&transformed)
        .map(|(a, b)| (&a.ensemble.x - &b.x).abs().max())
        .fold(0.0, f64::max);
    require(dev <= 1e-6, format!("max |X_damped - X_transformed| = {dev:.2e} (tol 1e-6)"))
}

// ---------------------------------------------------------------------------
// 6

/// `h e^{-mh} sum_k (mh)^k / (k! (r + k + 1))`, the log-linear weight expanded
/// in powers of `m h`.
fn log_linear_weight_series(r: f64, m: f64, h: f64) -> f64 {
    let z = m * h;
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 0..500 {
        let add = term / (r + k as f64 + 1.0);
        sum += add;
        if add < 1e-18 * sum {
            break;
        }
        term *= z / (k as f64 + 1.0);
    }
    h * (-z).exp() * sum
}

fn damping_weights() -> Check {
    let mut r = rng(6);
    let (mut e_poly, mut e_const, mut e_log): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let rr = r.random_range(0.0..5.0);
        let m = r.random_range(0.01..5.0);
        let h = r.random_range(0.001..1.0);
        let t0 = r.random_range(0.1..3.0);
        let poly = core(DampingSchedule::polynomial(rr, t0).and_then(|s| s.exp_euler_weight(h)))?;
        e_poly = e_poly.max((poly - h / (rr + 1.0)).abs());
        let cst = core(DampingSchedule::constant(m).and_then(|s| s.exp_euler_weight(h)))?;
        e_const = e_const.max((cst - (1.0 - (-m * h).exp()) / m).abs());
        let ll = core(DampingSchedule::log_linear(rr, m, t0).and_then(|s| s.exp_euler_weight(h)))?;
        e_log = e_log.max((ll - log_linear_weight_series(rr, m, h)).abs());
    }
    require(
        e_poly <= 1e-12 && e_const <= 1e-12 && e_log <= 1e-10,
        format!("100 draws: polynomial {e_poly:.1e}, constant {e_const:.1e} (tol 1e-12); log-linear {e_log:.1e} (tol 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// 7

fn nesterov_rate() -> Check {
    const D: usize = 10;
    const TAU: f64 = 0.1;
    const ITERS: usize = 500;
    let mut r = rng(7);
    // L = 9 < 1/tau
    let q = spd(&mut r, D, 0.01, 9.0);
    let b = Vector::from_iterator(D, gaussian_matrix(&mut r, D, 1, 1.0).iter().copied());
    let x0 = Vector::from_iterator(D, gaussian_matrix(&mut r, D, 1, 1.0).iter().copied());
    let x_star = q.clone().cholesky().ok_or("quadratic is not positive definite")?.solve(&b);
    let f = |x: &Vector| 0.5 * x.dot(&(&q * x)) - b.dot(x);
    let f_star = f(&x_star);
    let xs = core(integrators::nesterov_euclidean(|x| &q * x - &b, &x0, TAU, ITERS))?;
    let scaled: Vec<f64> = (1..=ITERS).map(|k| (k * k) as f64 * (f(&xs[k]) - f_star)).collect();
    let bound = 2.0 * (&x0 - &x_star).norm_squared() / TAU;
    let max_all = scaled.iter().copied().fold(f64::MIN, f64::max);
    let max_head = scaled[..400].iter().copied().fold(f64::MIN, f64::max);
    let max_tail = scaled[400..].iter().copied().fold(f64::MIN, f64::max);
    require(
        max_all <= bound && max_tail <= max_head,
        format!(
            "max k^2 (F - F*) = {max_all:.3e} <= 2|x0 - x*|^2 / tau = {bound:.3e}; last 100 max {max_tail:.3e} <= first 400 max {max_head:.3e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

/// Seed of the energy-decay instance shared with the `energy-decay` command.
pub const ENERGY_DECAY_SEED: u64 = 0;

fn acceleration() -> Check {
    const BUDGET: u64 = 400;
    let inst = core(setup::instance(SystemKind::Softmax, ENERGY_DECAY_SEED, 32, 4))?;
    let sched = core(DampingSchedule::constant(1.0))?;
    let spec = core(IntegratorSpec::new(Method::ExpEuler, 0.05, sched))?;
    let e0 = core(inst.at_rest(sched.t0()))?;
    let acc = integrate(&e0, &System::Softmax(inst.weights.clone()), &spec, 400, 10);
    let base = integrate(&e0, &System::Baseline(inst.weights), &spec, 400, 10);
    if let Some(e) = acc.error.as_ref().or(base.error.as_ref()) {
        return Err(format!("run failed: {e}"));
    }
    let mut best_gap: f64 = 0.0;
    let mut at_budget = None;
    for (a, b) in acc.snapshots.iter().zip(&base.snapshots) {
        let (da, db) = (&a.diagnostics, &b.diagnostics);
        if da.oracle_calls != db.oracle_calls {
            return Err("oracle counts diverged between runs".into());
        }
        best_gap = best_gap.max((db.energy - da.energy) / db.energy.abs());
        if da.oracle_calls == BUDGET {
            at_budget = Some((da.energy, db.energy));
        }
    }
    let (ea, eb) = at_budget.ok_or("budget 400 not recorded")?;
    require(
        ea <= eb && best_gap >= 0.01,
        format!(
            "energy at {BUDGET} calls: accelerated {ea:.5} vs baseline {eb:.5}; largest relative gap {:.1}% (need >= 1%)",
            100.0 * best_gap
        ),
    )
}

// ---------------------------------------------------------------------------
// 9

fn zeta_reference(method: SympMethod, c_log: f64, c_lin: f64, t: f64, h: f64, alpha: f64) -> (f64, f64) {
    let eta = |s: f64| c_log * s.ln() + c_lin * s;
    match method {
        SympMethod::PlainEuler => (alpha, 1.0),
        SympMethod::ConformalEuler => (1.0 - (c_log / t + c_lin) * h, 1.0),
        SympMethod::ExpEuler => {
            let d_eta = eta(t + h) - eta(t);
            ((-d_eta).exp(), (1.0 - (-d_eta).exp()) / (d_eta / h))
        }
    }
}

fn sympformer_forward() -> Check {
    let mut r = rng(9);
    let mut zeta_err: f64 = 0.0;
    for _ in 0..100 {
        let (c_log, c_lin) = (r.random_range(0.05..3.0), r.random_range(0.05..3.0));
        let (t, h, alpha) = (r.random_range(0.5..5.0), r.random_range(0.01..1.0), r.random_range(0.01..0.99));
        for method in [SympMethod::PlainEuler, SympMethod::ConformalEuler, SympMethod::ExpEuler] {
            let (z1, z2) = core(sympformer::zeta_coeffs(method, c_log, c_lin, t, h, alpha))?;
            let (w1, w2) = zeta_reference(method, c_log, c_lin, t, h, alpha);
            zeta_err = zeta_err.max((z1 - w1).abs()).max((z2 - w2).abs());
        }
    }
    if zeta_err > 1e-12 {
        return Err(format!("zeta coefficients off by {zeta_err:.2e}"));
    }

    // causality: suffix perturbations leave earlier logits bit-identical
    let cfg = core(SympFormerConfig::new(2, 2, 8, 6, 17))?;
    let weights = core(SympFormerWeights::random(&cfg, 90))?;
    let tokens: Vec<usize> = (0..6).map(|_| r.random_range(0..17)).collect();
    let base = core(sympformer::forward(&[tokens.clone()], &weights, &cfg))?.remove(0);
    for p in 0..tokens.len() - 1 {
        let mut changed = tokens.clone();
        for tok in &mut changed[p + 1..] {
            *tok = (*tok + 1 + r.random_range(0..16)) % 17;
        }
        let out = core(sympformer::forward(&[changed], &weights, &cfg))?.remove(0);
        if out.rows(0, p + 1) != base.rows(0, p + 1) {
            return Err(format!("logits at positions <= {p} depend on later tokens"));
        }
    }

    // single-head non-causal oracle against the particle-system field
    let d = 4;
    let aw = core(commuting_weights(&mut r, d, (0.2, 0.8), (0.3, 1.0)))?;
    let mut one = core(SympFormerConfig::new(1, 1, d, 6, 5))?;
    one.causal = false;
    let mut w1 = core(SympFormerWeights::random(&one, 91))?;
    w1.layers[0].heads[0].q = aw.a().clone();
    w1.layers[0].heads[0].k = Matrix::identity(d, d);
    w1.layers[0].value = aw.b().clone();
    let x = gaussian_matrix(&mut r, 6, d, 0.5);
    let y = gaussian_matrix(&mut r, 6, d, 0.5);
    let got = core(sympformer::attention_oracle(&x, &y, &w1.layers[0], &one))?;
    let want = core(dynamics::softmax_fields(&core(Ensemble::new(x, y, 0.0))?, &aw))?;
    let oracle_err = (&got.f - &want.f).abs().max().max((&got.g - &want.g).abs().max());
    if oracle_err > 1e-12 {
        return Err(format!("single-head oracle differs from softmax_fields by {oracle_err:.2e}"));
    }

    let again = core(sympformer::forward(&[tokens], &weights, &cfg))?.remove(0);
    require(
        again == base,
        format!(
            "zeta max error {zeta_err:.1e}; causality exact over {} prefixes; oracle error {oracle_err:.1e}; repeat run bit-identical",
            5
        ),
    )
}

// ---------------------------------------------------------------------------
// 10

/// Error at `t = 1` of the position track of `x' = -x`, `x(0) = 1`.
fn decay_error(method: Method, h: f64) -> Result<f64, String> {
    let steps = (1.0 / h).round() as usize;
    let e0 = core(Ensemble::new(Matrix::from_element(1, 1, 1.0), Matrix::from_element(1, 1, 1.0), 0.0))?;
    let spec = core(
        IntegratorSpec::new(method, h, DampingSchedule::Zero)
            .and_then(|s| s.with_nesterov_alpha(NesterovAlpha::Constant(1.0))),
    )?;
    let traj = integrate_field(&surrogates::ExponentialDecay, &e0, &spec, steps, steps);
    if let Some(e) = traj.error {
        return Err(e.to_string());
    }
    Ok((traj.last().ensemble.x[(0, 0)] - (-1.0f64).exp()).abs())
}

fn order_of_accuracy() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for (method, order) in [
        (Method::PlainEuler, 1.0),
        (Method::ConformalEuler, 1.0),
        (Method::ExpEuler, 1.0),
        (Method::Ab2, 2.0),
        (Method::EtdAb2, 2.0),
    ] {
        let slope = (decay_error(method, 0.02)? / decay_error(method, 0.01)?).log2();
        ok &= (slope - order).abs() <= 0.15;
        details.push(format!("{} {slope:.3}", method.name()));
    }
    let ratio = decay_error(Method::PlainEuler, 0.1)? / decay_error(Method::Ab2, 0.1)?;
    ok &= ratio >= 5.0;
    require(
        ok,
        format!("slopes: {}; Euler/AB-2 error ratio at h = 0.1: {ratio:.1} (need >= 5)", details.join(", ")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_oracle_limits() {
        // m = 0 reduces to h / (r + 1); r = 0 to (1 - e^{-mh}) / m
        assert!((log_linear_weight_series(2.0, 0.0, 0.5) - 0.5 / 3.0).abs() < 1e-15);
        let w = log_linear_weight_series(0.0, 2.0, 0.5);
        assert!((w - (1.0 - (-1.0f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let g = fd_gradient(&|x| x.norm_squared(), &m, 1e-4);
        assert!((g - &m * 2.0).abs().max() < 1e-9);
    }
}
