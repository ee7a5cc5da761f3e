//! Integrators on the damped harmonic oscillator `x' = p`, `p' = -m p - x`,
//! whose exact solution is known, plus oracle accounting on attention systems.

use accel_attn::instances::{commuting_weights, gaussian_matrix, rng};
use accel_attn::integrators::{integrate, integrate_field, surrogates, IntegratorSpec, Method, NesterovAlpha, System};
use accel_attn::{DampingSchedule, Ensemble, Matrix};

/// Underdamped solution with `x(0) = 1`, `p(0) = 0`.
fn exact_x(m: f64, t: f64) -> f64 {
    let w = (1.0 - m * m / 4.0).sqrt();
    (-m * t / 2.0).exp() * ((w * t).cos() + m / (2.0 * w) * (w * t).sin())
}

fn start() -> Ensemble {
    Ensemble::new(Matrix::from_element(1, 1, 1.0), Matrix::zeros(1, 1), 0.0).unwrap()
}

fn error_with(spec: &IntegratorSpec, steps: usize, m: f64, t_end: f64) -> f64 {
    let traj = integrate_field(&surrogates::Harmonic, &start(), spec, steps, steps);
    assert!(traj.error.is_none(), "{:?}", traj.error);
    (traj.last().ensemble.x[(0, 0)] - exact_x(m, t_end)).abs()
}

fn error(method: Method, h: f64, m: f64) -> f64 {
    let steps = (2.0 / h).round() as usize;
    let spec = IntegratorSpec::new(method, h, DampingSchedule::constant(m).unwrap())
        .unwrap()
        .with_nesterov_alpha(NesterovAlpha::Constant((-m * h).exp()))
        .unwrap();
    error_with(&spec, steps, m, 2.0)
}

#[test]
fn convergence_orders_under_constant_damping() {
    let m = 0.8;
    for (method, order) in [
        (Method::PlainEuler, 1.0),
        (Method::ConformalEuler, 1.0),
        (Method::ExpEuler, 1.0),
        (Method::Ab2, 2.0),
        (Method::EtdAb2, 2.0),
        (Method::Rk4Reference, 4.0),
    ] {
        let slope = (error(method, 0.02, m) / error(method, 0.01, m)).log2();
        assert!((slope - order).abs() < 0.2, "{}: observed order {slope:.3}", method.name());
    }
}

#[test]
fn variable_step_ab2_keeps_second_order() {
    let m = 0.5;
    let err = |base: f64| {
        // alternate h and h/2 over [0, 1.5]
        let pairs = (1.5 / (1.5 * base)).round() as usize;
        let hs: Vec<f64> = (0..2 * pairs).map(|k| if k % 2 == 0 { base } else { base / 2.0 }).collect();
        let t_end: f64 = hs.iter().sum();
        let spec = IntegratorSpec::new(Method::Ab2, base, DampingSchedule::constant(m).unwrap())
            .unwrap()
            .with_step_schedule(hs.clone())
            .unwrap();
        error_with(&spec, hs.len(), m, t_end)
    };
    let slope = (err(0.02) / err(0.01)).log2();
    assert!((slope - 2.0).abs() < 0.2, "observed order {slope:.3}");
}

#[test]
fn oracle_calls_match_method_cost() {
    let mut r = rng(3);
    let w = commuting_weights(&mut r, 2, (0.3, 0.6), (0.01, 0.02)).unwrap();
    let e0 = Ensemble::at_rest(gaussian_matrix(&mut r, 6, 2, 0.5), 0.0).unwrap();
    let sched = DampingSchedule::constant(1.0).unwrap();
    for sys in [System::Softmax(w.clone()), System::Linear(w.clone()), System::Baseline(w.clone())] {
        for method in Method::ALL {
            let spec = IntegratorSpec::new(method, 0.01, sched).unwrap();
            let traj = integrate(&e0, &sys, &spec, 25, 5);
            assert!(traj.error.is_none());
            assert_eq!(traj.snapshots.len(), 6);
            let per_step = if matches!(sys, System::Baseline(_)) && method != Method::Rk4Reference {
                1
            } else {
                method.oracle_calls_per_step()
            };
            assert_eq!(traj.oracle_calls, 25 * per_step, "{}", method.name());
            let counts: Vec<u64> = traj.snapshots.iter().map(|s| s.diagnostics.oracle_calls).collect();
            assert_eq!(counts, (0..=5).map(|k| 5 * k * per_step).collect::<Vec<_>>());
        }
    }
}

#[test]
fn damping_drains_energy_for_exp_euler() {
    // dH/dt = -m p^2 vanishes at turning points, so compare over whole periods
    let spec = IntegratorSpec::new(Method::ExpEuler, 0.01, DampingSchedule::constant(1.0).unwrap()).unwrap();
    let traj = integrate_field(&surrogates::Harmonic, &start(), &spec, 1000, 200);
    let h: Vec<f64> = traj.snapshots.iter().map(|s| s.diagnostics.hamiltonian.unwrap()).collect();
    assert!(h.windows(2).all(|w| w[1] < w[0]), "{h:?}");
    assert!(h.last().unwrap() < &(0.01 * h[0]));
}
