//! Command execution: builds the instance a config describes, runs it and
//! writes CSV, SVG and text artifacts into the output directory.
//!
//! Failures of the dynamics (overflow, non-finite state, a failed check) are
//! reported through [`Status::Failed`] with whatever output was produced;
//! only bad input and I/O problems are returned as errors.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use accel_attn::elliptic;
use accel_attn::integrators::{integrate, IntegratorSpec, Method, System, Trajectory};
use accel_attn::sympformer::{self, AttentionKind, SympFormerConfig, SympFormerWeights, SympMethod};
use accel_attn::{instances, Matrix};
use rand::Rng;

use crate::config::{Command, ConfigError, ExperimentConfig, SystemKind};
use crate::report::{line_chart, series_to_csv, Curve, RunReport, Series, Status, Summary};
use crate::selftest;
use crate::setup;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] accel_attn::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Files written, in creation order.
    pub files: Vec<PathBuf>,
}

/// Largest deviation accepted by `verify-elliptic`.
pub const ELLIPTIC_TOL: f64 = 1e-8;

struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| HarnessError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let mut out = Out {
        dir: cfg.out_dir.clone(),
        files: Vec::new(),
    };
    out.write("config.txt", &cfg.to_text())?;
    let start = Instant::now();
    let (series, status, notes) = match cfg.command {
        Command::Simulate => simulate(cfg, &mut out)?,
        Command::VerifyElliptic => verify_elliptic(cfg, &mut out)?,
        Command::EnergyDecay => energy_decay(cfg, &mut out)?,
        Command::CompareIntegrators => compare_integrators(cfg, &mut out)?,
        Command::SympformerForward => sympformer_forward(cfg, &mut out)?,
        Command::Selftest => run_selftest(&mut out)?,
    };
    let summary = Summary::of(&series, start.elapsed().as_secs_f64());
    Ok(RunOutput {
        report: RunReport {
            series,
            summary,
            status,
            notes,
        },
        files: out.files,
    })
}

type Produced = (Vec<Series>, Status, Vec<String>);

fn spec(cfg: &ExperimentConfig, method: Method) -> Result<IntegratorSpec, HarnessError> {
    Ok(IntegratorSpec::new(method, cfg.h, cfg.schedule()?)?
        .with_nesterov_alpha(cfg.nesterov())?
        .with_worked_example(cfg.worked_example))
}

fn system(kind: SystemKind, inst: &setup::Instance) -> System {
    let w = inst.weights.clone();
    match kind {
        SystemKind::Linear => System::Linear(w),
        SystemKind::Softmax => System::Softmax(w),
        SystemKind::Baseline => System::Baseline(w),
    }
}

fn status_of(trajs: &[(&str, &Trajectory)]) -> (Status, Vec<String>) {
    let failures: Vec<String> = trajs
        .iter()
        .filter_map(|(label, t)| t.error.as_ref().map(|e| format!("{label}: stopped after {} steps: {e}", t.steps_taken)))
        .collect();
    if failures.is_empty() {
        (Status::Ok, Vec::new())
    } else {
        (Status::Failed(failures.join("; ")), failures)
    }
}

fn points(series: &Series, x: impl Fn(&crate::report::Row) -> f64, y: impl Fn(&crate::report::Row) -> f64) -> Vec<(f64, f64)> {
    series.rows.iter().map(|r| (x(r), y(r))).collect()
}

fn simulate(cfg: &ExperimentConfig, out: &mut Out) -> Result<Produced, HarnessError> {
    let inst = setup::instance(cfg.system, cfg.seed, cfg.n, cfg.d)?;
    let spec = spec(cfg, cfg.integrator)?;
    let e0 = inst.at_rest(spec.damping.t0())?;
    let traj = integrate(&e0, &system(cfg.system, &inst), &spec, cfg.steps, cfg.record_every);
    let series = Series::from_trajectory(cfg.system.name(), &traj);
    out.write("simulate.csv", &series_to_csv(&series))?;
    let mut curves = vec![Curve {
        label: "energy",
        points: points(&series, |r| r.t, |r| r.energy),
    }];
    if series.rows.iter().all(|r| r.hamiltonian.is_some()) {
        curves.push(Curve {
            label: "H",
            points: points(&series, |r| r.t, |r| r.hamiltonian.unwrap_or(f64::NAN)),
        });
    }
    let title = format!("{} / {}", cfg.system.name(), cfg.integrator.name());
    out.write("simulate.svg", &line_chart(&title, "t", "value", &curves, cfg.log_scale))?;
    let (status, mut notes) = status_of(&[(cfg.system.name(), &traj)]);
    notes.push(format!("{} steps, {} oracle calls", traj.steps_taken, traj.oracle_calls));
    Ok((vec![series], status, notes))
}

fn verify_elliptic(cfg: &ExperimentConfig, out: &mut Out) -> Result<Produced, HarnessError> {
    let inst = setup::instance(SystemKind::Linear, cfg.seed, cfg.n, cfg.d)?;
    let sched = cfg.schedule()?;
    let (status, notes) = match elliptic::dual_integration(&inst.x0, &inst.weights, &sched, cfg.h, cfg.steps) {
        Ok(rep) => {
            let mut notes = vec![
                format!("max |X_i - G X_i(0)| = {:.3e}", rep.max_dev_x),
                format!("max |Y_i - P X_i| = {:.3e}", rep.max_dev_y),
                format!("max |S - X^T X / N| = {:.3e}", rep.max_dev_s),
                format!("min eigenvalue of S = {:.6e}", rep.min_eig_s),
            ];
            if rep.min_eig_s <= 1e-10 {
                notes.push("second moment is close to singular; positions have collapsed onto a subspace".into());
            }
            let worst = rep.max_dev_x.max(rep.max_dev_y);
            let status = if worst <= ELLIPTIC_TOL {
                Status::Ok
            } else {
                Status::Failed(format!("deviation {worst:.3e} exceeds {ELLIPTIC_TOL:.0e}"))
            };
            (status, notes)
        }
        Err(e) => (Status::Failed(e.to_string()), vec![format!("integration failed: {e}")]),
    };
    let mut text = String::new();
    for n in &notes {
        let _ = writeln!(text, "{n}");
    }
    out.write("verify_elliptic.txt", &text)?;
    Ok((Vec::new(), status, notes))
}

fn energy_decay(cfg: &ExperimentConfig, out: &mut Out) -> Result<Produced, HarnessError> {
    let accelerated = match cfg.system {
        SystemKind::Linear => SystemKind::Linear,
        _ => SystemKind::Softmax,
    };
    let inst = setup::instance(accelerated, cfg.seed, cfg.n, cfg.d)?;
    let spec = spec(cfg, cfg.integrator)?;
    let e0 = inst.at_rest(spec.damping.t0())?;
    let acc = integrate(&e0, &system(accelerated, &inst), &spec, cfg.steps, cfg.record_every);
    // the first-order flow uses one oracle call per step, like the Euler family
    let base_spec = IntegratorSpec::new(Method::ExpEuler, cfg.h, spec.damping)?;
    let base = integrate(&e0, &System::Baseline(inst.weights.clone()), &base_spec, cfg.steps, cfg.record_every);
    let a = Series::from_trajectory("accelerated", &acc);
    let b = Series::from_trajectory("baseline", &base);
    out.write("energy_decay_accelerated.csv", &series_to_csv(&a))?;
    out.write("energy_decay_baseline.csv", &series_to_csv(&b))?;
    let calls = |r: &crate::report::Row| r.oracle_calls as f64;
    let curves = [
        Curve {
            label: "accelerated",
            points: points(&a, calls, |r| r.energy),
        },
        Curve {
            label: "baseline",
            points: points(&b, calls, |r| r.energy),
        },
    ];
    out.write(
        "energy_decay.svg",
        &line_chart("energy vs oracle calls", "oracle calls", "energy", &curves, cfg.log_scale),
    )?;
    let (status, mut notes) = status_of(&[("accelerated", &acc), ("baseline", &base)]);
    if let (Some(ra), Some(rb)) = (a.rows.last(), b.rows.last()) {
        notes.push(format!(
            "final energy after {} oracle calls: accelerated {:.6e}, baseline {:.6e}",
            ra.oracle_calls, ra.energy, rb.energy
        ));
    }
    Ok((vec![a, b], status, notes))
}

fn compare_integrators(cfg: &ExperimentConfig, out: &mut Out) -> Result<Produced, HarnessError> {
    let inst = setup::instance(cfg.system, cfg.seed, cfg.n, cfg.d)?;
    let sys = system(cfg.system, &inst);
    let specs = Method::ALL
        .iter()
        .map(|&m| spec(cfg, m))
        .collect::<Result<Vec<_>, _>>()?;
    let e0 = inst.at_rest(specs[0].damping.t0())?;
    let trajs: Vec<Trajectory> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| s.spawn(|| integrate(&e0, &sys, spec, cfg.steps, cfg.record_every)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("integrator thread panicked")).collect()
    });
    let series: Vec<Series> = Method::ALL
        .iter()
        .zip(&trajs)
        .map(|(m, t)| Series::from_trajectory(m.name(), t))
        .collect();
    for s in &series {
        out.write(&format!("compare_{}.csv", s.label), &series_to_csv(s))?;
    }
    let curves: Vec<Curve<'_>> = series
        .iter()
        .map(|s| Curve {
            label: &s.label,
            points: points(s, |r| r.oracle_calls as f64, |r| r.energy),
        })
        .collect();
    out.write(
        "compare_integrators.svg",
        &line_chart("energy vs oracle calls", "oracle calls", "energy", &curves, cfg.log_scale),
    )?;
    let labelled: Vec<(&str, &Trajectory)> = Method::ALL.iter().map(|m| m.name()).zip(&trajs).collect();
    let (status, mut notes) = status_of(&labelled);
    for s in &series {
        if let Some(r) = s.rows.last() {
            notes.push(format!("{}: energy {:.6e} after {} oracle calls", s.label, r.energy, r.oracle_calls));
        }
    }
    Ok((series, status, notes))
}

fn read_file(path: &Path) -> Result<std::fs::File, HarnessError> {
    std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sympformer_setup(cfg: &ExperimentConfig) -> Result<(SympFormerConfig, SympFormerWeights), HarnessError> {
    if let Some(path) = &cfg.weights_file {
        return Ok(sympformer::read_weights(&mut BufReader::new(read_file(path)?))?);
    }
    let mut sc = SympFormerConfig::new(cfg.sf_layers, cfg.sf_heads, cfg.d, cfg.n, cfg.sf_vocab)?;
    sc.causal = cfg.causal;
    sc.attention = match cfg.system {
        SystemKind::Linear => AttentionKind::Linear,
        _ => AttentionKind::Softmax,
    };
    sc.method = SympMethod::from_name(cfg.integrator.name()).ok_or_else(|| ConfigError {
        line: None,
        key: "integrator".into(),
        message: "sympformer-forward needs plain_euler, conformal_euler or exp_euler".into(),
    })?;
    sc.validate()?;
    let weights = SympFormerWeights::random(&sc, cfg.seed)?;
    Ok((sc, weights))
}

fn tokens(cfg: &ExperimentConfig, sc: &SympFormerConfig) -> Result<Vec<Vec<usize>>, HarnessError> {
    if let Some(path) = &cfg.tokens_file {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        return Ok(sympformer::parse_tokens(&text)?);
    }
    let mut r = instances::rng(cfg.seed.wrapping_add(1));
    Ok((0..2)
        .map(|_| (0..sc.block_size).map(|_| r.random_range(0..sc.vocab_size)).collect())
        .collect())
}

fn logits_csv(logits: &[Matrix]) -> String {
    let vocab = logits.first().map_or(0, |m| m.ncols());
    let mut text = String::from("batch,position");
    for v in 0..vocab {
        let _ = write!(text, ",v{v}");
    }
    text.push('\n');
    for (b, m) in logits.iter().enumerate() {
        for i in 0..m.nrows() {
            let _ = write!(text, "{b},{i}");
            for v in m.row(i).iter() {
                let _ = write!(text, ",{v:.16e}");
            }
            text.push('\n');
        }
    }
    text
}

fn sympformer_forward(cfg: &ExperimentConfig, out: &mut Out) -> Result<Produced, HarnessError> {
    let (sc, weights) = sympformer_setup(cfg)?;
    let batch = tokens(cfg, &sc)?;
    let logits = match sympformer::forward(&batch, &weights, &sc) {
        Ok(l) => l,
        Err(e @ (accel_attn::Error::ScoreOverflow { .. } | accel_attn::Error::NonFinite(_))) => {
            return Ok((Vec::new(), Status::Failed(e.to_string()), vec![e.to_string()]));
        }
        Err(e) => return Err(e.into()),
    };
    out.write("logits.csv", &logits_csv(&logits))?;
    let mut notes = vec![
        format!(
            "{} layers, {} heads, d_model {}, vocab {}, method {}, attention {}, causal {}",
            sc.n_layers,
            sc.n_heads,
            sc.d_model,
            sc.vocab_size,
            sc.method.name(),
            sc.attention.name(),
            sc.causal
        ),
        format!(
            "logit shapes: {}",
            logits
                .iter()
                .map(|m| format!("{}x{}", m.nrows(), m.ncols()))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        format!(
            "mean cross-entropy vs uniform target: {:.6} (ln V = {:.6})",
            sympformer::cross_entropy_vs_uniform(&logits),
            (sc.vocab_size as f64).ln()
        ),
    ];
    let mut status = Status::Ok;
    if sc.causal {
        // change the final token of each sequence; earlier rows must not move
        let perturbed: Vec<Vec<usize>> = batch
            .iter()
            .map(|seq| {
                let mut s = seq.clone();
                if let Some(last) = s.last_mut() {
                    *last = (*last + 1) % sc.vocab_size;
                }
                s
            })
            .collect();
        let again = sympformer::forward(&perturbed, &weights, &sc)?;
        let leaks = logits
            .iter()
            .zip(&again)
            .filter(|(a, b)| a.nrows() > 1 && a.rows(0, a.nrows() - 1) != b.rows(0, b.nrows() - 1))
            .count();
        if leaks == 0 {
            notes.push("causality: prefix logits unchanged under a last-token perturbation".into());
        } else {
            status = Status::Failed(format!("causality violated in {leaks} sequences"));
            notes.push("causality: prefix logits changed under a last-token perturbation".into());
        }
    }
    Ok((Vec::new(), status, notes))
}

fn run_selftest(out: &mut Out) -> Result<Produced, HarnessError> {
    let outcomes = selftest::run_all();
    let notes: Vec<String> = outcomes.iter().map(|o| o.line()).collect();
    out.write("selftest.txt", &(notes.join("\n") + "\n"))?;
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    let status = if failed.is_empty() {
        Status::Ok
    } else {
        Status::Failed(format!("criteria {} failed", failed.join(", ")))
    };
    Ok((Vec::new(), status, notes))
}
