use std::path::PathBuf;
use std::process::ExitCode;

use accel_attn_harness::config::{parse_config, Command, ConfigError, ExperimentConfig};
use accel_attn_harness::run::{run, HarnessError};
use clap::Parser;

/// Accelerated attention dynamics: experiments and self-test.
///
/// Settings come from the config file, then the positional command, then
/// `key=value` overrides, then the flags below.
#[derive(Parser, Debug)]
#[command(name = "accel-attn", version)]
struct Cli {
    /// simulate, verify-elliptic, energy-decay, compare-integrators,
    /// sympformer-forward or selftest
    command: Option<String>,

    /// `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,

    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// suppress the summary on stdout
    #[arg(long)]
    quiet: bool,

    /// `key=value` overrides
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

/// Flags given after the first override end up in `overrides`; pull them back out.
fn split_flags(cli: &mut Cli) -> Result<(), String> {
    let mut rest = Vec::new();
    if cli.command.as_deref().is_some_and(|c| c.contains('=')) {
        rest.extend(cli.command.take());
    }
    let mut args = std::mem::take(&mut cli.overrides).into_iter();
    while let Some(arg) = args.next() {
        let (flag, inline) = match arg.split_once('=') {
            Some((f, v)) if f.starts_with("--") => (f.to_string(), Some(v.to_string())),
            _ => (arg.clone(), None),
        };
        let mut value = |name: &str| {
            inline
                .clone()
                .or_else(|| args.next())
                .ok_or_else(|| format!("{name} needs a value"))
        };
        match flag.as_str() {
            "--quiet" => cli.quiet = true,
            "--config" => cli.config = Some(value("--config")?.into()),
            "--out" => cli.out = Some(value("--out")?.into()),
            "--seed" => {
                let v = value("--seed")?;
                cli.seed = Some(v.parse().map_err(|_| format!("--seed: `{v}` is not a non-negative integer"))?);
            }
            f if f.starts_with("--") => return Err(format!("unknown flag `{f}`")),
            _ => rest.push(arg),
        }
    }
    cli.overrides = rest;
    Ok(())
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let show = |e: ConfigError| e.to_string();
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(c) = &cli.command {
        cfg.command = Command::from_name(c).ok_or_else(|| format!("unknown command `{c}`"))?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| format!("override `{o}` is not of the form key=value"))?;
        cfg.set(k.trim(), v.trim(), None).map_err(show)?;
    }
    if let Some(dir) = &cli.out {
        cfg.set("out_dir", &dir.display().to_string(), None).map_err(show)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(show)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    let cfg = match split_flags(&mut cli).and_then(|()| build_config(&cli)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(output) => {
            let report = &output.report;
            if !cli.quiet {
                println!("command: {}", cfg.command.name());
                for note in &report.notes {
                    println!("  {note}");
                }
                if !report.series.is_empty() {
                    let s = &report.summary;
                    println!(
                        "  final energy {:.6e}, min energy {:.6e}, {} oracle calls",
                        s.final_energy, s.min_energy, s.total_oracle_calls
                    );
                }
                println!("  wall time {:.3} s", report.summary.wall_time_s);
                for f in &output.files {
                    println!("  wrote {}", f.display());
                }
            }
            match &report.status {
                accel_attn_harness::report::Status::Ok => ExitCode::SUCCESS,
                accel_attn_harness::report::Status::Failed(why) => {
                    eprintln!("failed: {why}");
                    ExitCode::FAILURE
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
