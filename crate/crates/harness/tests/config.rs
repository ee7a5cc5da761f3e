use accel_attn::integrators::Method;
use accel_attn_harness::config::{parse_config, Command, ExperimentConfig, KEYS};
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let commands = prop::sample::select(Command::ALL.to_vec());
    let systems = prop::sample::select(vec!["linear", "softmax", "baseline"]);
    let dampings = prop::sample::select(vec!["constant", "polynomial", "loglinear", "zero"]);
    let methods = prop::sample::select(Method::ALL.to_vec());
    (
        (commands, systems, 1usize..500, 1usize..16, 0usize..100_000, 1e-6f64..1.0, any::<u64>()),
        (dampings, 0.0f64..10.0, 0.0f64..10.0, 1e-3f64..10.0, methods, any::<bool>(), 1e-3f64..=1.0),
        (any::<bool>(), 1usize..100, "[a-z][a-z0-9_/]{0,12}", any::<bool>(), any::<bool>(), 0usize..6, 1usize..500),
    )
        .prop_map(
            |((cmd, sys, n, d, steps, h, seed), (damp, m, r, t0, method, ratio, c), (we, every, dir, log, causal, layers, vocab))| {
                let mut cfg = ExperimentConfig::default();
                cfg.command = cmd;
                let set = |cfg: &mut ExperimentConfig, k: &str, v: String| cfg.set(k, &v, None).unwrap();
                set(&mut cfg, "system", sys.into());
                cfg.n = n;
                cfg.d = d;
                cfg.steps = steps;
                cfg.h = h;
                cfg.seed = seed;
                set(&mut cfg, "damping", damp.into());
                cfg.damping_m = m;
                cfg.damping_r = r;
                cfg.damping_t0 = t0;
                cfg.integrator = method;
                set(&mut cfg, "nesterov_alpha", if ratio { "ratio" } else { "constant" }.into());
                cfg.nesterov_c = c;
                cfg.worked_example = we;
                cfg.record_every = every;
                set(&mut cfg, "out_dir", dir.clone());
                cfg.log_scale = log;
                if log {
                    set(&mut cfg, "weights_file", format!("{dir}.w"));
                }
                cfg.causal = causal;
                cfg.sf_layers = layers;
                cfg.sf_vocab = vocab;
                cfg
            },
        )
        .prop_filter("cross-field checks", |cfg| cfg.validate().is_ok())
}

proptest! {
    #[test]
    fn text_round_trip(cfg in arb_config()) {
        let back = parse_config(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn empty_file_gives_defaults() {
    let cfg = parse_config("# nothing here\n\n").unwrap();
    for (k, v) in KEYS {
        let one = parse_config(&format!("{k} = {v}\n")).unwrap();
        assert_eq!(one, cfg, "default of `{k}`");
    }
}

#[test]
fn errors_report_line_and_key() {
    let e = parse_config("n = 4\n\n# c\nh = -1\n").unwrap_err();
    assert_eq!(e.line, Some(4));
    assert_eq!(e.key, "h");
    assert!(e.to_string().contains("line 4"));

    let e = parse_config("seed = -3").unwrap_err();
    assert_eq!((e.line, e.key.as_str()), (Some(1), "seed"));

    let e = parse_config("steps = 10\nsteps = 20").unwrap_err();
    assert_eq!(e.line, Some(2));

    let e = parse_config("no equals sign").unwrap_err();
    assert_eq!(e.line, Some(1));

    let e = parse_config("integrator = leapfrog").unwrap_err();
    assert!(e.message.contains("leapfrog"));
}

#[test]
fn zero_steps_is_valid() {
    let cfg = parse_config("steps = 0").unwrap();
    assert_eq!(cfg.steps, 0);
    cfg.validate().unwrap();
}
