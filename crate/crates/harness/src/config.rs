//! `key = value` experiment configuration.

use std::fmt;
use std::path::PathBuf;

use accel_attn::integrators::{Method, NesterovAlpha};
use accel_attn::DampingSchedule;

/// Environment variable that replaces the default output directory.
pub const OUT_DIR_ENV: &str = "ACCEL_ATTN_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    VerifyElliptic,
    EnergyDecay,
    CompareIntegrators,
    SympformerForward,
    Selftest,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::VerifyElliptic,
        Command::EnergyDecay,
        Command::CompareIntegrators,
        Command::SympformerForward,
        Command::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::VerifyElliptic => "verify-elliptic",
            Command::EnergyDecay => "energy-decay",
            Command::CompareIntegrators => "compare-integrators",
            Command::SympformerForward => "sympformer-forward",
            Command::Selftest => "selftest",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Linear,
    Softmax,
    Baseline,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Linear => "linear",
            SystemKind::Softmax => "softmax",
            SystemKind::Baseline => "baseline",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [SystemKind::Linear, SystemKind::Softmax, SystemKind::Baseline]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DampingKind {
    Constant,
    Polynomial,
    LogLinear,
    Zero,
}

impl DampingKind {
    pub fn name(self) -> &'static str {
        match self {
            DampingKind::Constant => "constant",
            DampingKind::Polynomial => "polynomial",
            DampingKind::LogLinear => "loglinear",
            DampingKind::Zero => "zero",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [DampingKind::Constant, DampingKind::Polynomial, DampingKind::LogLinear, DampingKind::Zero]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    Ratio,
    Constant,
}

/// Fully validated experiment settings. See [`KEYS`] for the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub system: SystemKind,
    pub n: usize,
    pub d: usize,
    pub steps: usize,
    pub h: f64,
    pub seed: u64,
    pub damping: DampingKind,
    pub damping_m: f64,
    pub damping_r: f64,
    pub damping_t0: f64,
    pub integrator: Method,
    pub nesterov_alpha: AlphaMode,
    pub nesterov_c: f64,
    pub worked_example: bool,
    pub record_every: usize,
    pub out_dir: PathBuf,
    pub log_scale: bool,
    pub weights_file: Option<PathBuf>,
    pub tokens_file: Option<PathBuf>,
    pub sf_layers: usize,
    pub sf_heads: usize,
    pub sf_vocab: usize,
    pub causal: bool,
}

/// Every accepted key with its default, in serialization order.
pub const KEYS: [(&str, &str); 24] = [
    ("command", "simulate"),
    ("system", "softmax"),
    ("n", "16"),
    ("d", "2"),
    ("steps", "1000"),
    ("h", "0.001"),
    ("seed", "0"),
    ("damping", "constant"),
    ("damping_m", "1.0"),
    ("damping_r", "3.0"),
    ("damping_t0", "1.0"),
    ("integrator", "exp_euler"),
    ("nesterov_alpha", "ratio"),
    ("nesterov_c", "0.9"),
    ("worked_example", "false"),
    ("record_every", "10"),
    ("out_dir", "out"),
    ("log_scale", "false"),
    ("weights_file", ""),
    ("tokens_file", ""),
    ("sf_layers", "2"),
    ("sf_heads", "1"),
    ("sf_vocab", "32"),
    ("causal", "true"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line of the offending entry; `None` for command-line overrides
    /// and cross-field checks.
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_uint(line: Option<usize>, key: &str, v: &str) -> Result<u64, ConfigError> {
    match v.parse::<u64>() {
        Ok(x) => Ok(x),
        Err(_) => match v.parse::<i128>() {
            Ok(_) => Err(err(line, key, format!("value {v} is out of range for an unsigned 64-bit integer"))),
            Err(_) => Err(err(line, key, format!("expected an unsigned integer, got `{v}`"))),
        },
    }
}

fn parse_count(line: Option<usize>, key: &str, v: &str, min: u64) -> Result<usize, ConfigError> {
    let x = parse_uint(line, key, v)?;
    if x < min {
        return Err(err(line, key, format!("value {x} is out of range (must be >= {min})")));
    }
    usize::try_from(x).map_err(|_| err(line, key, format!("value {x} is too large")))
}

fn parse_real(line: Option<usize>, key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| err(line, key, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(err(line, key, format!("value {v} is not finite")));
    }
    Ok(x)
}

fn parse_bool(line: Option<usize>, key: &str, v: &str) -> Result<bool, ConfigError> {
    v.parse()
        .map_err(|_| err(line, key, format!("expected true or false, got `{v}`")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = ExperimentConfig {
            command: Command::Simulate,
            system: SystemKind::Softmax,
            n: 16,
            d: 2,
            steps: 1000,
            h: 1e-3,
            seed: 0,
            damping: DampingKind::Constant,
            damping_m: 1.0,
            damping_r: 3.0,
            damping_t0: 1.0,
            integrator: Method::ExpEuler,
            nesterov_alpha: AlphaMode::Ratio,
            nesterov_c: 0.9,
            worked_example: false,
            record_every: 10,
            out_dir: PathBuf::from("out"),
            log_scale: false,
            weights_file: None,
            tokens_file: None,
            sf_layers: 2,
            sf_heads: 1,
            sf_vocab: 32,
            causal: true,
        };
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.out_dir = PathBuf::from(dir);
        }
        cfg
    }
}

impl ExperimentConfig {
    /// Sets one key; `line` is reported in errors.
    pub fn set(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "command" => {
                self.command = Command::from_name(v).ok_or_else(|| err(line, key, format!("unknown command `{v}`")))?
            }
            "system" => {
                self.system = SystemKind::from_name(v).ok_or_else(|| err(line, key, format!("unknown system `{v}`")))?
            }
            "n" => self.n = parse_count(line, key, v, 1)?,
            "d" => self.d = parse_count(line, key, v, 1)?,
            "steps" => self.steps = parse_count(line, key, v, 0)?,
            "h" => {
                self.h = parse_real(line, key, v)?;
                if self.h <= 0.0 {
                    return Err(err(line, key, "step size is out of range (must be > 0)"));
                }
            }
            "seed" => self.seed = parse_uint(line, key, v)?,
            "damping" => {
                self.damping =
                    DampingKind::from_name(v).ok_or_else(|| err(line, key, format!("unknown damping `{v}`")))?
            }
            "damping_m" | "damping_r" | "damping_t0" => {
                let x = parse_real(line, key, v)?;
                if x < 0.0 {
                    return Err(err(line, key, format!("value {x} is out of range (must be >= 0)")));
                }
                match key {
                    "damping_m" => self.damping_m = x,
                    "damping_r" => self.damping_r = x,
                    _ => self.damping_t0 = x,
                }
            }
            "integrator" => {
                self.integrator =
                    Method::from_name(v).ok_or_else(|| err(line, key, format!("unknown integrator `{v}`")))?
            }
            "nesterov_alpha" => {
                self.nesterov_alpha = match v {
                    "ratio" => AlphaMode::Ratio,
                    "constant" => AlphaMode::Constant,
                    _ => return Err(err(line, key, format!("expected ratio or constant, got `{v}`"))),
                }
            }
            "nesterov_c" => {
                let c = parse_real(line, key, v)?;
                if !(c > 0.0 && c <= 1.0) {
                    return Err(err(line, key, format!("value {c} is out of range (must lie in (0, 1])")));
                }
                self.nesterov_c = c;
            }
            "worked_example" => self.worked_example = parse_bool(line, key, v)?,
            "record_every" => self.record_every = parse_count(line, key, v, 1)?,
            "out_dir" => {
                if v.is_empty() {
                    return Err(err(line, key, "output directory must not be empty"));
                }
                self.out_dir = PathBuf::from(v);
            }
            "log_scale" => self.log_scale = parse_bool(line, key, v)?,
            "weights_file" => self.weights_file = opt_path(v),
            "tokens_file" => self.tokens_file = opt_path(v),
            "sf_layers" => self.sf_layers = parse_count(line, key, v, 0)?,
            "sf_heads" => self.sf_heads = parse_count(line, key, v, 1)?,
            "sf_vocab" => self.sf_vocab = parse_count(line, key, v, 1)?,
            "causal" => self.causal = parse_bool(line, key, v)?,
            _ => return Err(err(line, key, "unknown key")),
        }
        Ok(())
    }

    /// Cross-field checks that single keys cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.damping != DampingKind::Constant && self.damping != DampingKind::Zero && self.damping_t0 <= 0.0 {
            return Err(err(None, "damping_t0", "polynomial and log-linear damping need t0 > 0"));
        }
        if self.command == Command::SympformerForward {
            if self.system == SystemKind::Baseline {
                return Err(err(None, "system", "sympformer-forward needs linear or softmax attention"));
            }
            if !matches!(self.integrator, Method::PlainEuler | Method::ConformalEuler | Method::ExpEuler) {
                return Err(err(
                    None,
                    "integrator",
                    "sympformer-forward supports plain_euler, conformal_euler and exp_euler",
                ));
            }
            if self.weights_file.is_none() && !self.d.is_multiple_of(self.sf_heads) {
                return Err(err(None, "sf_heads", "d must be divisible by sf_heads"));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> accel_attn::Result<DampingSchedule> {
        match self.damping {
            DampingKind::Constant => DampingSchedule::constant_from(self.damping_m, self.damping_t0),
            DampingKind::Polynomial => DampingSchedule::polynomial(self.damping_r, self.damping_t0),
            DampingKind::LogLinear => DampingSchedule::log_linear(self.damping_r, self.damping_m, self.damping_t0),
            DampingKind::Zero => Ok(DampingSchedule::Zero),
        }
    }

    pub fn nesterov(&self) -> NesterovAlpha {
        match self.nesterov_alpha {
            AlphaMode::Ratio => NesterovAlpha::Ratio,
            AlphaMode::Constant => NesterovAlpha::Constant(self.nesterov_c),
        }
    }

    fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "command" => self.command.name().into(),
            "system" => self.system.name().into(),
            "n" => self.n.to_string(),
            "d" => self.d.to_string(),
            "steps" => self.steps.to_string(),
            "h" => format!("{:?}", self.h),
            "seed" => self.seed.to_string(),
            "damping" => self.damping.name().into(),
            "damping_m" => format!("{:?}", self.damping_m),
            "damping_r" => format!("{:?}", self.damping_r),
            "damping_t0" => format!("{:?}", self.damping_t0),
            "integrator" => self.integrator.name().into(),
            "nesterov_alpha" => match self.nesterov_alpha {
                AlphaMode::Ratio => "ratio".into(),
                AlphaMode::Constant => "constant".into(),
            },
            "nesterov_c" => format!("{:?}", self.nesterov_c),
            "worked_example" => self.worked_example.to_string(),
            "record_every" => self.record_every.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "log_scale" => self.log_scale.to_string(),
            "weights_file" => path(&self.weights_file),
            "tokens_file" => path(&self.tokens_file),
            "sf_layers" => self.sf_layers.to_string(),
            "sf_heads" => self.sf_heads.to_string(),
            "sf_vocab" => self.sf_vocab.to_string(),
            "causal" => self.causal.to_string(),
            _ => unreachable!("serializing unknown key {key}"),
        }
    }

    /// Serializes every key; `parse_config` of the result reproduces `self`.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k} = {}\n", self.value_of(k))).collect()
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored;
/// omitted keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(Some(line), content, "expected `key = value`"))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(Some(line), key, "duplicate key"));
        }
        cfg.set(key, value.trim(), Some(line))?;
    }
    cfg.validate()?;
    Ok(cfg)
}
