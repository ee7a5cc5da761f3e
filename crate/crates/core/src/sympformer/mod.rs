//! Training-free forward pass of a transformer whose attention sublayer is
//! one step of the accelerated attention dynamics.
//!
//! Each block carries a momentum stream `y` next to the token features `x`.
//! The attention oracle is evaluated once per block; the time discretization
//! only changes the scalar prefactors `(zeta_1, zeta_2)` of the momentum update.

mod format;
mod weights;

pub use format::{parse_tokens, read_weights, write_weights, WEIGHTS_MAGIC};
pub use weights::{HeadWeights, LayerWeights, SympFormerWeights};

use crate::dynamics::{self, FieldPair, ScoreMatrix, DEFAULT_OVERFLOW_GUARD};
use crate::ensemble::symmetrized_product;
use crate::{Error, Matrix, Result};

/// Variance epsilon of every LayerNorm.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SympMethod {
    PlainEuler,
    ConformalEuler,
    ExpEuler,
}

impl SympMethod {
    pub fn name(self) -> &'static str {
        match self {
            SympMethod::PlainEuler => "plain_euler",
            SympMethod::ConformalEuler => "conformal_euler",
            SympMethod::ExpEuler => "exp_euler",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [SympMethod::PlainEuler, SympMethod::ConformalEuler, SympMethod::ExpEuler]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Softmax,
    Linear,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Softmax => "softmax",
            AttentionKind::Linear => "linear",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "softmax" => Some(AttentionKind::Softmax),
            "linear" => Some(AttentionKind::Linear),
            _ => None,
        }
    }
}

/// Per-layer scalar parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerScalars {
    pub h_x: f64,
    pub h_y: f64,
    pub m_mlp: f64,
    pub beta_mlp: f64,
    pub gamma_mlp: f64,
    /// Momentum retention of the plain Euler variant, in `(0, 1)`.
    pub plain_alpha: f64,
}

impl Default for LayerScalars {
    fn default() -> Self {
        Self {
            h_x: 0.1,
            h_y: 0.1,
            m_mlp: 0.5,
            beta_mlp: 0.5,
            gamma_mlp: 1.0,
            plain_alpha: 0.9,
        }
    }
}

impl LayerScalars {
    fn validate(&self, layer: usize) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        let checks = [
            ("h_x", self.h_x > 0.0 && self.h_x.is_finite()),
            ("h_y", self.h_y > 0.0 && self.h_y.is_finite()),
            ("m_mlp", open_unit(self.m_mlp)),
            ("beta_mlp", open_unit(self.beta_mlp)),
            ("gamma_mlp", self.gamma_mlp > 0.0 && self.gamma_mlp.is_finite()),
            ("plain_alpha", open_unit(self.plain_alpha)),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::InvalidParameter(format!("layer {layer}: {name} out of range"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SympFormerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Maximum sequence length (rows of the positional table).
    pub block_size: usize,
    pub vocab_size: usize,
    pub layers: Vec<LayerScalars>,
    /// Damping `eta(t) = c_log ln t + c_lin t`.
    pub c_log: f64,
    pub c_lin: f64,
    pub t0: f64,
    pub method: SympMethod,
    pub attention: AttentionKind,
    pub causal: bool,
}

impl SympFormerConfig {
    /// Config with default scalars: `h = 0.1`, `c_log = 1`, `c_lin = 0.1`,
    /// `t0 = 1`, exponential Euler, causal softmax attention.
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, block_size: usize, vocab_size: usize) -> Result<Self> {
        let cfg = Self {
            n_layers,
            n_heads,
            d_model,
            block_size,
            vocab_size,
            layers: vec![LayerScalars::default(); n_layers],
            c_log: 1.0,
            c_lin: 0.1,
            t0: 1.0,
            method: SympMethod::ExpEuler,
            attention: AttentionKind::Softmax,
            causal: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.block_size == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidParameter("n_heads, d_model, block_size and vocab_size must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidParameter(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.layers.len() != self.n_layers {
            return Err(Error::InvalidParameter(format!(
                "{} layer scalar sets for {} layers",
                self.layers.len(),
                self.n_layers
            )));
        }
        for (l, s) in self.layers.iter().enumerate() {
            s.validate(l)?;
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.c_log) && positive(self.c_lin) && positive(self.t0)) {
            return Err(Error::InvalidParameter("c_log, c_lin and t0 must be > 0".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Token features, attention momentum and layer time.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub x: Matrix,
    pub y: Matrix,
    pub t: f64,
}

/// Momentum prefactors `(zeta_1, zeta_2)` of the update
/// `y <- zeta_1 y + h_Y zeta_2 G` at layer time `t_k`.
///
/// `alpha` is the learned retention scalar used only by plain Euler.
pub fn zeta_coeffs(method: SympMethod, c_log: f64, c_lin: f64, t_k: f64, h_y: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(t_k.is_finite() && t_k > 0.0) {
        return Err(Error::Domain(format!("layer time must be > 0, got {t_k}")));
    }
    if !(h_y.is_finite() && h_y >= 0.0) {
        return Err(Error::Domain(format!("h_Y must be >= 0, got {h_y}")));
    }
    Ok(match method {
        SympMethod::PlainEuler => (alpha, 1.0),
        SympMethod::ConformalEuler => (1.0 - (c_log / t_k + c_lin) * h_y, 1.0),
        SympMethod::ExpEuler => {
            let d_eta = c_log * (h_y / t_k).ln_1p() + c_lin * h_y;
            // (1 - e^{-d_eta}) / alpha_eff with alpha_eff = d_eta / h_Y
            let zeta_2 = if d_eta == 0.0 {
                h_y
            } else {
                -(-d_eta).exp_m1() * h_y / d_eta
            };
            ((-d_eta).exp(), zeta_2)
        }
    })
}

/// Averaged bilinear form `(1/H) sum_h sym(K_h^T Q_h)` of the heads.
fn averaged_form(layer: &LayerWeights) -> Result<Matrix> {
    let mut a = symmetrized_product(&layer.heads[0].q, &layer.heads[0].k)?;
    for head in &layer.heads[1..] {
        a += symmetrized_product(&head.q, &head.k)?;
    }
    Ok(a / layer.heads.len() as f64)
}

/// Evaluates `(F, G)` for one block. Pre-exponential scores are averaged
/// across heads; with `causal`, position `i` only sees `j <= i`.
pub fn attention_oracle(x: &Matrix, y: &Matrix, layer: &LayerWeights, cfg: &SympFormerConfig) -> Result<FieldPair> {
    if x.ncols() != cfg.d_model || y.shape() != x.shape() {
        return Err(Error::Dimension(format!(
            "block state {:?} / {:?} for d_model {}",
            x.shape(),
            y.shape(),
            cfg.d_model
        )));
    }
    let a = averaged_form(layer)?;
    let value = (&layer.value + layer.value.transpose()) * 0.5;
    let logits = x * &a * x.transpose();
    Ok(match cfg.attention {
        AttentionKind::Softmax => {
            let scores = ScoreMatrix::from_logits(&logits, DEFAULT_OVERFLOW_GUARD, cfg.causal)?;
            dynamics::softmax_fields_from_scores(scores, x, y, &a, &value)
        }
        AttentionKind::Linear => dynamics::linear_fields_from_scores(&logits, x, y, &a, &value, cfg.causal),
    })
}

/// Row-wise LayerNorm without bias: `gain * (x - mean) / sqrt(var + eps)`.
pub fn layer_norm(x: &Matrix, gain: &crate::Vector) -> Matrix {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / d;
        row.add_scalar_mut(-mean);
        let var = row.norm_squared() / d;
        row /= (var + LAYER_NORM_EPS).sqrt();
        row.component_mul_assign(&gain.transpose());
    }
    out
}

/// Tanh approximation of GELU.
pub fn gelu(v: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh())
}

fn mlp(x: &Matrix, layer: &LayerWeights) -> Matrix {
    let hidden = (x * layer.w_in.transpose()).map(gelu);
    hidden * layer.w_out.transpose()
}

/// One accelerated attention + MLP block.
pub fn layer_forward(state: &BlockState, l: usize, weights: &SympFormerWeights, cfg: &SympFormerConfig) -> Result<BlockState> {
    let layer = weights
        .layers
        .get(l)
        .ok_or_else(|| Error::InvalidParameter(format!("layer index {l} out of range")))?;
    let s = cfg
        .layers
        .get(l)
        .ok_or_else(|| Error::InvalidParameter(format!("no scalars for layer {l}")))?;
    let fields = attention_oracle(&state.x, &state.y, layer, cfg)?;
    let (z1, z2) = zeta_coeffs(cfg.method, cfg.c_log, cfg.c_lin, state.t, s.h_y, s.plain_alpha)?;
    let y = &state.y * z1 + &fields.g * (s.h_y * z2);
    let x_half = &state.x + &fields.f * s.h_x;
    let y_half = layer_norm(&y, &layer.ln_y_gain);
    let x_tilde = layer_norm(&x_half, &layer.ln_gain) + &y_half * s.m_mlp;
    let d = mlp(&x_tilde, layer);
    let y = layer_norm(&(&y_half * s.beta_mlp + d * s.gamma_mlp), &layer.ln_v_gain);
    let x = x_half + &y;
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("block {l} output")));
    }
    Ok(BlockState { x, y, t: state.t + s.h_x })
}

/// Embeds one token sequence: `TokEmb + PosEmb`.
pub fn embed(tokens: &[usize], weights: &SympFormerWeights, cfg: &SympFormerConfig) -> Result<Matrix> {
    let n = tokens.len();
    if n == 0 || n > cfg.block_size {
        return Err(Error::InvalidParameter(format!(
            "sequence length {n} outside 1..={}",
            cfg.block_size
        )));
    }
    if let Some((pos, tok)) = tokens.iter().enumerate().find(|(_, &t)| t >= cfg.vocab_size) {
        return Err(Error::InvalidParameter(format!(
            "token {tok} at position {pos} outside vocabulary of size {}",
            cfg.vocab_size
        )));
    }
    Ok(Matrix::from_fn(n, cfg.d_model, |i, j| {
        weights.tok_emb[(tokens[i], j)] + weights.pos_emb[(i, j)]
    }))
}

/// Logits (`N x V`) of a single sequence.
pub fn forward_sequence(tokens: &[usize], weights: &SympFormerWeights, cfg: &SympFormerConfig) -> Result<Matrix> {
    let x = embed(tokens, weights, cfg)?;
    let mut state = BlockState {
        y: Matrix::zeros(x.nrows(), x.ncols()),
        x,
        t: cfg.t0,
    };
    for l in 0..cfg.n_layers {
        state = layer_forward(&state, l, weights, cfg)?;
    }
    Ok(layer_norm(&state.x, &weights.ln_f_gain) * weights.lm_head.transpose())
}

/// Logits for each batch row; rows are independent.
pub fn forward(batch: &[Vec<usize>], weights: &SympFormerWeights, cfg: &SympFormerConfig) -> Result<Vec<Matrix>> {
    cfg.validate()?;
    weights.check_shapes(cfg)?;
    batch.iter().map(|row| forward_sequence(row, weights, cfg)).collect()
}

/// Mean cross-entropy of the predicted distributions against the uniform
/// distribution over the vocabulary.
pub fn cross_entropy_vs_uniform(logits: &[Matrix]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for m in logits {
        for row in m.row_iter() {
            let max = row.max();
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row.mean();
            count += 1;
        }
    }
    total / count as f64
}
