//! Seeded problem instances used by the experiment commands.
//!
//! Weights share eigenvectors (`A = Q diag(a) Q^T`, `B = Q diag(b) Q^T`,
//! `V = B A`), which keeps `V` symmetric and `B` positive definite. Softmax
//! instances use a small mobility: the interaction energy is unbounded below,
//! and the accelerated field scales like `N^2`, so a large `B` sends the
//! accelerated flow into score overflow within a few time units.

use accel_attn::instances::{commuting_weights, gaussian_matrix, rng};
use accel_attn::{AttentionWeights, Ensemble, Matrix, Result};
use rand_chacha::ChaCha20Rng;

use crate::config::SystemKind;

pub const LINEAR_A: (f64, f64) = (0.5, 1.0);
pub const LINEAR_B: (f64, f64) = (0.5, 1.0);
pub const LINEAR_X_SCALE: f64 = 1.0;

pub const SOFTMAX_A: (f64, f64) = (0.3, 0.6);
pub const SOFTMAX_B: (f64, f64) = (1e-4, 2e-4);
pub const SOFTMAX_X_SCALE: f64 = 0.5;

/// Weights followed by initial positions, drawn from one seeded stream.
pub struct Instance {
    pub weights: AttentionWeights,
    pub x0: Matrix,
}

fn draw(r: &mut ChaCha20Rng, system: SystemKind, n: usize, d: usize) -> Result<Instance> {
    let (a, b, scale) = match system {
        SystemKind::Linear => (LINEAR_A, LINEAR_B, LINEAR_X_SCALE),
        SystemKind::Softmax | SystemKind::Baseline => (SOFTMAX_A, SOFTMAX_B, SOFTMAX_X_SCALE),
    };
    let weights = commuting_weights(r, d, a, b)?;
    let x0 = gaussian_matrix(r, n, d, scale);
    Ok(Instance { weights, x0 })
}

pub fn instance(system: SystemKind, seed: u64, n: usize, d: usize) -> Result<Instance> {
    draw(&mut rng(seed), system, n, d)
}

impl Instance {
    /// Particles at rest at time `t0`.
    pub fn at_rest(&self, t0: f64) -> Result<Ensemble> {
        Ensemble::at_rest(self.x0.clone(), t0)
    }
}
