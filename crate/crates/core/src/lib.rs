//! Accelerated attention dynamics.
//!
//! Tokens are treated as particles carrying a position `X_i` and a momentum
//! `Y_i`. The linear and softmax self-attention flows are lifted to damped
//! Hamiltonian systems on the particle ensemble and integrated with
//! oracle-preserving time discretizations. The crate also ships the
//! moment ODEs that describe the linear system exactly for elliptically
//! contoured data, and a deterministic forward pass of a transformer whose
//! blocks are built from these discretizations.

pub mod damping;
pub mod dynamics;
pub mod elliptic;
pub mod ensemble;
mod error;
pub mod instances;
pub mod integrators;
pub mod quadrature;
pub mod sympformer;

pub use damping::DampingSchedule;
pub use dynamics::{FieldPair, LinearAttention, ScoreMatrix, SoftmaxAttention};
pub use ensemble::{AttentionWeights, Ensemble};
pub use error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
