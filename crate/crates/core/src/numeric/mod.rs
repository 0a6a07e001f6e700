//! Numerical kernels shared by the model fits: dense SPD linear algebra,
//! the ReLU perceptron with per-subject parameter offsets, Adam, small
//! optimizers and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod optimize;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::check_gradient;
pub use linalg::{cholesky_solve, logdet_spd, Cholesky};
pub use mlp::{mlp_backward, mlp_forward, ForwardCache, Layer, MlpArchitecture, NetworkParams};

pub type DenseMatrix = nalgebra::DMatrix<f64>;
pub type DenseVector = nalgebra::DVector<f64>;

/// Deterministic generator used for every seeded operation.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
