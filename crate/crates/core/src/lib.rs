//! End-to-end mispronunciation detection on a deterministic synthetic corpus:
//! hybrid CTC-attention recognizer with input (posteriorgram) and label
//! (CBOW-smoothing) augmentation, a GOP baseline, and the evaluation stack.

pub mod acoustic;
pub mod ckpt;
pub mod corpus;
pub mod ctc;
pub mod error;
pub mod inventory;
pub mod io;
pub mod labelaug;
pub mod matrix;
pub mod mdeval;
pub mod mdmodel;
pub mod num;
pub mod numcore;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
pub use inventory::{PhoneInventory, Vocab};
pub use matrix::Matrix;
pub use num::Scalar;

/// Concrete matrix aliases: f32 for disk formats and training, f64 for tests
/// and verification.
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
