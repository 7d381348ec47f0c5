//! Deterministic numerical core: parameter store, layers with exact analytic
//! gradients, Adam, and a finite-difference verifier.

pub mod adam;
pub mod gradcheck;
pub mod linear;
pub mod params;
pub mod recurrent;
pub mod softmax;

pub use adam::OptimizerState;
pub use gradcheck::grad_check;
pub use linear::Linear;
pub use params::ParamStore;
pub use recurrent::{BiGruCache, BiGruLayer, GruCell, GruStepCache};
pub use softmax::{log_softmax_backward, log_softmax_row, log_softmax_rows, softmax_row};
