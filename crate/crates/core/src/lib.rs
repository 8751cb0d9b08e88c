//! Higher-order tensor-train recurrent networks for forecasting nonlinear dynamics.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense `f64` tensors and a define-by-run tape.
//! - [`tt`]: tensor-train transition weights, dense reconstruction, parameter accounting.
//! - [`cells`]: RNN, LSTM, MRNN, MLSTM, HORNN, HOT-RNN and HOT-LSTM cells.
//! - [`seq2seq`]: encoder/decoder stacks with closed-loop decoding.
//! - [`dynamics`]: Genz difference maps and the Lorenz system.
//! - [`data`]: CSV ingestion, imputation, resampling, windowing and splits.
//! - [`train`]: sequence loss, RMSProp, early stopping, grid search.
//! - [`eval`]: RMSE by horizon and sensitivity sweeps.
//! - [`experiment`]: declarative experiment configs and the run pipeline used by the CLI.

pub mod autodiff;
pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod par;
pub mod seq2seq;
pub mod tensor;
pub mod train;
pub mod tt;

pub use error::{Error, Result};
