//! Numeric core, cells, gradient algorithms, tasks and training loops for
//! exact real-time recurrent learning with element-wise recurrent LSTMs.

pub mod copy_train;
pub mod elstm;
pub mod error;
pub mod felstm;
pub mod finite_diff;
pub mod fwp;
pub mod gradcheck;
pub mod loss;
pub mod numeric;
pub mod optim;
pub mod params;
pub mod rl;
pub mod rtrl;
pub mod tasks;
pub mod vanilla;

pub use error::{Error, Result};
