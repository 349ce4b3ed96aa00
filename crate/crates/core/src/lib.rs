pub mod autodiff;
pub mod ddm;
pub mod dense;
pub mod error;
pub mod evalcli;
pub mod fem;
pub mod loss;
pub mod meshgen;
pub mod mggnn;
pub mod partition;
pub mod sparse;
pub mod train;

pub use error::{Error, Result};
