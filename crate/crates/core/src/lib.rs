pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod joint;
pub mod nn;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::{Tape, Tensor, Var};
