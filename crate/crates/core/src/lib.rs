pub mod arith;
pub mod cli;
pub mod error;
pub mod gibbs;
pub mod ising1d;
pub mod ldp;
pub mod multiprime;
pub mod observable;
pub mod oracle;
pub mod verify;

pub use error::{Error, Result};
