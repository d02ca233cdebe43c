//! Regime-switching copula model with score-driven asymmetric Student-t
//! expected-utility allocation.

pub mod allocate;
pub mod ast;
pub mod error;
pub mod evaluate;
pub mod gas;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod mscopula;
pub mod optim;
pub mod quad;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
