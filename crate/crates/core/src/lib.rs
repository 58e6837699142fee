//! Exact posterior regression for multiscale, multi-type spatial data.

pub mod assembly;
pub mod basis;
pub mod dy;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mcmc;
pub mod par;
pub mod rng;
pub mod scoring;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
pub use par::ExecPolicy;
