pub mod dgp;
pub mod error;
pub mod harness;
pub mod io;
pub mod nuisance;
pub mod policy;
pub mod regress;
pub mod rlearner;
pub mod rng;
pub mod tau;
pub mod types;

pub use error::{Result, TauqError};
