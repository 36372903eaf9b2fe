pub mod cli;
pub mod config;
pub mod corpus;
pub mod effnet;
pub mod hmgchead;
pub mod error;
pub mod imagegray;
pub mod model;
pub mod modelfile;
pub mod plantsim;
pub mod taxonomy;
pub mod tensorcore;
pub mod trainer;

pub use error::{Error, Result};
