pub mod adapter;
pub mod artifact;
pub mod car;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod corpus;
pub mod crm;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod providers;
pub mod recommender;
pub mod sare;
pub mod synth;

pub use error::{Error, Result};
