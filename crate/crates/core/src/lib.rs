pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod rng;
pub mod smiles;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
