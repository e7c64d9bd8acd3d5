pub mod cohort;
pub mod error;
pub mod evalkit;
pub mod numkit;
pub mod probe;
pub mod radiomics;
pub mod retrieval;
pub mod rng;
pub mod scorer;
pub mod setenc;

pub use error::{Error, Result};
