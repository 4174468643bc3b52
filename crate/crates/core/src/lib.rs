pub mod analysis;
pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod fock;
pub mod lattice;
pub mod pipeline;
pub mod wannier;

pub use error::{Error, Result};
