pub mod attacks;
pub mod bounds;
pub mod data;
pub mod defense;
pub mod domain;
pub mod dp;
pub mod error;
pub mod mi;
pub mod nn;
pub mod rng;
pub mod workbench;

pub use error::{Error, Result};
