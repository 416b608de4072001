#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod corpus;
pub mod denoise;
pub mod generator;
pub mod numeric;
pub mod training;
pub mod user_encoder;
pub mod vocab;

pub use error::{Error, Result};
