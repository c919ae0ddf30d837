pub mod blocks;
pub mod cost;
pub mod error;
pub mod freq;
pub mod harness;
pub mod loda;
pub mod net;
pub mod params;
pub mod raw;
pub mod selftest;

pub use error::{CoreError, Result};
