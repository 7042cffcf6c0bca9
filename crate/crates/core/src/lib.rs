pub mod adaptation;
pub mod backends;
pub mod error;
pub mod generator;
pub mod imageops;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod semantics;
pub mod toolkit;
pub mod warp;

pub use error::{Error, Result};
