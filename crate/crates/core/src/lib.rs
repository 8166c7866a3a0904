pub mod abi;
pub mod adapter;
pub mod api;
pub mod backends;
pub mod engine;
pub mod error;
pub mod transport;

pub use error::{Error, Result};
