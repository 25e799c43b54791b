//! Markup-style soft-token tags for in-context learning.

pub mod backend;
pub mod data;
pub mod error;
pub mod eval;
pub mod markup;
pub mod retrieval;
pub mod seed;
pub mod warmup;

pub use error::{Error, Result};
