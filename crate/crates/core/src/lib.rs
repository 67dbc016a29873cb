pub mod backend;
pub mod corpus;
pub mod embedding_heads;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
