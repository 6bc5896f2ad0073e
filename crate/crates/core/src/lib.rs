pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod normalize;
pub mod pipeline;
pub mod representations;
pub mod tagger;

pub use error::{Error, Result};
