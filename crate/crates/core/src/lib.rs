pub mod cli;
pub mod embeddings;
pub mod error;
pub mod graphmatch;
pub mod isometry;
pub mod lap;
pub mod matrix;
pub mod pipelines;
pub mod procrustes;
pub mod sinkhorn;
pub mod synthetic;

pub use error::{Error, Result};
