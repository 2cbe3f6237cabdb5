pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod config;
pub mod encoder;
pub mod explain;
pub mod graph;
pub mod mcts;
pub mod model;
pub mod prototype;
pub mod sampler;
pub mod study;
pub mod theorem;
pub mod train;
