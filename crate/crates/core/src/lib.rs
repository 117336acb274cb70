//! Under-bagging k-nearest-neighbor classification for imbalanced
//! multi-class data.

pub mod checks;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod kdtree;
pub mod knn;
pub mod methods;
pub mod metrics;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
