pub mod cli;
pub mod data_io;
pub mod error;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod stats;
pub mod views;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Anatomical, AxisOrder, Volume, VolumeKind};
