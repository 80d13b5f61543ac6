//! Task harnesses built on `lsnn-core`: delayed cue and sequential pixel
//! classification, learning-to-learn regression and meta reinforcement
//! learning in a circular arena.

pub mod dataset;
pub mod delayed_cue;
pub mod error;
pub mod harness;
pub mod l2l;
pub mod rl;
pub mod seq_pixel;

pub use error::{Result, TaskError};
pub use harness::{MetricRow, Observer, TrainState, TrainingConfig};
