//! Recurrent networks of leaky integrate-and-fire neurons with adaptive
//! thresholds: simulation, surrogate-gradient BPTT, Dale-constrained
//! initialization, DEEP R rewiring, Adam and input encoders.

pub mod encode;
pub mod error;
pub mod grad;
pub mod init;
pub mod loss;
pub mod optim;
pub mod params;
pub mod rewire;
pub mod snn;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use grad::{backprop, pseudo_derivative, BackwardConfig, Cotangents, Gradients, InitialStateGrad};
pub use loss::{backward, LossKind, LossParts, LossSpec, RateUnit, Targets};
pub use optim::{AdamConfig, AdamState, LrSchedule};
pub use params::{NetworkParams, NeuronParams};
pub use rewire::{deepr_step, RewireConfig, RewireScope, RewireStats};
pub use snn::{replay, simulate, NetworkState, SimOutput, Simulator};
pub use tape::SimTape;
pub use tensor::{Delays, Mask, Matrix};
pub use train::{batch_gradient, BatchOutcome, Episode, OptimizerSpec, Trainer};
