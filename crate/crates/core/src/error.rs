use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("simulation diverged at step {step}, neuron {neuron}: {quantity} = {value}")]
    Divergence {
        step: usize,
        neuron: usize,
        quantity: &'static str,
        value: f64,
    },

    #[error("non-finite gradient in {param} (first offending step {step})")]
    NonFiniteGradient { param: &'static str, step: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("rewiring invariant violated: {0}")]
    Rewire(String),

    #[error("replayed trajectory differs from the recorded one at step {step}")]
    ReplayMismatch { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
