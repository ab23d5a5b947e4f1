//! Trainable feed-forward spiking neural networks with temporal-hierarchy
//! initialization.
//!
//! The crate is organized bottom-up:
//!
//! * [`snn`]: discrete-time LIF simulation with dense or dilated causal
//!   convolution input maps and a leaky-integrator readout.
//! * [`autograd`]: backpropagation through time over a recorded [`snn::Tape`]
//!   with a box surrogate for the spike derivative, plus a finite-difference
//!   oracle.
//! * [`hierarchy`]: per-layer time-constant, kernel-size and dilation
//!   schedules.
//! * [`training`]: losses, regularizers, Adam with a linear learning-rate
//!   decay, the training loop and checkpoints.
//! * [`datasets`]: MTS-XOR generation, event binning, SHD/SSC loading, a dense
//!   cache format, augmentation and latency coding.

pub mod autograd;
pub mod datasets;
pub mod error;
pub mod hierarchy;
pub mod init;
pub mod snn;
pub mod training;

pub use error::{Result, SnnError};
pub use snn::{
    forward_pass, HiddenSpec, LayerKind, LayerParams, NetworkParams, NetworkSpec, SimGrid,
    SpikeMode, Tape, Trace,
};
