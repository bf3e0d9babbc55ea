//! Distributed robust Kalman filtering for linear systems with multiplicative
//! process noise, fading measurements and noisy inter-sensor channels.
//!
//! The crate is `no_std` with `alloc`. Simulation, file formats and the
//! command line live in `drkf-sim`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod channel;
pub mod conditions;
pub mod drkf;
pub mod error;
pub mod linalg;
pub mod model;
pub mod moment;
pub mod swf;

pub use channel::{Channel, ChannelBounds, Link, LinkNoiseSampler, Noiseless, SamplerMode};
pub use drkf::{Drkf, FilterSetup, SensorState};
pub use error::{Error, Result};
pub use model::{
    EstimatePair, MatrixSeq, ModelLimits, NoiseBounds, ScalarSeq, SensorGraph, SensorSpec,
    SystemModel,
};
pub use moment::MomentTrace;
pub use swf::{SolverOptions, Swf, SwfSchedule};

pub use nalgebra::{DMatrix, DVector};
