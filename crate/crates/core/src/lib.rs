//! Reality-gap toolkit: estimate where a simulator and a physical system
//! disagree, forge correction kernels from those disagreements, and run a
//! simulator with the kernels applied.

pub mod atr;
pub mod error;
pub mod kernel;
pub mod lsq;
pub mod manager;
pub mod oned;
pub mod pipeline;
pub mod rng;
pub mod rollout;
pub mod sarsa;
pub mod state;
pub mod transition;
pub mod wire;

pub use error::{Error, Result};
