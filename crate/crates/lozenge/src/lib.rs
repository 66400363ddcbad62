//! Random lozenge tilings of polygonal domains through nonintersecting
//! Bernoulli walks.
//!
//! * [`domain`]: polygons, slices, particle configurations.
//! * [`counting`]: exact counts and independent oracles.
//! * [`sampler`]: exact, drifted and Markov-chain samplers.
//! * [`limit_shape`]: the surface-tension maximizer and its complex slope.
//! * [`loop_eq`]: numerical checks of the discrete loop equations.
//! * [`fluctuations`]: height fluctuations against the Gaussian free field.

pub mod counting;
pub mod domain;
pub mod error;
pub mod fluctuations;
pub mod limit_shape;
pub mod loop_eq;
pub mod linalg;
pub mod lobachevsky;
pub mod mesh;
pub mod rational;
pub mod sampler;
pub mod weights;

pub use error::{Error, Result};
