//! Safety filters from control barrier functions for control-affine systems:
//! the minimum-norm filter in closed form, location and classification of the
//! undesired equilibria the filter introduces on the safe-set boundary,
//! closed-form planar analysis, and a deterministic simulation runtime.

pub mod barrier;
pub mod bundled;
pub mod equilibria;
pub mod error;
pub mod filter;
pub mod linear_planar;
pub mod model;
pub mod samplers;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
