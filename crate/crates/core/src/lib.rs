//! Free energy, tilted excursion laws, exact renewal recursions and Monte Carlo
//! samplers for the longest excursion of a pinned polymer, together with the
//! diagnostics that compare it against the Gumbel law.

pub mod cli;
pub mod error;
pub mod extremes;
pub mod laws;
pub mod numeric;
pub mod renewal_dp;
pub mod sampler;
pub mod tilt;

pub use error::{Error, Result};
pub use laws::{ExcursionLaw, TailParams};
pub use tilt::{TiltOptions, TiltedModel};
