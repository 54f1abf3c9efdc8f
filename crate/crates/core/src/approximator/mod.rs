//! Function approximators: MLPs, Adam, and Polyak target tracking.

mod adam;
mod mlp;

pub use adam::Adam;
pub use mlp::{polyak, softplus, HiddenActivation, Mlp, MlpSpec, OutputActivation, Tape};
