//! Attentional set aggregation with two-stage training, bounding-box
//! association for point-cloud instance segmentation, and voxel
//! reconstruction losses, all on a small reverse-mode tensor engine.

pub mod aggregate;
pub mod assoc;
pub mod bonet;
pub mod error;
pub mod faset;
pub mod gradsuite;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
