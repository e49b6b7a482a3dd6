//! Volumetric deformable heart-wall models, synthetic tagged-MRI cue
//! simulation, and learned recovery of dense 3D motion from sparse
//! apparent-motion cues.

pub mod error;
pub mod flow;
pub mod geometry;
pub mod msl;
pub mod net;
pub mod recover;
pub mod sequence;
pub mod sim;
pub mod train;
pub mod vec3;

pub use error::{Error, Result};
pub use geometry::{GridDims, MaterialGrid, ParameterFunctions, QuadMesh};
pub use sequence::{MotionSequence, NormMeta};
