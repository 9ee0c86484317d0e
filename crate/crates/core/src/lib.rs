//! Topology-preserving dynamic Gaussian splatting.
//!
//! One Gaussian is bound to each vertex of a fixed-topology quad mesh. The
//! mesh is tracked through a multi-view sequence by optimizing the Gaussians
//! against the images under rigidity and smoothness priors; per-frame meshes
//! come out by normal expansion and textures by UV-space densification and
//! barycentric baking.

pub mod cli;
pub mod densify;
pub mod error;
pub mod extract;
pub mod image;
pub mod io;
pub mod loss;
pub mod math;
pub mod mesh;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod synth;

pub use error::{Error, Result};
