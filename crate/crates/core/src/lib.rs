//! Estimate the 3D shape and viewpoint of an object from 2D landmarks.
//!
//! Shapes are modelled as sparse combinations of basis shapes, each allowed
//! its own rotation. Under a weak-perspective camera the 2D landmarks are
//! then linear in the `2 x 3` motion blocks `M_i`, and a spectral-norm
//! penalty turns the joint shape/viewpoint fit into a convex program solved
//! by ADMM ([`convex`]). Outliers are handled by [`robust`]; [`reconstruct`]
//! turns motion blocks back into a 3D shape; [`dictionary`] learns the basis
//! shapes; [`experiments`] holds the synthetic benchmarks. [`pipeline`]
//! strings the stages together, [`io`] defines the JSON file formats and
//! [`cli`] the `shapelift` command line.

pub mod cli;
pub mod convex;
pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lasso;
pub mod pipeline;
pub mod prox;
pub mod reconstruct;
pub mod robust;
pub mod shape;

pub use error::{Error, Result};
