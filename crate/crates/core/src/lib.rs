//! Spherelets: local spherical PCA for manifold approximation, denoising and
//! visualization.
//!
//! The building block is [`spca::fit_sphere`], a closed-form least-squares
//! sphere fit inside the top principal subspace of a point set. On top of it:
//!
//! * [`model::SphereletModel`] partitions space by principal-component signs
//!   and fits one sphere (or plane) per cell;
//! * [`denoise`] shifts points toward Gaussian neighbourhood means and projects
//!   them onto locally fitted spheres;
//! * [`embed`] builds tSNE affinities from local spherical distances.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod datasets;
pub mod denoise;
pub mod embed;
pub mod error;
pub mod model;
pub mod numeric;
pub mod partition;
pub mod spca;

/// Samples in rows, coordinates in columns.
pub type DataMatrix = nalgebra::DMatrix<f64>;

pub use error::{Error, Result};
pub use model::SphereletModel;
pub use partition::{Fitter, Piece, TreeConfig};
pub use spca::{fit_sphere, Hyperplane, Spherelet};
