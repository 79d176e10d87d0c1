//! A desk-scale workbench for rough differential equations driven by the
//! Gaussian rough-path lift of fractional Brownian motion with Hurst index
//! between 1/3 and 1/2.
//!
//! The crate provides, layer by layer:
//!
//! - [`grid`]: time grids, sampled paths, two-parameter fields, and the grid
//!   versions of Hölder and variation seminorms;
//! - [`fbm`]: the Volterra kernel, exact samplers, and the past/future
//!   conditional decomposition of the noise;
//! - [`cmspace`]: the Cameron-Martin inner product, the kernel adjoint, and
//!   projections onto the future-adapted subspace;
//! - [`roughpath`]: level-2 rough paths, Chen diagnostics, and joint lifts of
//!   paths with different regularities;
//! - [`controlled`]: controlled-path algebra and rough / Young / mixed
//!   integrals;
//! - [`sewing`]: the deterministic sewing engine and Monte-Carlo rate fits
//!   for conditional germ estimates;
//! - [`rde`]: driftless flows, Jacobians, the first Malliavin-derivative
//!   kernel, and drifted solutions;
//! - [`regularise`]: cutoffs, mollified rough drifts, the averaged
//!   functionals built along pairs of solutions, the joint driving signal of
//!   the linearised equation, and the two-scheme uniqueness experiment.

pub mod cmspace;
pub mod controlled;
pub mod error;
pub mod fbm;
pub mod fit;
pub mod grid;
pub mod quad;
pub mod rde;
pub mod regularise;
pub mod report;
pub mod roughpath;
pub mod seedmix;
pub mod sewing;

pub use error::{Error, Result};
