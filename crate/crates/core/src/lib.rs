//! Desk-scale simulator for the affine Hermitian-Yang-Mills heat flow on
//! flat Higgs bundles over affine Gauduchon charts.
//!
//! The crate is organized around the calculus: [`chart`] and [`field`] hold
//! grids and seam-aware sections, [`geometry`] the metric/measure/Laplacians,
//! [`bundle`] the flat Higgs data, [`curvature`] the extended curvature and
//! Chern-Weil degrees, [`flow`] the heat-flow integrators, [`diagnostics`]
//! the monitored identities, and [`stability`] the sub-bundle slope analysis.

pub mod bundle;
pub mod chart;
pub mod curvature;
pub mod diagnostics;
pub mod field;
pub mod flow;
pub mod forms;
pub mod geometry;
pub mod linalg;
pub mod poisson;
pub mod scenario;
pub mod stability;
pub mod verify;

pub use chart::{Chart, Topology};
pub use linalg::Mat;
