//! Multi-scale semi-supervised clustering for parsing disease heterogeneity.
//!
//! The pipeline runs in stages:
//!
//! 1. [`dataset`] loads a subject-by-feature table, removes covariate effects
//!    estimated on controls and produces stratified holdout splits.
//! 2. [`opnmf`] extracts patterns of structural covariance at several scales
//!    with orthonormal projective NMF.
//! 3. [`polytope`] clusters patients by fitting a max-margin convex polytope
//!    around the controls, one face per subtype.
//! 4. [`magic`] cycles the polytope fit across scales, carrying memberships
//!    forward, and builds a consensus over initialization scales.
//! 5. [`selection`] estimates clustering stability over `(c, K)` to choose the
//!    number of clusters, and [`stats`] maps subtypes against controls.
//!
//! [`simulate`] generates synthetic cohorts with planted subtypes and
//! [`persist`] implements the on-disk formats shared with the CLI.

pub mod dataset;
pub mod error;
pub mod magic;
pub mod opnmf;
pub mod persist;
pub mod polytope;
pub mod rng;
pub mod selection;
pub mod simulate;
pub mod stats;

pub use dataset::{CovariateModel, Dataset, Label};
pub use error::{MagicError, Result};
pub use magic::{MagicModel, ScaleSchedule};
pub use opnmf::{Decomposition, MultiScaleBasis, OpnmfConfig};
pub use polytope::{Hyperplane, Membership, PolytopeConfig, PolytopeModel};
pub use selection::StabilityReport;
pub use stats::StatsTable;
