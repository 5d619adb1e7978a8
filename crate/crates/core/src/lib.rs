//! Category-level 3DOF pose posteriors from segmented depth images.
//!
//! A mixture-density network predicts a multimodal distribution over
//! axis-angle poses together with linear shape-subspace coefficients. Pose
//! hypotheses sampled from that distribution are re-weighted by how well the
//! silhouette of the reconstructed, posed shape agrees with the observed
//! silhouette, giving sampling-based MLE and MAP estimates.

pub mod dataset;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod mdn;
pub mod metrics;
pub mod sdfprior;
pub mod shapespace;

pub use error::{Error, Result};
pub use estimator::{EstimateResult, SilhouetteScorer};
pub use geometry::{CameraIntrinsics, DepthImage, RotVec, RotationMatrix};
pub use sdfprior::{PriorConfig, SignedDistanceField};
pub use shapespace::{Coefficients, ShapeVector, SubspaceModel, VoxelGrid};
