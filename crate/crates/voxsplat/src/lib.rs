//! Geometry recovery for Gaussian-splat street scenes.
//!
//! The library identifies scene structures whose splat geometry is missing or
//! unreliable by comparing depth rasterized from a visibility-tagged voxel
//! grid against depth rendered from the current Gaussian set, selects a
//! diverse subset of supporting views for each incomplete instance, recovers
//! the missing surfaces with patch-match multi-view stereo, and spawns new
//! Gaussian primitives from the consistent patches. A deterministic synthetic
//! multi-camera driving simulator provides exact ground truth for testing.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`geometry`] — pinhole cameras, rigid transforms, projection.
//! * [`voxel`] — provenance-tagged voxelization, z-buffer depth/index
//!   rasterization and the incomplete-instance discriminant.
//! * [`splat`] — forward-only Gaussian splatting, depth/normal rendering and
//!   the four-term evaluation loss.
//! * [`select`] — geometric-diversity pair scores and randomized supporting
//!   view subset selection.
//! * [`mvs`] — patch-match stereo with plane hypotheses, homography warping,
//!   photometric/geometric consistency and rigid-object frame changes.
//! * [`densify`] — patch-to-point conversion, primitive spawning and the
//!   per-instance pipeline orchestration.
//! * [`sim`] — the synthetic scene generator.
//! * [`formats`], [`metrics`], [`commands`] — file formats, PSNR, and the
//!   CLI-facing stage runners.

pub mod commands;
pub mod densify;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod mvs;
pub mod raster;
pub mod rng;
pub mod select;
pub mod sim;
pub mod splat;
pub mod voxel;

pub use geometry::{CameraIntrinsics, CameraView, Pixel, RigidTransform};
pub use raster::{ColorRaster, DepthRaster, IndexRaster, MaskRaster, NormalRaster, Raster};
pub use splat::GaussianPrimitive;
pub use voxel::{DepthIndexMap, ProvenancedPoint, SourceKind, VoxelGrid};
