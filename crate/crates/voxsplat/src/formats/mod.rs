//! File formats: PFM depth/normal rasters, PPM/PGM images and masks, binary
//! little-endian PLY point clouds and primitive sets, raw index maps, and the
//! JSON records for cameras, tracks, provenance and scene manifests.
//!
//! Missing depth is written as +inf in PFM; missing indices as -1. All
//! writers are deterministic so fixed-seed runs produce byte-identical files.

mod index_map;
mod json;
mod pfm;
mod ply;
mod pnm;

pub use index_map::{read_index_map, write_index_map};
pub use json::{
    load_cameras, load_manifest, load_tracks, save_cameras, save_tracks, CameraRecord,
    ConfigOverrides, FramePoseRecord, SceneManifest,
};
pub use pfm::{read_pfm, write_pfm_depth, write_pfm_normals, PfmData};
pub use ply::{
    read_point_cloud, read_primitives, write_point_cloud, write_primitives, ProvenanceRange,
};
pub use pnm::{read_pgm, read_ppm, write_pgm, write_ppm};

use std::io;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
