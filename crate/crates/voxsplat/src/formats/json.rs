//! JSON records: cameras, object tracks, pipeline config overrides and the
//! scene manifest tying the files of one scene together.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::geometry::{CameraIntrinsics, CameraView, RigidTransform};
use crate::mvs::Track;

/// Flat camera record: intrinsics plus world_from_camera pose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub view_id: u32,
    pub camera_id: u32,
    pub timestamp: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// [w, x, y, z]
    pub quaternion: [f64; 4],
    /// [x, y, z] meters
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_view(view: &CameraView) -> Self {
        Self {
            view_id: view.view_id,
            camera_id: view.camera_id,
            timestamp: view.timestamp,
            fx: view.intrinsics.fx,
            fy: view.intrinsics.fy,
            cx: view.intrinsics.cx,
            cy: view.intrinsics.cy,
            width: view.intrinsics.width,
            height: view.intrinsics.height,
            quaternion: view.world_from_camera.quaternion_wxyz(),
            translation: {
                let t = view.world_from_camera.translation();
                [t.x, t.y, t.z]
            },
        }
    }

    pub fn to_view(&self) -> CameraView {
        CameraView::new(
            self.view_id,
            self.camera_id,
            self.timestamp,
            CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height),
            RigidTransform::from_wxyz(self.quaternion, self.translation),
        )
    }
}

pub fn save_cameras(path: &Path, views: &[CameraView]) -> Result<(), FormatError> {
    let records: Vec<CameraRecord> = views.iter().map(CameraRecord::from_view).collect();
    let json = serde_json::to_string_pretty(&records)
        .map_err(|e| FormatError::parse(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| FormatError::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraView>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let records: Vec<CameraRecord> =
        serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e.to_string()))?;
    Ok(records.iter().map(CameraRecord::to_view).collect())
}

/// One timestamped pose sample of an object track (world_from_object).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePoseRecord {
    pub timestamp: f64,
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

impl FramePoseRecord {
    pub fn to_pose(&self) -> (f64, RigidTransform) {
        (
            self.timestamp,
            RigidTransform::from_wxyz(self.quaternion, self.translation),
        )
    }

    pub fn from_pose(timestamp: f64, pose: &RigidTransform) -> Self {
        let t = pose.translation();
        Self {
            timestamp,
            quaternion: pose.quaternion_wxyz(),
            translation: [t.x, t.y, t.z],
        }
    }
}

pub fn save_tracks(path: &Path, tracks: &BTreeMap<u32, Vec<FramePoseRecord>>) -> Result<(), FormatError> {
    let json = serde_json::to_string_pretty(tracks)
        .map_err(|e| FormatError::parse(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| FormatError::io(path, e))
}

pub fn load_tracks(path: &Path) -> Result<BTreeMap<u32, Track>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let records: BTreeMap<u32, Vec<FramePoseRecord>> =
        serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e.to_string()))?;
    Ok(records
        .into_iter()
        .map(|(id, poses)| (id, Track::new(poses.iter().map(FramePoseRecord::to_pose).collect())))
        .collect())
}

/// Numeric knobs a manifest (or the command line) may override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub voxel_resolution: Option<f64>,
    pub tau_rel: Option<f64>,
    pub tau_frac: Option<f64>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub window: Option<usize>,
    pub iterations: Option<usize>,
    pub cost_max: Option<f64>,
    pub geo_max_px: Option<f64>,
    pub geo_max_rel: Option<f64>,
    pub geo_max_deg: Option<f64>,
    pub min_consistent: Option<usize>,
    pub zmin: Option<f64>,
    pub zmax: Option<f64>,
    pub stride: Option<usize>,
    pub neighbor_k: Option<usize>,
    pub passes: Option<usize>,
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    /// Later values win.
    pub fn merged_with(&self, later: &ConfigOverrides) -> ConfigOverrides {
        macro_rules! pick {
            ($field:ident) => {
                later.$field.or(self.$field)
            };
        }
        ConfigOverrides {
            voxel_resolution: pick!(voxel_resolution),
            tau_rel: pick!(tau_rel),
            tau_frac: pick!(tau_frac),
            k: pick!(k),
            lambda: pick!(lambda),
            epsilon: pick!(epsilon),
            window: pick!(window),
            iterations: pick!(iterations),
            cost_max: pick!(cost_max),
            geo_max_px: pick!(geo_max_px),
            geo_max_rel: pick!(geo_max_rel),
            geo_max_deg: pick!(geo_max_deg),
            min_consistent: pick!(min_consistent),
            zmin: pick!(zmin),
            zmax: pick!(zmax),
            stride: pick!(stride),
            neighbor_k: pick!(neighbor_k),
            passes: pick!(passes),
            seed: pick!(seed),
        }
    }
}

/// Paths (relative to the manifest file) of one scene's inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub cameras: PathBuf,
    pub images: PathBuf,
    pub point_cloud: PathBuf,
    pub provenance: PathBuf,
    pub masks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PathBuf>,
    #[serde(default)]
    pub config: ConfigOverrides,
}

impl SceneManifest {
    /// Resolves a stored path against the manifest's directory.
    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<(SceneManifest, PathBuf), FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e.to_string()))?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((manifest, base))
}
