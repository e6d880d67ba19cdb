//! Deterministic synthetic multi-camera driving scenes with exact ground
//! truth.
//!
//! Scenes are textured rectangles and boxes, optionally moving along rigid
//! tracks, viewed by a camera rig following a trajectory. Images come from
//! exact per-pixel ray casting with seeded octave value-noise textures and
//! flat shading, so multi-view photo-consistency is exact up to resampling.
//! LiDAR-like surface samples and SfM-like multi-view samples provide the
//! provenance-tagged point cloud; per-view depth, camera-frame normals and
//! instance masks come from the same ray caster.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densify::{spawn_gaussians, SpawnedPoint};
use crate::formats::FramePoseRecord;
use crate::geometry::{project, CameraIntrinsics, CameraView, Pixel, RigidTransform};
use crate::mvs::Track;
use crate::raster::{ColorRaster, DepthRaster, MaskRaster, NormalRaster, Raster};
use crate::rng::{hash_key, KeyedRng};
use crate::splat::GaussianPrimitive;
use crate::voxel::{ProvenancedPoint, SourceKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PoseSpec {
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseSpec {
    pub fn identity() -> Self {
        Self {
            quaternion: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::from_wxyz(self.quaternion, self.translation)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RigCameraSpec {
    pub camera_id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// rig_from_camera mounting transform.
    pub mount: PoseSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveShape {
    /// Textured rectangle spanning +-size/2 in its local x/y plane.
    Plane { size: [f64; 2] },
    /// Axis-aligned box spanning +-size/2 in its local frame.
    Box { size: [f64; 3] },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrimitiveSpec {
    pub id: u32,
    #[serde(flatten)]
    pub shape: PrimitiveShape,
    /// world_from_primitive for static primitives; ignored when tracked.
    pub pose: PoseSpec,
    pub texture_seed: u64,
    pub albedo: [f32; 3],
    /// world_from_object samples; presence marks the primitive dynamic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<Vec<FramePoseRecord>>,
    /// When false the primitive blocks LiDAR beams but returns no points.
    #[serde(default = "default_true")]
    pub lidar_visible: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LidarSpec {
    pub rings: usize,
    pub rays_per_ring: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// Azimuth sector in the rig frame, degrees from +z (forward); defaults
    /// to a full sweep.
    #[serde(default = "default_azimuth_min")]
    pub azimuth_min_deg: f64,
    #[serde(default = "default_azimuth_max")]
    pub azimuth_max_deg: f64,
    pub max_range: f64,
}

fn default_azimuth_min() -> f64 {
    0.0
}

fn default_azimuth_max() -> f64 {
    360.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SfmSpec {
    pub samples_per_instance: usize,
    #[serde(default = "default_max_views")]
    pub max_views: usize,
}

fn default_max_views() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PriorSpec {
    /// Downsampling cell size for prior splat centers, meters.
    pub voxel_size: f64,
    pub neighbor_k: usize,
    /// Which sample kinds seed priors ("lidar", "sfm").
    #[serde(default = "default_sources")]
    pub sources: Vec<String>,
    #[serde(default)]
    pub exclude_instances: Vec<u32>,
    /// Cap on prior splat scales; uneven LiDAR ring spacing otherwise
    /// produces meter-sized splats that smear across instance boundaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_cap: Option<f64>,
    /// Floor on the short-axis scale; a trained field hugs surfaces with
    /// some thickness, and paper-thin discs miss grazing rays that still
    /// clip the voxel boxes above the surface.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_thickness: Option<f64>,
}

fn default_sources() -> Vec<String> {
    vec!["lidar".to_string(), "sfm".to_string()]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub image: ImageSize,
    pub rig: Vec<RigCameraSpec>,
    /// world_from_rig per frame; timestamps strictly increasing.
    pub trajectory: Vec<FramePoseRecord>,
    pub primitives: Vec<PrimitiveSpec>,
    pub lidar: LidarSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sfm: Option<SfmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorSpec>,
}

/// One surface point with everything the pipeline may want to know about it.
#[derive(Debug, Clone)]
pub struct SurfaceSample {
    pub point: ProvenancedPoint,
    pub normal_world: Vector3<f64>,
    pub color: [f32; 3],
    pub instance_id: u32,
    pub timestamp: f64,
}

/// Exact per-view ground truth.
#[derive(Debug, Clone)]
pub struct GroundTruthView {
    /// Euclidean ray distance, missing where no primitive is hit.
    pub depth: DepthRaster,
    /// Camera-frame unit normals facing the camera.
    pub normal: NormalRaster,
    /// Instance id per pixel, -1 where none.
    pub instance: Raster<i64>,
}

#[derive(Debug, Clone)]
pub struct SimScene {
    pub views: Vec<CameraView>,
    /// Indexed like `views`.
    pub gt: Vec<GroundTruthView>,
    pub samples: Vec<SurfaceSample>,
    pub tracks: BTreeMap<u32, Track>,
    pub priors: Vec<GaussianPrimitive>,
}

impl SimScene {
    pub fn points(&self) -> Vec<ProvenancedPoint> {
        self.samples.iter().map(|s| s.point.clone()).collect()
    }

    /// Per-instance, per-view binary masks (views without coverage omitted).
    pub fn masks(&self) -> BTreeMap<u32, BTreeMap<u32, MaskRaster>> {
        let mut out: BTreeMap<u32, BTreeMap<u32, MaskRaster>> = BTreeMap::new();
        for (vi, gt) in self.gt.iter().enumerate() {
            let view_id = self.views[vi].view_id;
            let mut present: BTreeMap<u32, MaskRaster> = BTreeMap::new();
            for (i, &inst) in gt.instance.data().iter().enumerate() {
                if inst < 0 {
                    continue;
                }
                let mask = present.entry(inst as u32).or_insert_with(|| {
                    MaskRaster::filled(gt.instance.width(), gt.instance.height(), 0)
                });
                mask.data_mut()[i] = 1;
            }
            for (inst, mask) in present {
                out.entry(inst).or_default().insert(view_id, mask);
            }
        }
        out
    }

    pub fn view_by_id(&self, view_id: u32) -> Option<(&CameraView, &GroundTruthView)> {
        self.views
            .iter()
            .position(|v| v.view_id == view_id)
            .map(|i| (&self.views[i], &self.gt[i]))
    }
}

struct ScenePrimitive {
    id: u32,
    shape: PrimitiveShape,
    static_pose: RigidTransform,
    track: Option<Track>,
    texture_seed: u64,
    albedo: [f32; 3],
    lidar_visible: bool,
}

impl ScenePrimitive {
    fn world_from_local(&self, t: f64) -> RigidTransform {
        match &self.track {
            Some(track) => track
                .world_from_object(t)
                .expect("track coverage validated at build time"),
            None => self.static_pose,
        }
    }
}

struct Hit {
    t: f64,
    prim_index: usize,
    normal_world: Vector3<f64>,
    tex: (f64, f64),
    face: u32,
}

const HIT_EPS: f64 = 1e-9;

fn intersect_local(shape: &PrimitiveShape, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>, (f64, f64), u32)> {
    match shape {
        PrimitiveShape::Plane { size } => {
            if d.z.abs() < 1e-12 {
                return None;
            }
            let t = -o.z / d.z;
            if t <= HIT_EPS {
                return None;
            }
            let hit = o + d * t;
            if hit.x.abs() > size[0] / 2.0 || hit.y.abs() > size[1] / 2.0 {
                return None;
            }
            // Face the ray origin.
            let n = Vector3::new(0.0, 0.0, if o.z >= 0.0 { 1.0 } else { -1.0 });
            Some((t, n, (hit.x, hit.y), 0))
        }
        PrimitiveShape::Box { size } => {
            let half = Vector3::new(size[0] / 2.0, size[1] / 2.0, size[2] / 2.0);
            let mut tmin = f64::NEG_INFINITY;
            let mut tmax = f64::INFINITY;
            let mut axis = 0usize;
            for a in 0..3 {
                if d[a] == 0.0 {
                    if o[a].abs() > half[a] {
                        return None;
                    }
                    continue;
                }
                let inv = 1.0 / d[a];
                let mut t0 = (-half[a] - o[a]) * inv;
                let mut t1 = (half[a] - o[a]) * inv;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > tmin {
                    tmin = t0;
                    axis = a;
                }
                tmax = tmax.min(t1);
                if tmin > tmax {
                    return None;
                }
            }
            if tmin <= HIT_EPS || tmax <= 0.0 {
                return None;
            }
            let hit = o + d * tmin;
            let mut n = Vector3::zeros();
            n[axis] = if d[axis] < 0.0 { 1.0 } else { -1.0 };
            let (u, v) = match axis {
                0 => (hit.y, hit.z),
                1 => (hit.x, hit.z),
                _ => (hit.x, hit.y),
            };
            let face = (axis as u32) * 2 + if n[axis] > 0.0 { 0 } else { 1 };
            Some((tmin, n, (u, v), face))
        }
    }
}

fn cast_ray(prims: &[ScenePrimitive], t: f64, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, prim) in prims.iter().enumerate() {
        let world_from_local = prim.world_from_local(t);
        let local_from_world = world_from_local.inverse();
        let o = local_from_world.transform_point(origin);
        let d = local_from_world.rotate(dir);
        if let Some((tt, n_local, tex, face)) = intersect_local(&prim.shape, &o, &d) {
            if best.as_ref().map_or(true, |b| tt < b.t) {
                best = Some(Hit {
                    t: tt,
                    prim_index: i,
                    normal_world: world_from_local.rotate(&n_local),
                    tex,
                    face,
                });
            }
        }
    }
    best
}

fn hash01(seed: u64, parts: &[i64]) -> f64 {
    let mut key = vec![seed];
    key.extend(parts.iter().map(|&p| p as u64));
    (hash_key(&key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Octave-summed value noise in [0, 1); smooth but never locally constant.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    const OCTAVES: usize = 4;
    const BASE_CELL: f64 = 0.25;
    let mut sum = 0.0;
    let mut weight = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0 / BASE_CELL;
    for o in 0..OCTAVES {
        let sx = x * freq;
        let sy = y * freq;
        let ix = sx.floor() as i64;
        let iy = sy.floor() as i64;
        let fx = sx - ix as f64;
        let fy = sy - iy as f64;
        // Smoothstep keeps the gradient continuous across cells.
        let wx = fx * fx * (3.0 - 2.0 * fx);
        let wy = fy * fy * (3.0 - 2.0 * fy);
        let v00 = hash01(seed, &[o as i64, ix, iy]);
        let v10 = hash01(seed, &[o as i64, ix + 1, iy]);
        let v01 = hash01(seed, &[o as i64, ix, iy + 1]);
        let v11 = hash01(seed, &[o as i64, ix + 1, iy + 1]);
        let v = v00 * (1.0 - wx) * (1.0 - wy)
            + v10 * wx * (1.0 - wy)
            + v01 * (1.0 - wx) * wy
            + v11 * wx * wy;
        sum += amp * v;
        weight += amp;
        amp *= 0.55;
        freq *= 2.0;
    }
    sum / weight
}

fn surface_color(prim: &ScenePrimitive, tex: (f64, f64), face: u32) -> [f32; 3] {
    let v = value_noise(prim.texture_seed.wrapping_add(face as u64), tex.0, tex.1);
    let shade = (0.25 + 0.75 * v) as f32;
    [
        (prim.albedo[0] * shade).clamp(0.0, 1.0),
        (prim.albedo[1] * shade).clamp(0.0, 1.0),
        (prim.albedo[2] * shade).clamp(0.0, 1.0),
    ]
}

fn background_color(dir: &Vector3<f64>) -> [f32; 3] {
    [
        (0.40 + 0.18 * dir.x) as f32,
        (0.48 + 0.18 * dir.y) as f32,
        (0.58 + 0.12 * dir.z) as f32,
    ]
}

fn build_primitives(spec: &SceneSpec) -> Result<Vec<ScenePrimitive>, SimError> {
    let mut ids = std::collections::BTreeSet::new();
    spec.primitives
        .iter()
        .map(|p| {
            if !ids.insert(p.id) {
                return Err(SimError::InvalidSpec(format!("duplicate primitive id {}", p.id)));
            }
            match &p.shape {
                PrimitiveShape::Plane { size } => {
                    if size.iter().any(|&s| s <= 0.0) {
                        return Err(SimError::InvalidSpec(format!("primitive {}: nonpositive size", p.id)));
                    }
                }
                PrimitiveShape::Box { size } => {
                    if size.iter().any(|&s| s <= 0.0) {
                        return Err(SimError::InvalidSpec(format!("primitive {}: nonpositive size", p.id)));
                    }
                }
            }
            let track = p
                .track
                .as_ref()
                .map(|t| Track::new(t.iter().map(FramePoseRecord::to_pose).collect()));
            if let Some(track) = &track {
                for frame in &spec.trajectory {
                    if track.world_from_object(frame.timestamp).is_err() {
                        return Err(SimError::InvalidSpec(format!(
                            "primitive {}: track does not cover timestamp {}",
                            p.id, frame.timestamp
                        )));
                    }
                }
            }
            Ok(ScenePrimitive {
                id: p.id,
                shape: p.shape.clone(),
                static_pose: p.pose.to_transform(),
                track,
                texture_seed: p.texture_seed,
                albedo: p.albedo,
                lidar_visible: p.lidar_visible,
            })
        })
        .collect()
}

fn build_views(spec: &SceneSpec) -> Result<Vec<CameraView>, SimError> {
    if spec.rig.is_empty() || spec.trajectory.is_empty() {
        return Err(SimError::InvalidSpec("rig and trajectory must be non-empty".into()));
    }
    for w in spec.trajectory.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(SimError::InvalidSpec("timestamps must be strictly increasing".into()));
        }
    }
    let mut views = Vec::new();
    for (fi, frame) in spec.trajectory.iter().enumerate() {
        let world_from_rig = frame.to_pose().1;
        for (ci, cam) in spec.rig.iter().enumerate() {
            let intr = CameraIntrinsics::new(
                cam.fx,
                cam.fy,
                cam.cx,
                cam.cy,
                spec.image.width,
                spec.image.height,
            );
            views.push(CameraView::new(
                (fi * spec.rig.len() + ci) as u32,
                cam.camera_id,
                frame.timestamp,
                intr,
                world_from_rig.compose(&cam.mount.to_transform()),
            ));
        }
    }
    Ok(views)
}

fn render_view(prims: &[ScenePrimitive], view: &CameraView) -> (ColorRaster, GroundTruthView) {
    let w = view.intrinsics.width;
    let h = view.intrinsics.height;
    let origin = view.center();
    let cam_rot_inv = view.camera_from_world();
    // Color is 2x2 supersampled so foreshortened texture blurs instead of
    // aliasing into per-pixel noise; the geometric channels stay
    // point-sampled at the pixel center so ground truth remains exact.
    const SS: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];
    let rows: Vec<(Vec<[f32; 3]>, Vec<f64>, Vec<[f64; 3]>, Vec<i64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut color = Vec::with_capacity(w);
            let mut depth = Vec::with_capacity(w);
            let mut normal = Vec::with_capacity(w);
            let mut instance = Vec::with_capacity(w);
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for (dx, dy) in SS {
                    let dir = view.pixel_ray_world(Pixel::new(x as f64 + dx, y as f64 + dy));
                    let c = match cast_ray(prims, view.timestamp, &origin, &dir) {
                        Some(hit) => surface_color(&prims[hit.prim_index], hit.tex, hit.face),
                        None => background_color(&dir),
                    };
                    for k in 0..3 {
                        acc[k] += c[k] * 0.25;
                    }
                }
                color.push(acc);
                let dir = view.pixel_ray_world(Pixel::new(x as f64, y as f64));
                match cast_ray(prims, view.timestamp, &origin, &dir) {
                    Some(hit) => {
                        let prim = &prims[hit.prim_index];
                        depth.push(hit.t);
                        let n_cam = cam_rot_inv.rotate(&hit.normal_world);
                        normal.push([n_cam.x, n_cam.y, n_cam.z]);
                        instance.push(prim.id as i64);
                    }
                    None => {
                        depth.push(f64::INFINITY);
                        normal.push([0.0; 3]);
                        instance.push(-1);
                    }
                }
            }
            (color, depth, normal, instance)
        })
        .collect();
    let mut color = ColorRaster::filled(w, h, [0.0; 3]);
    let mut depth = DepthRaster::filled(w, h, f64::INFINITY);
    let mut normal = NormalRaster::filled(w, h, [0.0; 3]);
    let mut instance = Raster::<i64>::filled(w, h, -1);
    for (y, (c, d, n, i)) in rows.into_iter().enumerate() {
        for x in 0..w {
            color.set(x, y, c[x]);
            depth.set(x, y, d[x]);
            normal.set(x, y, n[x]);
            instance.set(x, y, i[x]);
        }
    }
    (
        color,
        GroundTruthView {
            depth,
            normal,
            instance,
        },
    )
}

/// Smallest 11x11 window variance of the luminance; the texture validity
/// check run on every rendered image.
fn min_window_variance(img: &ColorRaster) -> f64 {
    const WIN: usize = 11;
    let w = img.width();
    let h = img.height();
    if w < WIN || h < WIN {
        return f64::INFINITY;
    }
    // Integral images of luma and luma^2.
    let mut s = vec![0.0f64; (w + 1) * (h + 1)];
    let mut s2 = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let px = img.get(x, y);
            let l = (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0;
            s[(y + 1) * (w + 1) + x + 1] =
                l + s[y * (w + 1) + x + 1] + s[(y + 1) * (w + 1) + x] - s[y * (w + 1) + x];
            s2[(y + 1) * (w + 1) + x + 1] = l * l + s2[y * (w + 1) + x + 1]
                + s2[(y + 1) * (w + 1) + x]
                - s2[y * (w + 1) + x];
        }
    }
    let area = (WIN * WIN) as f64;
    let mut min_var = f64::INFINITY;
    for y in 0..=h - WIN {
        for x in 0..=w - WIN {
            let sum = s[(y + WIN) * (w + 1) + x + WIN] - s[y * (w + 1) + x + WIN]
                - s[(y + WIN) * (w + 1) + x]
                + s[y * (w + 1) + x];
            let sum2 = s2[(y + WIN) * (w + 1) + x + WIN] - s2[y * (w + 1) + x + WIN]
                - s2[(y + WIN) * (w + 1) + x]
                + s2[y * (w + 1) + x];
            let var = sum2 / area - (sum / area) * (sum / area);
            min_var = min_var.min(var);
        }
    }
    min_var
}

fn lidar_samples(
    spec: &SceneSpec,
    prims: &[ScenePrimitive],
    views: &[CameraView],
) -> Vec<SurfaceSample> {
    let cams_per_frame = spec.rig.len();
    let mut samples = Vec::new();
    for (fi, frame) in spec.trajectory.iter().enumerate() {
        let world_from_rig = frame.to_pose().1;
        let origin = *world_from_rig.translation();
        let t = frame.timestamp;
        let frame_views = &views[fi * cams_per_frame..(fi + 1) * cams_per_frame];
        for ring in 0..spec.lidar.rings {
            let f = if spec.lidar.rings == 1 {
                0.5
            } else {
                ring as f64 / (spec.lidar.rings - 1) as f64
            };
            let elev = (spec.lidar.elevation_min_deg
                + f * (spec.lidar.elevation_max_deg - spec.lidar.elevation_min_deg))
                .to_radians();
            let az_span = spec.lidar.azimuth_max_deg - spec.lidar.azimuth_min_deg;
            let full_sweep = (az_span - 360.0).abs() < 1e-9;
            for j in 0..spec.lidar.rays_per_ring {
                let frac = if full_sweep {
                    j as f64 / spec.lidar.rays_per_ring as f64
                } else if spec.lidar.rays_per_ring == 1 {
                    0.5
                } else {
                    j as f64 / (spec.lidar.rays_per_ring - 1) as f64
                };
                let az = (spec.lidar.azimuth_min_deg + frac * az_span).to_radians();
                // +y is down, so positive elevation tips the beam upward.
                let dir_rig = Vector3::new(
                    elev.cos() * az.sin(),
                    -elev.sin(),
                    elev.cos() * az.cos(),
                );
                let dir = world_from_rig.rotate(&dir_rig);
                let Some(hit) = cast_ray(prims, t, &origin, &dir) else {
                    continue;
                };
                if hit.t > spec.lidar.max_range {
                    continue;
                }
                let prim = &prims[hit.prim_index];
                if !prim.lidar_visible {
                    continue;
                }
                let pos = origin + dir * hit.t;
                let Some(view_id) = first_observing_view(prims, frame_views, &pos, t) else {
                    continue;
                };
                samples.push(SurfaceSample {
                    point: ProvenancedPoint::lidar(pos, view_id),
                    normal_world: hit.normal_world,
                    color: surface_color(prim, hit.tex, hit.face),
                    instance_id: prim.id,
                    timestamp: t,
                });
            }
        }
    }
    samples
}

/// First same-frame camera with an unoccluded line of sight to the point.
fn first_observing_view(
    prims: &[ScenePrimitive],
    frame_views: &[CameraView],
    pos: &Vector3<f64>,
    t: f64,
) -> Option<u32> {
    for view in frame_views {
        if observes(prims, view, pos, t) {
            return Some(view.view_id);
        }
    }
    None
}

fn observes(prims: &[ScenePrimitive], view: &CameraView, pos: &Vector3<f64>, t: f64) -> bool {
    let cam = view.camera_from_world().transform_point(pos);
    if cam.z <= 0.0 {
        return false;
    }
    let Ok((px, _)) = project(&view.intrinsics, &cam) else {
        return false;
    };
    if !view.intrinsics.contains(px) {
        return false;
    }
    let center = view.center();
    let delta = pos - center;
    let dist = delta.norm();
    let dir = delta / dist;
    match cast_ray(prims, t, &center, &dir) {
        Some(hit) => hit.t >= dist - 1e-6,
        None => false,
    }
}

fn sfm_samples(spec: &SceneSpec, prims: &[ScenePrimitive], views: &[CameraView]) -> Vec<SurfaceSample> {
    let Some(sfm) = &spec.sfm else {
        return Vec::new();
    };
    let mut samples = Vec::new();
    for prim in prims {
        if prim.track.is_some() {
            // Cross-frame triangulation assumes a static surface.
            continue;
        }
        for attempt in 0..sfm.samples_per_instance {
            let mut rng = KeyedRng::from_key(&[spec.seed, 0x7366_6d00, prim.id as u64, attempt as u64]);
            let (local, n_local, tex, face) = match &prim.shape {
                PrimitiveShape::Plane { size } => {
                    let x = rng.range(-size[0] / 2.0, size[0] / 2.0);
                    let y = rng.range(-size[1] / 2.0, size[1] / 2.0);
                    (Vector3::new(x, y, 0.0), Vector3::new(0.0, 0.0, -1.0), (x, y), 0u32)
                }
                PrimitiveShape::Box { size } => {
                    let axis = (rng.next_u64() % 3) as usize;
                    let side = if rng.next_u64() % 2 == 0 { 1.0 } else { -1.0 };
                    let mut p = Vector3::new(
                        rng.range(-size[0] / 2.0, size[0] / 2.0),
                        rng.range(-size[1] / 2.0, size[1] / 2.0),
                        rng.range(-size[2] / 2.0, size[2] / 2.0),
                    );
                    p[axis] = side * size[axis] / 2.0;
                    let mut n = Vector3::zeros();
                    n[axis] = side;
                    let tex = match axis {
                        0 => (p.y, p.z),
                        1 => (p.x, p.z),
                        _ => (p.x, p.y),
                    };
                    let face = (axis as u32) * 2 + if side > 0.0 { 0 } else { 1 };
                    (p, n, tex, face)
                }
            };
            let pos = prim.static_pose.transform_point(&local);
            let normal_world = prim.static_pose.rotate(&n_local);
            let mut observers = Vec::new();
            for view in views {
                if observes(prims, view, &pos, view.timestamp) {
                    observers.push(view.view_id);
                }
            }
            if observers.len() < 2 {
                continue;
            }
            // Keep a random subset so visibility sets vary across samples
            // instead of always naming the earliest views.
            while observers.len() > sfm.max_views {
                let drop = (rng.next_u64() % observers.len() as u64) as usize;
                observers.remove(drop);
            }
            // Face the first observer.
            let first = views.iter().find(|v| v.view_id == observers[0]).unwrap();
            let normal = if normal_world.dot(&(first.center() - pos)) < 0.0 {
                -normal_world
            } else {
                normal_world
            };
            samples.push(SurfaceSample {
                point: ProvenancedPoint::sfm(pos, observers),
                normal_world: normal,
                color: surface_color(prim, tex, face),
                instance_id: prim.id,
                timestamp: f64::NAN,
            });
        }
    }
    samples
}

fn build_priors(spec: &SceneSpec, samples: &[SurfaceSample]) -> Vec<GaussianPrimitive> {
    let Some(prior) = &spec.priors else {
        return Vec::new();
    };
    let want_lidar = prior.sources.iter().any(|s| s == "lidar");
    let want_sfm = prior.sources.iter().any(|s| s == "sfm");
    struct Acc {
        pos: Vector3<f64>,
        normal: Vector3<f64>,
        color: [f64; 3],
        count: usize,
    }
    let mut cells: BTreeMap<(i64, i64, i64), Acc> = BTreeMap::new();
    for s in samples {
        let keep = match s.point.kind {
            SourceKind::Lidar => want_lidar,
            SourceKind::Sfm => want_sfm,
            SourceKind::Mvs => false,
        };
        if !keep || prior.exclude_instances.contains(&s.instance_id) {
            continue;
        }
        let key = (
            (s.point.position.x / prior.voxel_size).floor() as i64,
            (s.point.position.y / prior.voxel_size).floor() as i64,
            (s.point.position.z / prior.voxel_size).floor() as i64,
        );
        let acc = cells.entry(key).or_insert(Acc {
            pos: Vector3::zeros(),
            normal: Vector3::zeros(),
            color: [0.0; 3],
            count: 0,
        });
        acc.pos += s.point.position;
        acc.normal += s.normal_world;
        for c in 0..3 {
            acc.color[c] += s.color[c] as f64;
        }
        acc.count += 1;
    }
    let points: Vec<SpawnedPoint> = cells
        .into_values()
        .map(|acc| {
            let inv = 1.0 / acc.count as f64;
            let normal = if acc.normal.norm() > 1e-9 {
                acc.normal.normalize()
            } else {
                Vector3::new(0.0, -1.0, 0.0)
            };
            SpawnedPoint {
                position: acc.pos * inv,
                normal,
                color: [
                    (acc.color[0] * inv) as f32,
                    (acc.color[1] * inv) as f32,
                    (acc.color[2] * inv) as f32,
                ],
            }
        })
        .collect();
    let mut gaussians = spawn_gaussians(&points, prior.neighbor_k);
    if let Some(cap) = prior.scale_cap {
        for g in &mut gaussians {
            g.scale = g.scale.map(|s| s.min(cap));
        }
    }
    if let Some(floor) = prior.min_thickness {
        for g in &mut gaussians {
            g.scale = g.scale.map(|s| s.max(floor));
        }
    }
    gaussians
}

/// Renders the scene: images, ground truth, surface samples, tracks and
/// optional prior primitives. Fully deterministic for a given spec.
pub fn generate(spec: &SceneSpec) -> Result<SimScene, SimError> {
    let prims = build_primitives(spec)?;
    let views = build_views(spec)?;

    let rendered: Vec<(ColorRaster, GroundTruthView)> = views
        .par_iter()
        .map(|view| render_view(&prims, view))
        .collect();
    let mut out_views = Vec::with_capacity(views.len());
    let mut gt = Vec::with_capacity(views.len());
    for (view, (color, gtv)) in views.into_iter().zip(rendered) {
        let var = min_window_variance(&color);
        if var <= 1e-15 {
            return Err(SimError::InvalidSpec(format!(
                "view {} has an 11x11 window with zero variance (var = {var:e})",
                view.view_id
            )));
        }
        out_views.push(view.with_image(Arc::new(color)));
        gt.push(gtv);
    }

    let mut samples = lidar_samples(spec, &prims, &out_views);
    samples.extend(sfm_samples(spec, &prims, &out_views));

    let tracks: BTreeMap<u32, Track> = spec
        .primitives
        .iter()
        .filter_map(|p| {
            p.track.as_ref().map(|t| {
                (
                    p.id,
                    Track::new(t.iter().map(FramePoseRecord::to_pose).collect()),
                )
            })
        })
        .collect();

    let priors = build_priors(spec, &samples);

    Ok(SimScene {
        views: out_views,
        gt,
        samples,
        tracks,
        priors,
    })
}

/// Ground-truth depth of one view (the depth channel of [`generate`]).
pub fn gt_depth(spec: &SceneSpec, view: &CameraView) -> Result<DepthRaster, SimError> {
    let prims = build_primitives(spec)?;
    let (_, gtv) = render_view(&prims, view);
    Ok(gtv.depth)
}

pub mod scenes;
