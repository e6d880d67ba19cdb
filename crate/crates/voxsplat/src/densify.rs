//! Patch-to-point conversion, primitive spawning and the per-instance
//! densification pipeline.
//!
//! The pipeline snapshot-isolates instances: every instance is evaluated
//! against the primitive set as it stood when the pass began, spawned
//! primitives and opacity adjustments are committed in ascending instance id
//! after all instances ran. Processing order therefore cannot change any
//! instance's output.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector3};
use serde::Serialize;

use crate::formats::ConfigOverrides;
use crate::geometry::{project, unproject, CameraView, Pixel};
use crate::mvs::{
    object_frame_views, patchmatch_iterate, filter_consistent, HypothesisMap, InitRasters,
    PatchMatchConfig, SupportMap, Track,
};
use crate::raster::{DepthRaster, MaskRaster, NormalRaster};
use crate::rng::hash_key;
use crate::select::{
    pair_score_views, select_supporting_views, CandidateSet, SelectionConfig,
};
use crate::splat::{
    splat_render, total_loss, GaussianPrimitive, LossBreakdown, LossWeights, RenderOutput,
};
use crate::voxel::{
    candidate_views, covisible_distances, fit_grid_bounds, flag_counts, instance_voxels,
    rasterize_visible, status_from_counts, voxelize, BadPixelCounts, DepthIndexMap,
    InstanceStatus, ProvenancedPoint, RasterizeMode, ViewCandidate, VoxelGrid,
};

/// Surface point recovered by stereo, ready to seed a primitive.
#[derive(Debug, Clone)]
pub struct SpawnedPoint {
    pub position: Vector3<f64>,
    /// World frame, camera-facing.
    pub normal: Vector3<f64>,
    pub color: [f32; 3],
}

/// Converts surviving hypothesis pixels on a stride grid into world-frame
/// points with normals and sampled colors.
pub fn patches_to_points(
    map: &HypothesisMap,
    survivors: &MaskRaster,
    reference: &CameraView,
    stride: usize,
) -> Vec<SpawnedPoint> {
    assert!(stride >= 1);
    let image = reference.image.as_ref().expect("reference view needs an image");
    let mut out = Vec::new();
    for y in (0..map.height()).step_by(stride) {
        for x in (0..map.width()).step_by(stride) {
            if survivors.get(x, y) == 0 {
                continue;
            }
            let Some(z) = map.depth_z(x, y, &reference.intrinsics) else {
                continue;
            };
            let point_cam = unproject(&reference.intrinsics, Pixel::new(x as f64, y as f64), z)
                .expect("z > 0");
            let position = reference.world_from_camera.transform_point(&point_cam);
            let mut normal_cam = map.plane(x, y).normal;
            // Camera-facing: the hypothesis normal satisfies n . ray < 0.
            if normal_cam.dot(&point_cam) > 0.0 {
                normal_cam = -normal_cam;
            }
            out.push(SpawnedPoint {
                position,
                normal: reference.world_from_camera.rotate(&normal_cam),
                color: image.get(x, y),
            });
        }
    }
    out
}

const RHO_MIN: f64 = 0.01;
const RHO_MAX: f64 = 1.0;

/// Mean distance to the k nearest other points, per point. Grid-accelerated;
/// empty neighborhoods (single point) give +inf which callers clamp.
fn mean_knn_distances(points: &[SpawnedPoint], k: usize) -> Vec<f64> {
    let n = points.len();
    if n <= 1 {
        return vec![f64::INFINITY; n];
    }
    let k = k.min(n - 1);
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        min = min.inf(&p.position);
        max = max.sup(&p.position);
    }
    let extent = (max - min).norm().max(1e-9);
    // Surface-ish distribution: aim for a handful of points per cell.
    let cell = (extent / (n as f64).sqrt()).max(1e-6) * 2.0;
    let key = |p: &Vector3<f64>| -> (i64, i64, i64) {
        (
            ((p.x - min.x) / cell).floor() as i64,
            ((p.y - min.y) / cell).floor() as i64,
            ((p.z - min.z) / cell).floor() as i64,
        )
    };
    let mut grid: BTreeMap<(i64, i64, i64), Vec<u32>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(&p.position)).or_default().push(i as u32);
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (cx, cy, cz) = key(&p.position);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let mut ring = 0i64;
            loop {
                // Scan the shell at Chebyshev radius `ring`.
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            if let Some(cellpts) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                                for &j in cellpts {
                                    if j as usize == i {
                                        continue;
                                    }
                                    let d = (points[j as usize].position - p.position).norm();
                                    let pos = best.partition_point(|&b| b < d);
                                    if pos < k {
                                        best.insert(pos, d);
                                        best.truncate(k);
                                    }
                                }
                            }
                        }
                    }
                }
                // Points beyond `ring` cells are at least this far away.
                let safe = ring as f64 * cell;
                if best.len() == k && *best.last().unwrap() <= safe {
                    break;
                }
                ring += 1;
                if ring as f64 * cell > extent * 2.0 {
                    break;
                }
            }
            if best.is_empty() {
                f64::INFINITY
            } else {
                best.iter().sum::<f64>() / best.len() as f64
            }
        })
        .collect()
}

/// Builds a rotation whose local z axis equals `normal`.
fn rotation_aligning_z(normal: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = normal.normalize();
    let helper = if z.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

/// Spawns one primitive per point: a disc of radius rho (the mean k-NN
/// spacing, clamped to [1 cm, 1 m]) with its short axis along the normal.
pub fn spawn_gaussians(points: &[SpawnedPoint], neighbor_k: usize) -> Vec<GaussianPrimitive> {
    let rho = mean_knn_distances(points, neighbor_k);
    points
        .iter()
        .zip(rho)
        .map(|(p, r)| {
            let r = r.clamp(RHO_MIN, RHO_MAX);
            GaussianPrimitive {
                mean: p.position,
                scale: Vector3::new(r, r, r / 10.0),
                rotation: rotation_aligning_z(&p.normal),
                opacity: 0.5,
                color: p.color,
            }
        })
        .collect()
}

/// Full pipeline configuration with the documented defaults.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub voxel_resolution: f64,
    pub tau_rel: f64,
    pub tau_frac: f64,
    pub selection: SelectionConfig,
    pub patchmatch: PatchMatchConfig,
    pub stride: usize,
    pub neighbor_k: usize,
    pub passes: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_resolution: 0.3,
            tau_rel: 0.1,
            tau_frac: 0.3,
            selection: SelectionConfig::default(),
            patchmatch: PatchMatchConfig::default(),
            stride: 2,
            neighbor_k: 4,
            passes: 1,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl PipelineConfig {
    pub fn with_overrides(mut self, o: &ConfigOverrides) -> Self {
        if let Some(v) = o.voxel_resolution {
            self.voxel_resolution = v;
        }
        if let Some(v) = o.tau_rel {
            self.tau_rel = v;
        }
        if let Some(v) = o.tau_frac {
            self.tau_frac = v;
        }
        if let Some(v) = o.k {
            self.selection.k = v;
        }
        if let Some(v) = o.lambda {
            self.selection.lambda = v;
        }
        if let Some(v) = o.epsilon {
            self.selection.epsilon = v;
        }
        if let Some(v) = o.window {
            self.patchmatch.window = v;
        }
        if let Some(v) = o.iterations {
            self.patchmatch.iterations = v;
        }
        if let Some(v) = o.cost_max {
            self.patchmatch.cost_max = v;
        }
        if let Some(v) = o.geo_max_px {
            self.patchmatch.geo_max_px = v;
        }
        if let Some(v) = o.geo_max_rel {
            self.patchmatch.geo_max_rel = v;
        }
        if let Some(v) = o.geo_max_deg {
            self.patchmatch.geo_max_deg = v;
        }
        if let Some(v) = o.min_consistent {
            self.patchmatch.min_consistent = v;
        }
        if let Some(v) = o.zmin {
            self.patchmatch.depth_range.0 = v;
        }
        if let Some(v) = o.zmax {
            self.patchmatch.depth_range.1 = v;
        }
        if let Some(v) = o.stride {
            self.stride = v;
        }
        if let Some(v) = o.neighbor_k {
            self.neighbor_k = v;
        }
        if let Some(v) = o.passes {
            self.passes = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
            self.selection.seed = v;
            self.patchmatch.seed = v;
        }
        self
    }
}

/// Everything the pipeline consumes for one scene.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub views: Vec<CameraView>,
    pub points: Vec<ProvenancedPoint>,
    /// instance id -> view id -> mask.
    pub masks: BTreeMap<u32, BTreeMap<u32, MaskRaster>>,
    pub tracks: BTreeMap<u32, Track>,
    pub priors: Vec<GaussianPrimitive>,
}

/// Audit record of one instance in one pass.
#[derive(Debug, Clone, Serialize)]
pub struct DensificationReport {
    pub instance_id: u32,
    pub pass: usize,
    pub status_pre: InstanceStatus,
    pub status_post: Option<InstanceStatus>,
    pub dynamic: bool,
    pub reference_view: Option<u32>,
    pub views_selected: Vec<u32>,
    pub pixels_active: usize,
    pub pixels_converged: usize,
    pub pixels_surviving: usize,
    pub points_spawned: usize,
    pub priors_opacity_halved: usize,
    pub loss_pre: Option<LossBreakdown>,
    pub loss_post: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DensificationReport {
    fn new(instance_id: u32, pass: usize, status_pre: InstanceStatus, dynamic: bool) -> Self {
        Self {
            instance_id,
            pass,
            status_pre,
            status_post: None,
            dynamic,
            reference_view: None,
            views_selected: Vec::new(),
            pixels_active: 0,
            pixels_converged: 0,
            pixels_surviving: 0,
            points_spawned: 0,
            priors_opacity_halved: 0,
            loss_pre: None,
            loss_post: None,
            error: None,
        }
    }
}

struct ViewProducts {
    filtered: DepthIndexMap,
    render: RenderOutput,
}

fn mask_pixels(mask: &MaskRaster) -> usize {
    mask.data().iter().filter(|&&m| m != 0).count()
}

/// True when the mask reaches the image border, i.e. the instance is
/// clipped by this view's frustum.
pub fn mask_touches_border(mask: &MaskRaster) -> bool {
    let w = mask.width();
    let h = mask.height();
    (0..w).any(|x| mask.get(x, 0) != 0 || mask.get(x, h - 1) != 0)
        || (0..h).any(|y| mask.get(0, y) != 0 || mask.get(w - 1, y) != 0)
}

/// Blanks the depth/normal rasters outside the survivor set.
fn masked_mvs_rasters(
    map: &HypothesisMap,
    survivors: &MaskRaster,
    intr: &crate::geometry::CameraIntrinsics,
) -> (DepthRaster, NormalRaster) {
    let mut depth = map.depth_raster(intr);
    let mut normal = map.normal_raster();
    for i in 0..survivors.data().len() {
        if survivors.data()[i] == 0 {
            depth.data_mut()[i] = f64::INFINITY;
            normal.data_mut()[i] = [0.0; 3];
        }
    }
    (depth, normal)
}

struct InstanceOutcome {
    report: DensificationReport,
    spawned: Vec<GaussianPrimitive>,
    halve_priors: Vec<usize>,
    artifacts: InstanceArtifacts,
}

/// Stereo products of one processed instance, for file export.
#[derive(Debug, Clone)]
pub struct InstanceArtifacts {
    pub instance_id: u32,
    pub pass: usize,
    pub reference_view: u32,
    pub mvs_depth: DepthRaster,
    pub mvs_normal: NormalRaster,
    pub survivors: MaskRaster,
}

/// Runs voxelize -> rasterize -> flag -> select -> (object frame) ->
/// patch match -> filter -> spawn for every masked instance, ascending by
/// instance id, against a snapshot of the primitive set. Per-instance errors
/// are recorded, never fatal.
pub fn run_pipeline(
    scene: &SceneInputs,
    cfg: &PipelineConfig,
) -> (
    Vec<GaussianPrimitive>,
    Vec<DensificationReport>,
    Vec<InstanceArtifacts>,
) {
    let mut priors = scene.priors.clone();
    let mut points = scene.points.clone();
    let mut reports = Vec::new();
    let mut artifacts = Vec::new();
    for pass in 0..cfg.passes.max(1) {
        let ((next_priors, new_points), pass_reports, pass_artifacts) =
            run_pass(scene, &points, &priors, cfg, pass);
        // Spawned points feed later passes with MVS provenance.
        points.extend(new_points);
        priors = next_priors;
        reports.extend(pass_reports);
        artifacts.extend(pass_artifacts);
    }
    (priors, reports, artifacts)
}

type PassResult = (
    (Vec<GaussianPrimitive>, Vec<ProvenancedPoint>),
    Vec<DensificationReport>,
    Vec<InstanceArtifacts>,
);

fn run_pass(
    scene: &SceneInputs,
    points: &[ProvenancedPoint],
    snapshot: &[GaussianPrimitive],
    cfg: &PipelineConfig,
    pass: usize,
) -> PassResult {
    let mut reports = Vec::new();
    let mut outcomes: Vec<InstanceOutcome> = Vec::new();

    let grid = if points.is_empty() {
        None
    } else {
        let (origin, dims) = fit_grid_bounds(points, cfg.voxel_resolution);
        voxelize(points, origin, dims, cfg.voxel_resolution).ok()
    };

    // Per-view products for every view that appears in some instance mask.
    let mut mask_view_ids: Vec<u32> = scene
        .masks
        .values()
        .flat_map(|m| m.keys().copied())
        .collect();
    mask_view_ids.sort_unstable();
    mask_view_ids.dedup();
    let view_by_id: BTreeMap<u32, &CameraView> =
        scene.views.iter().map(|v| (v.view_id, v)).collect();
    let products: BTreeMap<u32, ViewProducts> = mask_view_ids
        .iter()
        .filter_map(|id| {
            let view = view_by_id.get(id)?;
            let grid = grid.as_ref()?;
            Some((
                *id,
                ViewProducts {
                    filtered: rasterize_visible(grid, view, RasterizeMode::ViewFiltered),
                    render: splat_render(snapshot, view),
                },
            ))
        })
        .collect();

    for (&instance_id, masks) in &scene.masks {
        let dynamic = scene.tracks.contains_key(&instance_id);
        // Pooled discriminant over every view that has a mask.
        let mut counts = BadPixelCounts::default();
        for (view_id, mask) in masks {
            if let Some(p) = products.get(view_id) {
                // View-filtered depth: a dynamic object's voxels participate
                // only in the views that actually observed them, so its
                // motion trail cannot shadow static instances.
                counts.merge(&flag_counts(mask, &p.filtered, &p.render.hard_depth, cfg.tau_rel));
            }
        }
        let status_pre = status_from_counts(&counts, cfg.tau_frac);
        let mut report = DensificationReport::new(instance_id, pass, status_pre, dynamic);
        if status_pre != InstanceStatus::Incomplete {
            reports.push(report);
            continue;
        }
        let Some(grid) = grid.as_ref() else {
            report.error = Some("no voxel grid (empty point cloud)".to_string());
            reports.push(report);
            continue;
        };
        match process_instance(
            scene, points, snapshot, cfg, grid, &products, instance_id, masks, pass, &report,
        ) {
            Ok(outcome) => outcomes.push(outcome),
            Err(msg) => {
                report.error = Some(msg);
                reports.push(report);
            }
        }
    }

    // Commit phase, ascending instance id (outcomes are already ordered).
    let mut final_priors: Vec<GaussianPrimitive> = snapshot.to_vec();
    let mut new_points: Vec<ProvenancedPoint> = Vec::new();
    let mut artifacts = Vec::new();
    for outcome in &mut outcomes {
        for &idx in &outcome.halve_priors {
            final_priors[idx].opacity *= 0.5;
        }
    }
    for outcome in outcomes {
        let reference_view = outcome.report.reference_view.unwrap_or(0);
        for g in &outcome.spawned {
            new_points.push(ProvenancedPoint::mvs(g.mean, reference_view));
        }
        final_priors.extend(outcome.spawned);
        reports.push(outcome.report);
        artifacts.push(outcome.artifacts);
    }
    reports.sort_by_key(|r| r.instance_id);
    artifacts.sort_by_key(|a| a.instance_id);
    ((final_priors, new_points), reports, artifacts)
}

#[allow(clippy::too_many_arguments)]
fn process_instance(
    scene: &SceneInputs,
    points: &[ProvenancedPoint],
    snapshot: &[GaussianPrimitive],
    cfg: &PipelineConfig,
    grid: &VoxelGrid,
    products: &BTreeMap<u32, ViewProducts>,
    instance_id: u32,
    masks: &BTreeMap<u32, MaskRaster>,
    pass: usize,
    report: &DensificationReport,
) -> Result<InstanceOutcome, String> {
    let mut report = report.clone();
    let instance_seed = hash_key(&[cfg.seed, instance_id as u64, pass as u64]);

    // Voxels of this instance through the view-filtered index maps.
    let mut voxels = std::collections::BTreeSet::new();
    for (view_id, mask) in masks {
        if let Some(p) = products.get(view_id) {
            voxels.extend(instance_voxels(mask, &p.filtered));
        }
    }
    if voxels.is_empty() {
        return Err("no voxels mapped to the instance".to_string());
    }

    // For dynamic instances, rebuild the instance cloud in the object frame
    // and re-express all cameras there.
    let track = scene.tracks.get(&instance_id);
    let (views_eff, candidates): (Vec<CameraView>, Vec<ViewCandidate>) = match track {
        Some(track) => {
            let mut member = std::collections::BTreeSet::new();
            for &vid in &voxels {
                if let Some(rec) = grid.get(vid) {
                    member.extend(rec.point_indices.iter().copied());
                }
            }
            let view_ts: BTreeMap<u32, f64> = scene
                .views
                .iter()
                .map(|v| (v.view_id, v.timestamp))
                .collect();
            let mut obj_points = Vec::new();
            for &pi in &member {
                let p = &points[pi as usize];
                let Some(&t) = p.source_views.first().and_then(|v| view_ts.get(v)) else {
                    continue;
                };
                let Ok(world_from_object) = track.world_from_object(t) else {
                    continue;
                };
                let mut q = p.clone();
                q.position = world_from_object.inverse().transform_point(&p.position);
                obj_points.push(q);
            }
            if obj_points.is_empty() {
                return Err("no timestamped points for the dynamic instance".to_string());
            }
            let (origin, dims) = fit_grid_bounds(&obj_points, cfg.voxel_resolution);
            let obj_grid = voxelize(&obj_points, origin, dims, cfg.voxel_resolution)
                .map_err(|e| e.to_string())?;
            let obj_views = object_frame_views(&scene.views, track).map_err(|e| e.to_string())?;
            let all_cells: std::collections::BTreeSet<i64> =
                obj_grid.iter().map(|(id, _)| id).collect();
            let cands = candidate_views(&all_cells, &obj_grid, &obj_views)
                .map_err(|e| e.to_string())?;
            (obj_views, cands)
        }
        None => {
            let cands = candidate_views(&voxels, grid, &scene.views).map_err(|e| e.to_string())?;
            (scene.views.clone(), cands)
        }
    };

    // Reference view: among masked candidates with solid voxel coverage,
    // the one whose mask shows the most of the instance, preferring views
    // where the instance is not clipped by the frustum.
    let max_covisible = candidates
        .iter()
        .filter(|c| masks.contains_key(&c.view_id))
        .map(ViewCandidate::covisible_count)
        .max()
        .unwrap_or(0);
    let coverage_floor = (max_covisible / 3).max(1);
    let reference_id = candidates
        .iter()
        .filter(|c| masks.contains_key(&c.view_id) && c.covisible_count() >= coverage_floor)
        .max_by(|a, b| {
            let clip_a = mask_touches_border(&masks[&a.view_id]);
            let clip_b = mask_touches_border(&masks[&b.view_id]);
            clip_b
                .cmp(&clip_a)
                .then(mask_pixels(&masks[&a.view_id]).cmp(&mask_pixels(&masks[&b.view_id])))
                .then(b.view_id.cmp(&a.view_id))
        })
        .map(|c| c.view_id)
        .ok_or_else(|| "no candidate view has an instance mask".to_string())?;
    report.reference_view = Some(reference_id);
    let cand_by_id: BTreeMap<u32, &ViewCandidate> =
        candidates.iter().map(|c| (c.view_id, c)).collect();
    let view_eff_by_id: BTreeMap<u32, &CameraView> =
        views_eff.iter().map(|v| (v.view_id, v)).collect();
    let reference_cand = cand_by_id[&reference_id];
    let reference_eff = view_eff_by_id[&reference_id];

    let score_pair = |a_id: u32, b_id: u32| -> f64 {
        let (a, b) = (cand_by_id[&a_id], cand_by_id[&b_id]);
        let (_, da, db) = covisible_distances(a, b);
        pair_score_views(view_eff_by_id[&a_id], view_eff_by_id[&b_id], &da, &db).score
    };
    let to_reference: Vec<(u32, f64)> = candidates
        .iter()
        .filter(|c| c.view_id != reference_id)
        .map(|c| {
            let (_, dr, ds) = covisible_distances(reference_cand, c);
            (
                c.view_id,
                pair_score_views(reference_eff, view_eff_by_id[&c.view_id], &dr, &ds).score,
            )
        })
        .collect();
    let set = CandidateSet::new(reference_id, to_reference, score_pair);
    let selection = SelectionConfig {
        seed: instance_seed,
        ..cfg.selection
    };
    let chosen = select_supporting_views(&set, &selection).map_err(|e| e.to_string())?;
    report.views_selected = chosen.clone();

    // Patch matching in the effective (world or object) frame.
    let mask_ref = &masks[&reference_id];
    report.pixels_active = mask_pixels(mask_ref);
    let supporting: Vec<CameraView> = chosen
        .iter()
        .map(|id| view_eff_by_id[id].clone())
        .collect();
    let init = match track {
        // The snapshot renders live in the world frame; they only seed
        // static instances.
        Some(_) => None,
        None => products.get(&reference_id).map(|p| InitRasters {
            depth: p.render.hard_depth.clone(),
            normal: p.render.normal.clone(),
        }),
    };
    // The instance's voxels bound where its surface can be; sampling depths
    // far outside that band wastes the random-search budget.
    let depth_band = {
        let dists = &reference_cand.distances;
        let lo = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = dists.iter().cloned().fold(0.0f64, f64::max);
        if lo.is_finite() && hi > 0.0 {
            (
                (lo * 0.6).max(cfg.patchmatch.depth_range.0),
                (hi * 1.5).min(cfg.patchmatch.depth_range.1).max(lo * 0.6 + 0.1),
            )
        } else {
            cfg.patchmatch.depth_range
        }
    };
    let pm_cfg = PatchMatchConfig {
        seed: instance_seed,
        depth_range: depth_band,
        ..cfg.patchmatch
    };
    let ref_map = patchmatch_iterate(
        reference_eff,
        &supporting,
        init.as_ref(),
        Some(mask_ref),
        &pm_cfg,
    )
    .map_err(|e| e.to_string())?;
    report.pixels_converged = ref_map.converged_count();

    // Hypothesis maps for the masked supporting views, for cross-view checks.
    let mut sup_maps = Vec::new();
    for id in &chosen {
        let Some(sup_mask) = masks.get(id) else {
            continue;
        };
        let sup_eff = view_eff_by_id[id];
        let mut others: Vec<CameraView> = vec![reference_eff.clone()];
        others.extend(
            chosen
                .iter()
                .filter(|o| *o != id)
                .map(|o| view_eff_by_id[o].clone()),
        );
        let map = patchmatch_iterate(sup_eff, &others, None, Some(sup_mask), &pm_cfg)
            .map_err(|e| e.to_string())?;
        sup_maps.push(SupportMap {
            intr: sup_eff.intrinsics,
            rel: crate::geometry::relative_pose(reference_eff, sup_eff),
            map,
        });
    }
    let (_, survivors, _) = filter_consistent(&ref_map, &reference_eff.intrinsics, &sup_maps, &pm_cfg);
    report.pixels_surviving = survivors.data().iter().filter(|&&m| m != 0).count();

    // Spawn primitives; dynamic instances move back to the world frame at
    // the reference timestamp.
    let mut spawned_points = patches_to_points(&ref_map, &survivors, reference_eff, cfg.stride);
    if let Some(track) = track {
        let world_from_object = track
            .world_from_object(reference_eff.timestamp)
            .map_err(|e| e.to_string())?;
        for p in &mut spawned_points {
            p.position = world_from_object.transform_point(&p.position);
            p.normal = world_from_object.rotate(&p.normal);
        }
    }
    let spawned = spawn_gaussians(&spawned_points, cfg.neighbor_k);
    report.points_spawned = spawned.len();

    // Losses and the post flag are evaluated at the original reference view
    // (its pose and timestamp are shared by the object-frame twin).
    let reference_orig = scene
        .views
        .iter()
        .find(|v| v.view_id == reference_id)
        .expect("reference exists");
    let (mvs_depth, mvs_normal) =
        masked_mvs_rasters(&ref_map, &survivors, &reference_eff.intrinsics);
    let observed = reference_orig.image.as_ref().expect("image").as_ref();
    let pre_render = products
        .get(&reference_id)
        .map(|p| &p.render)
        .cloned()
        .unwrap_or_else(|| splat_render(snapshot, reference_orig));
    let mut post_set: Vec<GaussianPrimitive> = snapshot.to_vec();
    post_set.extend(spawned.iter().cloned());
    let post_render = splat_render(&post_set, reference_orig);
    report.loss_pre = total_loss(&pre_render, observed, &mvs_depth, &mvs_normal, &cfg.loss_weights)
        .ok()
        .map(|(_, b)| b);
    report.loss_post =
        total_loss(&post_render, observed, &mvs_depth, &mvs_normal, &cfg.loss_weights)
            .ok()
            .map(|(_, b)| b);
    if let Some(p) = products.get(&reference_id) {
        let post_counts = flag_counts(mask_ref, &p.filtered, &post_render.hard_depth, cfg.tau_rel);
        report.status_post = Some(status_from_counts(&post_counts, cfg.tau_frac));
    }

    // Redundant priors (rendering well in front of the voxel surface over
    // most of their footprint) get their opacity halved.
    let halve = products
        .get(&reference_id)
        .map(|p| {
            crate::splat::redundant_primitive_indices(snapshot, reference_orig, &p.filtered)
        })
        .unwrap_or_default();
    report.priors_opacity_halved = halve.len();

    let artifacts = InstanceArtifacts {
        instance_id,
        pass: report.pass,
        reference_view: reference_id,
        mvs_depth: mvs_depth.clone(),
        mvs_normal: mvs_normal.clone(),
        survivors,
    };
    Ok(InstanceOutcome {
        report,
        spawned,
        halve_priors: halve,
        artifacts,
    })
}

/// Checks that a spawned primitive's mean projects inside its reference view.
pub fn mean_in_frustum(g: &GaussianPrimitive, view: &CameraView) -> bool {
    let cam = view.camera_from_world().transform_point(&g.mean);
    match project(&view.intrinsics, &cam) {
        Ok((p, _)) => view.intrinsics.contains(p),
        Err(_) => false,
    }
}
