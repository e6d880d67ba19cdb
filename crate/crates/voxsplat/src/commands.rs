//! Stage runners behind the command-line interface. Each command loads a
//! scene manifest (or simulator spec), runs one pipeline stage or the full
//! densification, and writes deterministic outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::densify::{run_pipeline, PipelineConfig, SceneInputs};
use crate::formats::{
    self, load_cameras, load_manifest, load_tracks, save_cameras, save_tracks, ConfigOverrides,
    FormatError, FramePoseRecord, SceneManifest,
};
use crate::geometry::CameraView;
use crate::metrics::{psnr, MetricsError};
use crate::mvs::Track;
use crate::raster::MaskRaster;
use crate::select::{pair_score_views, CandidateSet, SelectionConfig};
use crate::sim::{self, SceneSpec};
use crate::splat::{splat_render, total_loss, GaussianPrimitive};
use crate::voxel::{
    self, candidate_views, covisible_distances, fit_grid_bounds, flag_counts, instance_voxels,
    rasterize_visible, status_from_counts, voxelize, BadPixelCounts, RasterizeMode,
};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Data(String),
}

fn data_err(msg: impl Into<String>) -> CommandError {
    CommandError::Data(msg.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    fs::write(path, json).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(path).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

fn image_name(view_id: u32) -> String {
    format!("view_{view_id:06}.ppm")
}

fn mask_name(instance_id: u32, view_id: u32) -> String {
    format!("inst_{instance_id:04}_view_{view_id:06}.pgm")
}

/// Renders a scene spec into a full on-disk scene: manifest, cameras,
/// images, point cloud with provenance, masks, tracks, priors and exact
/// ground truth.
pub fn simulate(spec_path: &Path, outdir: &Path) -> Result<(), CommandError> {
    let text = fs::read_to_string(spec_path).map_err(|e| FormatError::io(spec_path, e))?;
    let spec: SceneSpec =
        serde_json::from_str(&text).map_err(|e| FormatError::parse(spec_path, e.to_string()))?;
    let scene = sim::generate(&spec)?;

    ensure_dir(outdir)?;
    let images_dir = outdir.join("images");
    let masks_dir = outdir.join("masks");
    let gt_dir = outdir.join("gt");
    ensure_dir(&images_dir)?;
    ensure_dir(&masks_dir)?;
    ensure_dir(&gt_dir)?;

    save_cameras(&outdir.join("cameras.json"), &scene.views)?;
    for view in &scene.views {
        formats::write_ppm(
            &images_dir.join(image_name(view.view_id)),
            view.image.as_ref().expect("generated views carry images"),
        )?;
    }
    let points = scene.points();
    let ranges = formats::write_point_cloud(&outdir.join("points.ply"), &points)?;
    write_json(&outdir.join("points_provenance.json"), &ranges)?;

    for (instance_id, per_view) in scene.masks() {
        for (view_id, mask) in per_view {
            formats::write_pgm(&masks_dir.join(mask_name(instance_id, view_id)), &mask)?;
        }
    }

    let has_tracks = !scene.tracks.is_empty();
    if has_tracks {
        let records: BTreeMap<u32, Vec<FramePoseRecord>> = spec
            .primitives
            .iter()
            .filter_map(|p| p.track.as_ref().map(|t| (p.id, t.clone())))
            .collect();
        save_tracks(&outdir.join("tracks.json"), &records)?;
    }
    let has_priors = !scene.priors.is_empty();
    if has_priors {
        formats::write_primitives(&outdir.join("priors.ply"), &scene.priors)?;
    }

    for (i, gt) in scene.gt.iter().enumerate() {
        let view_id = scene.views[i].view_id;
        formats::write_pfm_depth(&gt_dir.join(format!("depth_{view_id:06}.pfm")), &gt.depth)?;
        formats::write_pfm_normals(&gt_dir.join(format!("normal_{view_id:06}.pfm")), &gt.normal)?;
    }

    let manifest = SceneManifest {
        cameras: "cameras.json".into(),
        images: "images".into(),
        point_cloud: "points.ply".into(),
        provenance: "points_provenance.json".into(),
        masks: "masks".into(),
        tracks: has_tracks.then(|| "tracks.json".into()),
        priors: has_priors.then(|| "priors.ply".into()),
        config: ConfigOverrides {
            seed: Some(spec.seed),
            ..Default::default()
        },
    };
    write_json(&outdir.join("manifest.json"), &manifest)?;
    Ok(())
}

/// Loads the files a manifest references into pipeline inputs.
pub fn load_scene(manifest_path: &Path) -> Result<(SceneInputs, ConfigOverrides), CommandError> {
    let (manifest, base) = load_manifest(manifest_path)?;
    let mut views = load_cameras(&manifest.resolve(&base, &manifest.cameras))?;
    let images_dir = manifest.resolve(&base, &manifest.images);
    for view in &mut views {
        let img = formats::read_ppm(&images_dir.join(image_name(view.view_id)))?;
        if img.width() != view.intrinsics.width || img.height() != view.intrinsics.height {
            return Err(data_err(format!(
                "view {}: image size {}x{} does not match intrinsics {}x{}",
                view.view_id,
                img.width(),
                img.height(),
                view.intrinsics.width,
                view.intrinsics.height
            )));
        }
        view.image = Some(Arc::new(img));
    }
    let ranges_path = manifest.resolve(&base, &manifest.provenance);
    let text = fs::read_to_string(&ranges_path).map_err(|e| FormatError::io(&ranges_path, e))?;
    let ranges: Vec<formats::ProvenanceRange> = serde_json::from_str(&text)
        .map_err(|e| FormatError::parse(&ranges_path, e.to_string()))?;
    let points =
        formats::read_point_cloud(&manifest.resolve(&base, &manifest.point_cloud), &ranges)?;

    // Masks: every inst_XXXX_view_XXXXXX.pgm in the masks directory.
    let masks_dir = manifest.resolve(&base, &manifest.masks);
    let mut masks: BTreeMap<u32, BTreeMap<u32, MaskRaster>> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(&masks_dir)
        .map_err(|e| FormatError::io(&masks_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = name.strip_prefix("inst_") else {
            continue;
        };
        let Some(rest) = rest.strip_suffix(".pgm") else {
            continue;
        };
        let parts: Vec<&str> = rest.split("_view_").collect();
        if parts.len() != 2 {
            continue;
        }
        let instance_id: u32 = parts[0]
            .parse()
            .map_err(|_| data_err(format!("bad mask file name {name}")))?;
        let view_id: u32 = parts[1]
            .parse()
            .map_err(|_| data_err(format!("bad mask file name {name}")))?;
        masks
            .entry(instance_id)
            .or_default()
            .insert(view_id, formats::read_pgm(&path)?);
    }

    let tracks: BTreeMap<u32, Track> = match &manifest.tracks {
        Some(p) => load_tracks(&manifest.resolve(&base, p))?,
        None => BTreeMap::new(),
    };
    let priors: Vec<GaussianPrimitive> = match &manifest.priors {
        Some(p) => formats::read_primitives(&manifest.resolve(&base, p))?,
        None => Vec::new(),
    };

    let scene = SceneInputs {
        views,
        points,
        masks,
        tracks,
        priors,
    };
    Ok((scene, manifest.config))
}

fn build_config(manifest_cfg: &ConfigOverrides, cli: &ConfigOverrides) -> PipelineConfig {
    PipelineConfig::default().with_overrides(&manifest_cfg.merged_with(cli))
}

#[derive(Serialize)]
struct VoxelCellRecord {
    id: i64,
    centroid: [f64; 3],
    point_count: usize,
    visibility: Vec<u32>,
}

#[derive(Serialize)]
struct VoxelSummary {
    origin: [f64; 3],
    resolution: f64,
    dims: [usize; 3],
    occupied_cells: usize,
    total_points: usize,
    cells: Vec<VoxelCellRecord>,
}

/// Voxelizes the manifest's point cloud and writes the grid as JSON.
pub fn voxelize_cmd(
    manifest_path: &Path,
    out_json: &Path,
    cli: &ConfigOverrides,
) -> Result<(), CommandError> {
    let (scene, manifest_cfg) = load_scene(manifest_path)?;
    let cfg = build_config(&manifest_cfg, cli);
    if scene.points.is_empty() {
        return Err(data_err("point cloud is empty"));
    }
    let (origin, dims) = fit_grid_bounds(&scene.points, cfg.voxel_resolution);
    let grid = voxelize(&scene.points, origin, dims, cfg.voxel_resolution)
        .map_err(|e| data_err(e.to_string()))?;
    let cells: Vec<VoxelCellRecord> = grid
        .iter()
        .map(|(id, rec)| VoxelCellRecord {
            id,
            centroid: [rec.centroid.x, rec.centroid.y, rec.centroid.z],
            point_count: rec.point_count,
            visibility: rec.visibility.iter().copied().collect(),
        })
        .collect();
    let summary = VoxelSummary {
        origin: [origin.x, origin.y, origin.z],
        resolution: cfg.voxel_resolution,
        dims,
        occupied_cells: grid.len(),
        total_points: scene.points.len(),
        cells,
    };
    write_json(out_json, &summary)
}

fn find_view<'a>(views: &'a [CameraView], view_id: u32) -> Result<&'a CameraView, CommandError> {
    views
        .iter()
        .find(|v| v.view_id == view_id)
        .ok_or_else(|| data_err(format!("view {view_id} not found")))
}

/// Rasterizes the voxel depth/index maps for one view.
pub fn rasterize_cmd(
    manifest_path: &Path,
    outdir: &Path,
    view_id: u32,
    mode: RasterizeMode,
    cli: &ConfigOverrides,
) -> Result<(), CommandError> {
    let (scene, manifest_cfg) = load_scene(manifest_path)?;
    let cfg = build_config(&manifest_cfg, cli);
    let view = find_view(&scene.views, view_id)?;
    let (origin, dims) = fit_grid_bounds(&scene.points, cfg.voxel_resolution);
    let grid = voxelize(&scene.points, origin, dims, cfg.voxel_resolution)
        .map_err(|e| data_err(e.to_string()))?;
    let dim = rasterize_visible(&grid, view, mode);
    ensure_dir(outdir)?;
    formats::write_pfm_depth(&outdir.join(format!("depth_{view_id:06}.pfm")), &dim.depth)?;
    formats::write_index_map(&outdir.join(format!("index_{view_id:06}.bin")), &dim.index)?;
    Ok(())
}

#[derive(Serialize)]
struct FlagRecord {
    instance_id: u32,
    status: voxel::InstanceStatus,
    bad_pixels: usize,
    total_pixels: usize,
}

/// Pools the discriminant over every masked view of every instance.
pub fn flag_cmd(
    manifest_path: &Path,
    out_json: &Path,
    cli: &ConfigOverrides,
) -> Result<(), CommandError> {
    let (scene, manifest_cfg) = load_scene(manifest_path)?;
    let cfg = build_config(&manifest_cfg, cli);
    let (origin, dims) = fit_grid_bounds(&scene.points, cfg.voxel_resolution);
    let grid = voxelize(&scene.points, origin, dims, cfg.voxel_resolution)
        .map_err(|e| data_err(e.to_string()))?;
    let mut records = Vec::new();
    let mut cache: BTreeMap<u32, (voxel::DepthIndexMap, crate::splat::RenderOutput)> =
        BTreeMap::new();
    for (&instance_id, per_view) in &scene.masks {
        let mut counts = BadPixelCounts::default();
        for (view_id, mask) in per_view {
            let view = find_view(&scene.views, *view_id)?;
            let (dim, render) = cache.entry(*view_id).or_insert_with(|| {
                (
                    rasterize_visible(&grid, view, RasterizeMode::ViewFiltered),
                    splat_render(&scene.priors, view),
                )
            });
            counts.merge(&flag_counts(mask, dim, &render.hard_depth, cfg.tau_rel));
        }
        records.push(FlagRecord {
            instance_id,
            status: status_from_counts(&counts, cfg.tau_frac),
            bad_pixels: counts.bad,
            total_pixels: counts.total,
        });
    }
    write_json(out_json, &records)
}

#[derive(Serialize)]
struct SelectionReport {
    instance_id: u32,
    reference_view: u32,
    candidates: Vec<crate::select::ViewPairScore>,
    chosen: Vec<u32>,
}

/// Scores the candidate views of one instance and reports the selected
/// supporting subset.
pub fn select_views_cmd(
    manifest_path: &Path,
    out_json: &Path,
    instance_id: u32,
    cli: &ConfigOverrides,
) -> Result<(), CommandError> {
    let (scene, manifest_cfg) = load_scene(manifest_path)?;
    let cfg = build_config(&manifest_cfg, cli);
    let per_view = scene
        .masks
        .get(&instance_id)
        .ok_or_else(|| data_err(format!("instance {instance_id} has no masks")))?;
    let (origin, dims) = fit_grid_bounds(&scene.points, cfg.voxel_resolution);
    let grid = voxelize(&scene.points, origin, dims, cfg.voxel_resolution)
        .map_err(|e| data_err(e.to_string()))?;
    let mut voxels = std::collections::BTreeSet::new();
    for (view_id, mask) in per_view {
        let view = find_view(&scene.views, *view_id)?;
        let dim = rasterize_visible(&grid, view, RasterizeMode::ViewFiltered);
        voxels.extend(instance_voxels(mask, &dim));
    }
    if voxels.is_empty() {
        return Err(data_err(format!("instance {instance_id}: no voxels")));
    }
    let candidates =
        candidate_views(&voxels, &grid, &scene.views).map_err(|e| data_err(e.to_string()))?;
    let max_covisible = candidates
        .iter()
        .filter(|c| per_view.contains_key(&c.view_id))
        .map(voxel::ViewCandidate::covisible_count)
        .max()
        .unwrap_or(0);
    let coverage_floor = (max_covisible / 3).max(1);
    let mask_px = |m: &crate::raster::MaskRaster| m.data().iter().filter(|&&v| v != 0).count();
    let reference_id = candidates
        .iter()
        .filter(|c| per_view.contains_key(&c.view_id) && c.covisible_count() >= coverage_floor)
        .max_by(|a, b| {
            let clip_a = crate::densify::mask_touches_border(&per_view[&a.view_id]);
            let clip_b = crate::densify::mask_touches_border(&per_view[&b.view_id]);
            clip_b
                .cmp(&clip_a)
                .then(mask_px(&per_view[&a.view_id]).cmp(&mask_px(&per_view[&b.view_id])))
                .then(b.view_id.cmp(&a.view_id))
        })
        .map(|c| c.view_id)
        .ok_or_else(|| data_err("no masked candidate view"))?;
    let by_id: BTreeMap<u32, &voxel::ViewCandidate> =
        candidates.iter().map(|c| (c.view_id, c)).collect();
    let view_by_id: BTreeMap<u32, &CameraView> =
        scene.views.iter().map(|v| (v.view_id, v)).collect();
    let reference = by_id[&reference_id];
    let scores: Vec<crate::select::ViewPairScore> = candidates
        .iter()
        .filter(|c| c.view_id != reference_id)
        .map(|c| {
            let (_, dr, ds) = covisible_distances(reference, c);
            pair_score_views(view_by_id[&reference_id], view_by_id[&c.view_id], &dr, &ds)
        })
        .collect();
    let set = CandidateSet::new(
        reference_id,
        scores.iter().map(|s| (s.supporting_id, s.score)).collect(),
        |a, b| {
            let (_, da, db) = covisible_distances(by_id[&a], by_id[&b]);
            pair_score_views(view_by_id[&a], view_by_id[&b], &da, &db).score
        },
    );
    let selection = SelectionConfig {
        seed: cfg.seed,
        ..cfg.selection
    };
    let chosen = crate::select::select_supporting_views(&set, &selection)
        .map_err(|e| data_err(e.to_string()))?;
    write_json(
        out_json,
        &SelectionReport {
            instance_id,
            reference_view: reference_id,
            candidates: scores,
            chosen,
        },
    )
}

/// Runs the full densification pipeline and writes the updated primitive
/// set, the per-instance reports and the stereo artifacts.
pub fn densify_cmd(
    manifest_path: &Path,
    outdir: &Path,
    cli: &ConfigOverrides,
) -> Result<(), CommandError> {
    let (scene, manifest_cfg) = load_scene(manifest_path)?;
    let cfg = build_config(&manifest_cfg, cli);
    let (primitives, reports, artifacts) = run_pipeline(&scene, &cfg);
    ensure_dir(outdir)?;
    formats::write_primitives(&outdir.join("primitives.ply"), &primitives)?;
    write_json(&outdir.join("reports.json"), &reports)?;
    for a in &artifacts {
        let stem = format!("instance_{:04}_pass{}", a.instance_id, a.pass);
        formats::write_pfm_depth(&outdir.join(format!("{stem}_depth.pfm")), &a.mvs_depth)?;
        formats::write_pfm_normals(&outdir.join(format!("{stem}_normal.pfm")), &a.mvs_normal)?;
        formats::write_pgm(&outdir.join(format!("{stem}_survivors.pgm")), &a.survivors)?;
    }
    Ok(())
}

/// Runs the MVS stage alone for one instance (reference choice, view
/// selection, patch matching and consistency filtering).
pub fn mvs_cmd(
    manifest_path: &Path,
    outdir: &Path,
    instance_id: u32,
    cli: &ConfigOverrides,
) -> Result<(), CommandError> {
    let (mut scene, manifest_cfg) = load_scene(manifest_path)?;
    let cfg = build_config(&manifest_cfg, cli);
    // Reuse the pipeline with only this instance's masks; the discriminant is
    // bypassed by treating every instance as incomplete via empty priors.
    scene.masks.retain(|&id, _| id == instance_id);
    if scene.masks.is_empty() {
        return Err(data_err(format!("instance {instance_id} has no masks")));
    }
    scene.priors.clear();
    let (_, reports, artifacts) = run_pipeline(&scene, &cfg);
    ensure_dir(outdir)?;
    write_json(&outdir.join("metrics.json"), &reports)?;
    for a in &artifacts {
        formats::write_pfm_depth(&outdir.join("depth.pfm"), &a.mvs_depth)?;
        formats::write_pfm_normals(&outdir.join("normal.pfm"), &a.mvs_normal)?;
        formats::write_pgm(&outdir.join("survivors.pgm"), &a.survivors)?;
    }
    Ok(())
}

/// Renders a primitive set (the manifest's priors or an explicit PLY) from
/// one view.
pub fn render_cmd(
    manifest_path: &Path,
    outdir: &Path,
    view_id: u32,
    primitives_path: Option<&Path>,
    _cli: &ConfigOverrides,
) -> Result<(), CommandError> {
    let (scene, _) = load_scene(manifest_path)?;
    let view = find_view(&scene.views, view_id)?;
    let primitives = match primitives_path {
        Some(p) => formats::read_primitives(p)?,
        None => scene.priors.clone(),
    };
    let out = splat_render(&primitives, view);
    ensure_dir(outdir)?;
    formats::write_ppm(&outdir.join("color.ppm"), &out.color)?;
    formats::write_pfm_depth(&outdir.join("soft_depth.pfm"), &out.soft_depth)?;
    formats::write_pfm_depth(&outdir.join("hard_depth.pfm"), &out.hard_depth)?;
    formats::write_pfm_normals(&outdir.join("normal.pfm"), &out.normal)?;
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    view_id: u32,
    psnr_db: f64,
    loss: Option<crate::splat::LossBreakdown>,
}

/// Compares a rendered view against the simulator ground truth: PSNR plus
/// the four-term loss breakdown (GT depth/normals standing in for the
/// stereo rasters).
pub fn evaluate_cmd(
    scene_dir: &Path,
    render_dir: &Path,
    view_id: u32,
    out_json: Option<&Path>,
) -> Result<f64, CommandError> {
    let gt_image = formats::read_ppm(&scene_dir.join("images").join(image_name(view_id)))?;
    let gt_depth = formats::read_pfm(&scene_dir.join("gt").join(format!("depth_{view_id:06}.pfm")))?
        .to_depth();
    let gt_normal =
        formats::read_pfm(&scene_dir.join("gt").join(format!("normal_{view_id:06}.pfm")))?
            .to_normals();
    let color = formats::read_ppm(&render_dir.join("color.ppm"))?;
    let soft = formats::read_pfm(&render_dir.join("soft_depth.pfm"))?.to_depth();
    let hard = formats::read_pfm(&render_dir.join("hard_depth.pfm"))?.to_depth();
    let normal = formats::read_pfm(&render_dir.join("normal.pfm"))?.to_normals();
    let value = psnr(&color, &gt_image)?;
    let render = crate::splat::RenderOutput {
        accumulated_alpha: crate::raster::Raster::from_vec(
            color.width(),
            color.height(),
            soft.data().iter().map(|d| if d.is_finite() { 1.0 } else { 0.0 }).collect(),
        ),
        color,
        soft_depth: soft,
        hard_depth: hard,
        normal,
    };
    let loss = total_loss(
        &render,
        &gt_image,
        &gt_depth,
        &gt_normal,
        &crate::splat::LossWeights::default(),
    )
    .ok()
    .map(|(_, b)| b);
    let eval = Evaluation {
        view_id,
        psnr_db: value,
        loss,
    };
    match out_json {
        Some(p) => write_json(p, &eval)?,
        None => println!("{}", serde_json::to_string_pretty(&eval).map_err(|e| data_err(e.to_string()))?),
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn simulate_then_load_round_trips_scene() {
        let dir = tempdir().unwrap();
        let spec = crate::sim::scenes::by_name("moving_box").unwrap();
        let spec_path = dir.path().join("spec.json");
        fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
        let outdir = dir.path().join("scene");
        simulate(&spec_path, &outdir).unwrap();
        let (scene, overrides) = load_scene(&outdir.join("manifest.json")).unwrap();
        assert_eq!(scene.views.len(), 30);
        assert!(!scene.points.is_empty());
        assert!(scene.masks.contains_key(&2));
        assert!(scene.tracks.contains_key(&2));
        assert!(!scene.priors.is_empty());
        assert_eq!(overrides.seed, Some(spec.seed));
    }
}
