//! Dev probe: pooled discriminant per instance, across scenes and deletions.
use voxsplat::densify::PipelineConfig;
use voxsplat::sim::{generate, scenes, SceneSpec};
use voxsplat::splat::splat_render;
use voxsplat::voxel::*;

fn flags(spec: &SceneSpec, label: &str) {
    let scene = generate(spec).unwrap();
    let cfg = PipelineConfig::default();
    let points = scene.points();
    let (origin, dims) = fit_grid_bounds(&points, cfg.voxel_resolution);
    let grid = voxelize(&points, origin, dims, cfg.voxel_resolution).unwrap();
    let masks = scene.masks();
    let mut cache = std::collections::BTreeMap::new();
    for (inst, per_view) in &masks {
        let mut counts = BadPixelCounts::default();
        for (vid, mask) in per_view {
            let view = scene.views.iter().find(|v| v.view_id == *vid).unwrap();
            let entry = cache.entry(*vid).or_insert_with(|| {
                (
                    rasterize_visible(&grid, view, RasterizeMode::ViewFiltered),
                    splat_render(&scene.priors, view),
                )
            });
            counts.merge(&flag_counts(mask, &entry.0, &entry.1.hard_depth, cfg.tau_rel));
        }
        println!(
            "{label} inst {inst}: {:?} ({:.1}%)",
            status_from_counts(&counts, cfg.tau_frac),
            100.0 * counts.bad as f64 / counts.total.max(1) as f64
        );
    }
}

fn main() {
    flags(&scenes::sparse_lidar_holes(), "sparse");
    flags(&scenes::moving_box(), "movbox");
    flags(&scenes::planar_street(), "street");
    flags(&scenes::occluded_sign(), "occl  ");
    for target in [0u32, 1, 2, 3, 4] {
        let mut spec = scenes::occluded_sign();
        spec.priors.as_mut().unwrap().exclude_instances = vec![target];
        flags(&spec, &format!("occl-{target}"));
    }
}
