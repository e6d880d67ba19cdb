//! Dev probe: movbox wall bad-pixel anatomy.
use voxsplat::densify::PipelineConfig;
use voxsplat::sim::{generate, scenes};
use voxsplat::splat::splat_render;
use voxsplat::voxel::*;

fn main() {
    let spec = scenes::moving_box();
    let scene = generate(&spec).unwrap();
    let cfg = PipelineConfig::default();
    let points = scene.points();
    let (origin, dims) = fit_grid_bounds(&points, cfg.voxel_resolution);
    let grid = voxelize(&points, origin, dims, cfg.voxel_resolution).unwrap();
    let masks = scene.masks();
    for (vid, mask) in masks[&1].iter().take(2) {
        let view = scene.views.iter().find(|v| v.view_id == *vid).unwrap();
        let dim = rasterize_visible(&grid, view, RasterizeMode::AllVoxels);
        let render = splat_render(&scene.priors, view);
        let mut bad = 0; let mut ok = 0;
        let mut missing = 0; let mut larger = 0;
        let mut v_hist_bad = [0usize; 8];
        let mut v_hist_tot = [0usize; 8];
        let mut samples = vec![];
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) == 0 { continue; }
                let v = dim.depth.get(x, y);
                if !v.is_finite() { continue; }
                let g = render.hard_depth.get(x, y);
                let b = (y * 8 / mask.height()).min(7);
                v_hist_tot[b] += 1;
                let is_bad = !g.is_finite() || g > v * 1.1;
                if is_bad {
                    bad += 1;
                    v_hist_bad[b] += 1;
                    if g.is_finite() { larger += 1; if samples.len() < 6 && y % 11 == 0 { samples.push((x, y, v, g)); } } else { missing += 1 }
                } else { ok += 1 }
            }
        }
        println!("view {vid}: bad {bad} (miss {missing} larger {larger}) ok {ok}");
        println!("  bad bands {v_hist_bad:?}");
        println!("  tot bands {v_hist_tot:?}");
        for s in samples { println!("  larger: {s:?}"); }
    }
}
