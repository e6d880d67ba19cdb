//! Dev probe: criterion-3 style accuracy on planar_street and moving_box.
use std::collections::BTreeSet;
use voxsplat::densify::PipelineConfig;
use voxsplat::geometry::Pixel;
use voxsplat::mvs::*;
use voxsplat::raster::MaskRaster;
use voxsplat::select::*;
use voxsplat::sim::{generate, scenes};
use voxsplat::voxel::*;

fn top5(scene: &voxsplat::sim::SimScene, ref_id: u32, points: &[ProvenancedPoint]) -> Vec<u32> {
    let cfg = PipelineConfig::default();
    let (origin, dims) = fit_grid_bounds(points, cfg.voxel_resolution);
    let grid = voxelize(points, origin, dims, cfg.voxel_resolution).unwrap();
    let all: BTreeSet<i64> = grid.iter().map(|(id, _)| id).collect();
    let cands = candidate_views(&all, &grid, &scene.views).unwrap();
    let rc = cands.iter().find(|c| c.view_id == ref_id).unwrap();
    let rv = scene.views.iter().find(|v| v.view_id == ref_id).unwrap();
    let mut scored: Vec<(u32, f64)> = cands
        .iter()
        .filter(|c| c.view_id != ref_id)
        .map(|c| {
            let (_, dr, ds) = covisible_distances(rc, c);
            let sv = scene.views.iter().find(|v| v.view_id == c.view_id).unwrap();
            (c.view_id, pair_score_views(rv, sv, &dr, &ds).score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(5);
    scored.into_iter().map(|(id, _)| id).collect()
}

fn accuracy_per_instance(scene: &voxsplat::sim::SimScene, ref_id: u32, sups: &[u32], mask: &MaskRaster, label: &str) {
    let rv = scene.views.iter().find(|v| v.view_id == ref_id).unwrap().clone();
    let sup_views: Vec<_> = sups.iter().map(|id| scene.views.iter().find(|v| v.view_id == *id).unwrap().clone()).collect();
    let cfg = PatchMatchConfig { seed: 3, ..Default::default() };
    let map = patchmatch_iterate(&rv, &sup_views, None, Some(mask), &cfg).unwrap();
    let gi = scene.views.iter().position(|v| v.view_id == ref_id).unwrap();
    let gt = &scene.gt[gi];
    for inst in 0..5i64 {
        let (mut act, mut conv, mut dok, mut nok) = (0usize, 0usize, 0usize, 0usize);
        for y in 0..map.height() {
            for x in 0..map.width() {
                if mask.get(x, y) == 0 || gt.instance.get(x, y) != inst { continue; }
                act += 1;
                if map.state(x, y) != PixelState::Converged { continue; }
                let ray = rv.intrinsics.ray(Pixel::new(x as f64, y as f64));
                let zgt = gt.depth.get(x, y) / ray.norm();
                if !zgt.is_finite() { continue; }
                conv += 1;
                let z = map.depth_z(x, y, &rv.intrinsics).unwrap();
                let n = map.plane(x, y).normal;
                let g = gt.normal.get(x, y);
                let dot = (n.x * g[0] + n.y * g[1] + n.z * g[2]).abs().min(1.0);
                if (z - zgt).abs() / zgt < 0.01 { dok += 1; }
                if dot.acos().to_degrees() <= 5.0 { nok += 1; }
            }
        }
        if act > 0 {
            println!("{label} inst {inst}: act {act} conv {conv} depth-ok {:.1}% normal-ok {:.1}%",
                100.0 * dok as f64 / conv.max(1) as f64, 100.0 * nok as f64 / conv.max(1) as f64);
        }
    }
}

fn accuracy(scene: &voxsplat::sim::SimScene, ref_id: u32, sups: &[u32], mask: &MaskRaster, label: &str, single: bool) {
    accuracy_cfg(scene, ref_id, sups, mask, label, single, None, &PatchMatchConfig { seed: 3, ..Default::default() });
}

fn accuracy_cfg(scene: &voxsplat::sim::SimScene, ref_id: u32, sups: &[u32], mask: &MaskRaster, label: &str, single: bool, init: Option<&InitRasters>, cfg: &PatchMatchConfig) {
    let rv = scene.views.iter().find(|v| v.view_id == ref_id).unwrap().clone();
    let sup_views: Vec<_> = sups.iter().map(|id| scene.views.iter().find(|v| v.view_id == *id).unwrap().clone()).collect();
    let t = std::time::Instant::now();
    let map = if single {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        pool.install(|| patchmatch_iterate(&rv, &sup_views, init, Some(mask), cfg).unwrap())
    } else {
        patchmatch_iterate(&rv, &sup_views, init, Some(mask), cfg).unwrap()
    };
    let el = t.elapsed().as_secs_f64();
    let gi = scene.views.iter().position(|v| v.view_id == ref_id).unwrap();
    let gt = &scene.gt[gi];
    let (mut conv, mut good) = (0usize, 0usize);
    let (mut depth_ok, mut normal_ok) = (0usize, 0usize);
    for y in 0..map.height() {
        for x in 0..map.width() {
            if mask.get(x, y) == 0 || map.state(x, y) != PixelState::Converged { continue; }
            let ray = rv.intrinsics.ray(Pixel::new(x as f64, y as f64));
            let zgt = gt.depth.get(x, y) / ray.norm();
            if !zgt.is_finite() { continue; }
            conv += 1;
            let z = map.depth_z(x, y, &rv.intrinsics).unwrap();
            let n = map.plane(x, y).normal;
            let g = gt.normal.get(x, y);
            let dot = (n.x * g[0] + n.y * g[1] + n.z * g[2]).abs().min(1.0);
            let dok = (z - zgt).abs() / zgt < 0.01;
            let nok = dot.acos().to_degrees() <= 5.0;
            if dok { depth_ok += 1; }
            if nok { normal_ok += 1; }
            if dok && nok {
                good += 1;
            }
        }
    }
    println!("{label}: ref {ref_id} sups {sups:?} conv {conv} good {:.2}% (depth {:.2}% normal {:.2}%) time {el:.1}s",
        100.0 * good as f64 / conv.max(1) as f64,
        100.0 * depth_ok as f64 / conv.max(1) as f64,
        100.0 * normal_ok as f64 / conv.max(1) as f64);
}

fn main() {
    // planar_street: full-street mask (all instances) on middle front cam.
    let scene = generate(&scenes::planar_street()).unwrap();
    let ref_id = 12u32;
    let sups = top5(&scene, ref_id, &scene.points());
    let gi = scene.views.iter().position(|v| v.view_id == ref_id).unwrap();
    let gt = &scene.gt[gi];
    let mut mask = MaskRaster::filled(320, 240, 0);
    for i in 0..320 * 240 {
        if gt.instance.data()[i] >= 0 {
            mask.data_mut()[i] = 1;
        }
    }
    accuracy(&scene, ref_id, &sups, &mask, "street(mt)", false);
    // With the paper's gaussian-render init.
    let rv = scene.views.iter().find(|v| v.view_id == ref_id).unwrap();
    let render = voxsplat::splat::splat_render(&scene.priors, rv);
    let init = InitRasters { depth: render.hard_depth.clone(), normal: render.normal.clone() };
    accuracy_cfg(&scene, ref_id, &sups, &mask, "street(init,1t)", true, Some(&init),
        &PatchMatchConfig { seed: 3, ..Default::default() });
    accuracy_cfg(&scene, ref_id, &sups, &mask, "street(init,w15,1t)", true, Some(&init),
        &PatchMatchConfig { seed: 3, window: 15, ..Default::default() });
    accuracy_cfg(&scene, ref_id, &sups, &mask, "street(w15)", false, None,
        &PatchMatchConfig { seed: 3, window: 15, ..Default::default() });

    // moving_box in the object frame.
    let scene = generate(&scenes::moving_box()).unwrap();
    let track = &scene.tracks[&2];
    let obj_views = object_frame_views(&scene.views, track).unwrap();
    let mut obj_scene = scene.clone();
    obj_scene.views = obj_views;
    let ref_id = 12u32; // frame 4 front cam; box near center
    let masks = scene.masks();
    let mask = &masks[&2][&ref_id];
    // supporting: frames 1..8 front cam in object frame
    let sups: Vec<u32> = vec![3, 6, 9, 15, 18];
    accuracy(&obj_scene, ref_id, &sups, mask, "movbox(obj)", false);
    accuracy_cfg(&obj_scene, ref_id, &sups, mask, "movbox(band)", false, None,
        &PatchMatchConfig { seed: 3, depth_range: (5.0, 14.0), ..Default::default() });
}
