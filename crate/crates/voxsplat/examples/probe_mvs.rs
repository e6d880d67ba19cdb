//! Dev probe: which consistency gate rejects accurate pixels.
use voxsplat::geometry::*;
use voxsplat::mvs::*;
use voxsplat::sim::{generate, scenes};

fn main() {
    let scene = generate(&scenes::sparse_lidar_holes()).unwrap();
    let masks = scene.masks();
    let sign = &masks[&2];
    let ref_id = 13u32;
    let sup_ids = [15u32, 16, 12, 10, 7, 6];
    let rv = scene.views.iter().find(|v| v.view_id == ref_id).unwrap();
    let sups: Vec<CameraView> = sup_ids.iter().map(|id| scene.views.iter().find(|v| v.view_id == *id).unwrap().clone()).collect();
    let cfg = PatchMatchConfig { seed: 42, ..Default::default() };
    let ref_map = patchmatch_iterate(rv, &sups, None, Some(&sign[&ref_id]), &cfg).unwrap();
    // one supporting map
    let sup_id = 16u32;
    let sv = scene.views.iter().find(|v| v.view_id == sup_id).unwrap();
    let mut others = vec![rv.clone()];
    others.extend(sup_ids.iter().filter(|i| **i != sup_id).map(|id| scene.views.iter().find(|v| v.view_id == *id).unwrap().clone()));
    let sup_map = patchmatch_iterate(sv, &others, None, Some(&sign[&sup_id]), &cfg).unwrap();
    let rel = relative_pose(rv, sv);
    let gi = scene.views.iter().position(|v| v.view_id == ref_id).unwrap();
    let gt = &scene.gt[gi];
    let mut fail_landing = 0; let mut pass = 0;
    let (mut fr, mut fd, mut fn_) = (0, 0, 0);
    let mut normal_errs = vec![];
    for y in 0..240 {
        for x in 0..320 {
            if sign[&ref_id].get(x, y) == 0 || ref_map.state(x, y) != PixelState::Converged { continue; }
            // only look at ACCURATE ref pixels
            let z = ref_map.depth_z(x, y, &rv.intrinsics).unwrap();
            let ray = rv.intrinsics.ray(Pixel::new(x as f64, y as f64));
            let zgt = gt.depth.get(x, y) / ray.norm();
            if !zgt.is_finite() || (z - zgt).abs() / zgt > 0.01 { continue; }
            let c = geometric_consistency(&ref_map, &sup_map, (x, y), &rv.intrinsics, &sv.intrinsics, &rel, &cfg);
            if c.pass { pass += 1; continue; }
            if !c.reproj_px.is_finite() { fail_landing += 1; continue; }
            if c.reproj_px > cfg.geo_max_px { fr += 1; }
            if c.rel_depth > cfg.geo_max_rel { fd += 1; }
            if c.normal_deg > cfg.geo_max_deg { fn_ += 1; }
            normal_errs.push(c.normal_deg);
        }
    }
    println!("accurate ref pixels vs sup 16: pass {pass}, no-landing {fail_landing}, fail reproj {fr} depth {fd} normal {fn_}");
    normal_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !normal_errs.is_empty() {
        println!("failing normal_deg median {:.1} p90 {:.1}", normal_errs[normal_errs.len()/2], normal_errs[normal_errs.len()*9/10]);
    }
    // GT normal error of converged ref pixels
    let mut nerr = vec![];
    for y in 0..240 {
        for x in 0..320 {
            if sign[&ref_id].get(x, y) == 0 || ref_map.state(x, y) != PixelState::Converged { continue; }
            let n = ref_map.plane(x, y).normal;
            let g = gt.normal.get(x, y);
            if g.iter().all(|v| *v == 0.0) { continue; }
            let dot = (n.x * g[0] + n.y * g[1] + n.z * g[2]).abs().min(1.0);
            nerr.push(dot.acos().to_degrees());
        }
    }
    nerr.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("ref normals vs GT: median {:.1} p75 {:.1} p90 {:.1}", nerr[nerr.len()/2], nerr[nerr.len()*3/4], nerr[nerr.len()*9/10]);
}
