//! Dev probe: cost of the GT plane vs the converged plane at wall pixels.
use voxsplat::geometry::*;
use voxsplat::mvs::*;
use voxsplat::raster::luma_raster;
use voxsplat::sim::{generate, scenes};

fn main() {
    let scene = generate(&scenes::planar_street()).unwrap();
    let ref_id = 12u32;
    let rv = scene.views.iter().find(|v| v.view_id == ref_id).unwrap();
    let gi = scene.views.iter().position(|v| v.view_id == ref_id).unwrap();
    let gt = &scene.gt[gi];
    let ref_luma = luma_raster(rv.image.as_ref().unwrap());
    for sup_id in [13u32, 14, 16, 19, 10] {
        let sv = scene.views.iter().find(|v| v.view_id == sup_id).unwrap();
        let sup_luma = luma_raster(sv.image.as_ref().unwrap());
        let rel = relative_pose(rv, sv);
        // A handful of wall-1 pixels.
        let mut shown = 0;
        for (x, y) in [(60usize, 100usize), (90, 120), (40, 80), (120, 110), (75, 140)] {
            if gt.instance.get(x, y) != 1 { continue; }
            let ray = rv.intrinsics.ray(Pixel::new(x as f64, y as f64));
            let zgt = gt.depth.get(x, y) / ray.norm();
            let n = gt.normal.get(x, y);
            let hyp = plane_from_depth_normal(
                Pixel::new(x as f64, y as f64), zgt,
                nalgebra::Vector3::new(n[0], n[1], n[2]), &rv.intrinsics).unwrap();
            let c = photometric_cost(&ref_luma, &sup_luma, (x, y), &hyp,
                &rv.intrinsics, &sv.intrinsics, &rel, 11);
            println!("sup {sup_id} px ({x},{y}) inst {} zgt {:.2}: GT-plane cost {:.4}", gt.instance.get(x, y), zgt, c);
            shown += 1;
            if shown >= 3 { break; }
        }
    }
}
