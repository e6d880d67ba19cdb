//! Patch-match multi-view stereo.
//!
//! Every pixel of the reference view carries a local plane hypothesis
//! (d, n) in the reference camera frame satisfying z * n . K^-1 p~ + d = 0.
//! Hypotheses are scored by warping a window into each supporting view with
//! the plane-induced homography and correlating intensities (cost = 1 - NCC,
//! in [0, 2]); they are refined by red-black checkerboard propagation from
//! the 4-neighbors plus one random perturbation and one fresh sample per
//! iteration. Surviving pixels must pass cross-view geometric consistency in
//! a minimum number of supporting views.
//!
//! Rigid moving objects are handled by re-expressing all camera poses in the
//! object's per-timestamp frame; images stay untouched.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{project, relative_pose, unproject, CameraIntrinsics, CameraView, Pixel, RigidTransform};
use crate::raster::{bilinear, luma_raster, DepthRaster, LumaRaster, MaskRaster, NormalRaster, Raster};
use crate::rng::KeyedRng;

const GRAZING_EPS: f64 = 1e-6;
/// Worst patch cost: matched nothing.
pub const COST_MAX: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum MvsError {
    #[error("plane is parallel to the pixel ray")]
    GrazingPlane,
    #[error("plane offset d = 0 is degenerate")]
    DegeneratePlane,
    #[error("warped point falls behind the supporting camera")]
    BehindCamera,
    #[error("depth must be positive (got {0})")]
    NonPositiveDepth(f64),
    #[error("patch matching needs at least one supporting view")]
    NoSupportingViews,
    #[error("object track has no pose within half a frame period of t = {0}")]
    TrackGap(f64),
}

/// Local plane in the reference camera frame: unit normal `n` and offset `d`
/// with z * n . K^-1 p~ + d = 0 at the anchor pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneHypothesis {
    pub d: f64,
    pub normal: Vector3<f64>,
}

impl PlaneHypothesis {
    /// Placeholder for pixels without a usable hypothesis.
    pub fn invalid() -> Self {
        Self {
            d: f64::NAN,
            normal: Vector3::zeros(),
        }
    }
}

/// Builds the plane through the point at depth `z` under pixel `p` with
/// normal `n`.
pub fn plane_from_depth_normal(
    p: Pixel,
    z: f64,
    normal: Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Result<PlaneHypothesis, MvsError> {
    if z <= 0.0 {
        return Err(MvsError::NonPositiveDepth(z));
    }
    let ray = intr.ray(p);
    if normal.dot(&ray).abs() < GRAZING_EPS {
        return Err(MvsError::GrazingPlane);
    }
    let point = unproject(intr, p, z).expect("z > 0");
    Ok(PlaneHypothesis {
        d: -normal.dot(&point),
        normal,
    })
}

/// Camera-frame depth of the plane under pixel `p`.
pub fn depth_from_plane(p: Pixel, hyp: &PlaneHypothesis, intr: &CameraIntrinsics) -> Result<f64, MvsError> {
    let denom = hyp.normal.dot(&intr.ray(p));
    if denom.abs() < GRAZING_EPS {
        return Err(MvsError::GrazingPlane);
    }
    Ok(-hyp.d / denom)
}

fn intrinsic_matrix(intr: &CameraIntrinsics) -> Matrix3<f64> {
    Matrix3::new(intr.fx, 0.0, intr.cx, 0.0, intr.fy, intr.cy, 0.0, 0.0, 1.0)
}

fn intrinsic_inverse(intr: &CameraIntrinsics) -> Matrix3<f64> {
    Matrix3::new(
        1.0 / intr.fx,
        0.0,
        -intr.cx / intr.fx,
        0.0,
        1.0 / intr.fy,
        -intr.cy / intr.fy,
        0.0,
        0.0,
        1.0,
    )
}

/// Plane-induced homography K_s (R - t n^T / d) K_r^-1 mapping reference
/// pixels into the supporting view.
pub fn homography_matrix(
    hyp: &PlaneHypothesis,
    intr_ref: &CameraIntrinsics,
    intr_sup: &CameraIntrinsics,
    rel: &RigidTransform,
) -> Result<Matrix3<f64>, MvsError> {
    if hyp.d == 0.0 {
        return Err(MvsError::DegeneratePlane);
    }
    let r = rel.rotation().to_rotation_matrix().into_inner();
    let t = rel.translation();
    let mid = r - t * hyp.normal.transpose() / hyp.d;
    Ok(intrinsic_matrix(intr_sup) * mid * intrinsic_inverse(intr_ref))
}

/// Warps a reference pixel into the supporting view through the plane.
pub fn homography_warp(
    p: Pixel,
    hyp: &PlaneHypothesis,
    intr_ref: &CameraIntrinsics,
    intr_sup: &CameraIntrinsics,
    rel: &RigidTransform,
) -> Result<Pixel, MvsError> {
    let h = homography_matrix(hyp, intr_ref, intr_sup, rel)?;
    let q = h * Vector3::new(p.u, p.v, 1.0);
    if q.z <= 0.0 {
        return Err(MvsError::BehindCamera);
    }
    Ok(Pixel::new(q.x / q.z, q.y / q.z))
}

/// Patch-match thresholds and schedule.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PatchMatchConfig {
    /// Odd patch side length in pixels.
    pub window: usize,
    pub iterations: usize,
    /// NCC-cost acceptance threshold.
    pub cost_max: f64,
    /// Cross-view reprojection tolerance, pixels.
    pub geo_max_px: f64,
    /// Cross-view relative depth tolerance.
    pub geo_max_rel: f64,
    /// Cross-view normal angle tolerance, degrees.
    pub geo_max_deg: f64,
    /// Supporting views that must agree for a pixel to survive.
    pub min_consistent: usize,
    /// Sampling range for random depth hypotheses, meters.
    pub depth_range: (f64, f64),
    pub seed: u64,
}

impl Default for PatchMatchConfig {
    fn default() -> Self {
        Self {
            window: 11,
            iterations: 8,
            cost_max: 0.6,
            geo_max_px: 1.0,
            geo_max_rel: 0.02,
            geo_max_deg: 10.0,
            min_consistent: 2,
            depth_range: (0.5, 60.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelState {
    Invalid,
    Random,
    Propagated,
    Converged,
}

/// Per-pixel plane hypotheses with costs and states.
#[derive(Debug, Clone)]
pub struct HypothesisMap {
    width: usize,
    height: usize,
    planes: Vec<PlaneHypothesis>,
    costs: Vec<f64>,
    states: Vec<PixelState>,
}

impl HypothesisMap {
    pub fn from_parts(
        width: usize,
        height: usize,
        planes: Vec<PlaneHypothesis>,
        costs: Vec<f64>,
        states: Vec<PixelState>,
    ) -> Self {
        assert_eq!(planes.len(), width * height);
        assert_eq!(costs.len(), width * height);
        assert_eq!(states.len(), width * height);
        Self {
            width,
            height,
            planes,
            costs,
            states,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn plane(&self, x: usize, y: usize) -> &PlaneHypothesis {
        &self.planes[y * self.width + x]
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize) -> f64 {
        self.costs[y * self.width + x]
    }

    #[inline]
    pub fn state(&self, x: usize, y: usize) -> PixelState {
        self.states[y * self.width + x]
    }

    pub fn converged_count(&self) -> usize {
        self.states.iter().filter(|&&s| s == PixelState::Converged).count()
    }

    /// Camera-frame plane depth z at a pixel, if the hypothesis is usable.
    pub fn depth_z(&self, x: usize, y: usize, intr: &CameraIntrinsics) -> Option<f64> {
        if self.state(x, y) == PixelState::Invalid {
            return None;
        }
        depth_from_plane(Pixel::new(x as f64, y as f64), self.plane(x, y), intr)
            .ok()
            .filter(|z| *z > 0.0)
    }

    /// Euclidean ray-distance raster over converged pixels.
    pub fn depth_raster(&self, intr: &CameraIntrinsics) -> DepthRaster {
        let mut out = DepthRaster::filled(self.width, self.height, f64::INFINITY);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.state(x, y) != PixelState::Converged {
                    continue;
                }
                if let Some(z) = self.depth_z(x, y, intr) {
                    let ray = intr.ray(Pixel::new(x as f64, y as f64));
                    out.set(x, y, z * ray.norm());
                }
            }
        }
        out
    }

    /// Camera-frame normal raster over converged pixels.
    pub fn normal_raster(&self) -> NormalRaster {
        let mut out = NormalRaster::filled(self.width, self.height, [0.0; 3]);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.state(x, y) == PixelState::Converged {
                    let n = self.plane(x, y).normal;
                    out.set(x, y, [n.x, n.y, n.z]);
                }
            }
        }
        out
    }
}

/// Cost of matching the window around `anchor` against a supporting view
/// through the plane hypothesis: 1 - NCC, worst (2) when the window leaves
/// either image, the warp degenerates, or a patch has no variance.
#[allow(clippy::too_many_arguments)]
pub fn photometric_cost(
    ref_luma: &LumaRaster,
    sup_luma: &LumaRaster,
    anchor: (usize, usize),
    hyp: &PlaneHypothesis,
    intr_ref: &CameraIntrinsics,
    intr_sup: &CameraIntrinsics,
    rel: &RigidTransform,
    window: usize,
) -> f64 {
    debug_assert!(window >= 3 && window % 2 == 1);
    let half = window / 2;
    let (ax, ay) = anchor;
    if ax < half
        || ay < half
        || ax + half >= ref_luma.width()
        || ay + half >= ref_luma.height()
    {
        return COST_MAX;
    }
    let Ok(h) = homography_matrix(hyp, intr_ref, intr_sup, rel) else {
        return COST_MAX;
    };
    let n = (window * window) as f64;
    let mut sum_r = 0.0;
    let mut sum_s = 0.0;
    let mut sum_rr = 0.0;
    let mut sum_ss = 0.0;
    let mut sum_rs = 0.0;
    for dy in 0..window {
        let v = (ay + dy - half) as f64;
        for dx in 0..window {
            let u = (ax + dx - half) as f64;
            let w = h * Vector3::new(u, v, 1.0);
            if w.z <= 1e-12 {
                return COST_MAX;
            }
            let Some(s) = bilinear(sup_luma, w.x / w.z, w.y / w.z) else {
                return COST_MAX;
            };
            let r = ref_luma.get(ax + dx - half, ay + dy - half);
            sum_r += r;
            sum_s += s;
            sum_rr += r * r;
            sum_ss += s * s;
            sum_rs += r * s;
        }
    }
    let var_r = n * sum_rr - sum_r * sum_r;
    let var_s = n * sum_ss - sum_s * sum_s;
    if var_r < 1e-18 || var_s < 1e-18 {
        return COST_MAX;
    }
    let ncc = (n * sum_rs - sum_r * sum_s) / (var_r * var_s).sqrt();
    (1.0 - ncc.clamp(-1.0, 1.0)).clamp(0.0, COST_MAX)
}

/// Outcome of one cross-view hypothesis comparison.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyCheck {
    pub pass: bool,
    pub reproj_px: f64,
    pub rel_depth: f64,
    pub normal_deg: f64,
}

impl ConsistencyCheck {
    fn fail() -> Self {
        Self {
            pass: false,
            reproj_px: f64::INFINITY,
            rel_depth: f64::INFINITY,
            normal_deg: f64::INFINITY,
        }
    }
}

/// Forward-warps the reference pixel, looks up the supporting hypothesis and
/// back-warps; passes when the round trip, the depth gap and the normal
/// angle all stay inside the configured tolerances.
#[allow(clippy::too_many_arguments)]
pub fn geometric_consistency(
    ref_map: &HypothesisMap,
    sup_map: &HypothesisMap,
    p: (usize, usize),
    intr_ref: &CameraIntrinsics,
    intr_sup: &CameraIntrinsics,
    rel: &RigidTransform,
    cfg: &PatchMatchConfig,
) -> ConsistencyCheck {
    let pixel = Pixel::new(p.0 as f64, p.1 as f64);
    let hyp_r = ref_map.plane(p.0, p.1);
    let Some(z_r) = ref_map.depth_z(p.0, p.1, intr_ref) else {
        return ConsistencyCheck::fail();
    };
    let Ok(warped) = homography_warp(pixel, hyp_r, intr_ref, intr_sup, rel) else {
        return ConsistencyCheck::fail();
    };
    let qx = warped.u.round();
    let qy = warped.v.round();
    if qx < 0.0 || qy < 0.0 || qx as usize >= sup_map.width() || qy as usize >= sup_map.height() {
        return ConsistencyCheck::fail();
    }
    let q = (qx as usize, qy as usize);
    if sup_map.state(q.0, q.1) != PixelState::Converged {
        return ConsistencyCheck::fail();
    }
    let Some(z_s) = sup_map.depth_z(q.0, q.1, intr_sup) else {
        return ConsistencyCheck::fail();
    };
    let x_sup = unproject(intr_sup, Pixel::new(qx, qy), z_s).expect("z > 0");
    let back = rel.inverse().transform_point(&x_sup);
    if back.z <= 0.0 {
        return ConsistencyCheck::fail();
    }
    let Ok((reprojected, _)) = project(intr_ref, &back) else {
        return ConsistencyCheck::fail();
    };
    let reproj_px = reprojected.distance(&pixel);
    let rel_depth = (back.z - z_r).abs() / z_r;
    let n_sup_in_ref = rel.rotation().inverse() * sup_map.plane(q.0, q.1).normal;
    let dot = hyp_r.normal.dot(&n_sup_in_ref).clamp(-1.0, 1.0);
    let normal_deg = dot.acos().to_degrees();
    ConsistencyCheck {
        pass: reproj_px <= cfg.geo_max_px
            && rel_depth <= cfg.geo_max_rel
            && normal_deg <= cfg.geo_max_deg,
        reproj_px,
        rel_depth,
        normal_deg,
    }
}

/// Optional initial depth/normal rasters (rendered from the current
/// primitives). Depth is Euclidean ray distance, normals camera-frame.
#[derive(Debug, Clone)]
pub struct InitRasters {
    pub depth: DepthRaster,
    pub normal: NormalRaster,
}

struct SupportContext {
    intr: CameraIntrinsics,
    rel: RigidTransform,
    luma: LumaRaster,
}

struct PmContext<'a> {
    intr_ref: CameraIntrinsics,
    ref_luma: LumaRaster,
    sups: Vec<SupportContext>,
    cfg: &'a PatchMatchConfig,
    active: Vec<bool>,
}

const MAX_SUPPORTING: usize = 64;

impl PmContext<'_> {
    /// Mean of the best half of per-view costs, guarded by a coarse depth
    /// sanity window around the sampling range.
    fn aggregated_cost(&self, x: usize, y: usize, plane: &PlaneHypothesis) -> f64 {
        let pixel = Pixel::new(x as f64, y as f64);
        let denom = plane.normal.dot(&self.intr_ref.ray(pixel));
        if denom.abs() < GRAZING_EPS {
            return COST_MAX;
        }
        let z = -plane.d / denom;
        let (z_lo, z_hi) = self.cfg.depth_range;
        if !(z > 0.5 * z_lo && z < 2.0 * z_hi) {
            return COST_MAX;
        }
        let mut buf = [COST_MAX; MAX_SUPPORTING];
        let count = self.sups.len().min(MAX_SUPPORTING);
        for (i, sup) in self.sups.iter().take(count).enumerate() {
            buf[i] = photometric_cost(
                &self.ref_luma,
                &sup.luma,
                (x, y),
                plane,
                &self.intr_ref,
                &sup.intr,
                &sup.rel,
                self.cfg.window,
            );
        }
        let costs = &mut buf[..count];
        costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let take = (count + 1) / 2;
        costs[..take].iter().sum::<f64>() / take as f64
    }

    /// Cosine-weighted camera-facing normal: mostly-frontal surfaces
    /// dominate street scenes, and frontal draws converge much faster while
    /// the perturbation step still explores slants.
    fn random_facing_normal(&self, rng: &mut KeyedRng, ray: &Vector3<f64>) -> Vector3<f64> {
        let w = -ray.normalize();
        let helper = if w.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let t1 = helper.cross(&w).normalize();
        let t2 = w.cross(&t1);
        for _ in 0..8 {
            let u1 = rng.uniform();
            let u2 = rng.uniform();
            let r = u1.sqrt();
            let phi = std::f64::consts::TAU * u2;
            let n = t1 * (r * phi.cos()) + t2 * (r * phi.sin()) + w * (1.0 - u1).sqrt();
            if n.dot(ray) < -1e-3 {
                return n;
            }
        }
        w
    }
}

/// Runs checkerboard patch matching for the reference view against the
/// supporting views. The optional mask restricts the active pixel set; the
/// optional init rasters seed hypotheses where they are present.
pub fn patchmatch_iterate(
    reference: &CameraView,
    supporting: &[CameraView],
    init: Option<&InitRasters>,
    mask: Option<&MaskRaster>,
    cfg: &PatchMatchConfig,
) -> Result<HypothesisMap, MvsError> {
    if supporting.is_empty() {
        return Err(MvsError::NoSupportingViews);
    }
    let ref_image = reference.image.as_ref().expect("reference view needs an image");
    let width = ref_image.width();
    let height = ref_image.height();
    let ref_luma = luma_raster(ref_image);
    let sups: Vec<SupportContext> = supporting
        .iter()
        .map(|sup| SupportContext {
            intr: sup.intrinsics,
            rel: relative_pose(reference, sup),
            luma: luma_raster(sup.image.as_ref().expect("supporting view needs an image")),
        })
        .collect();

    let active: Vec<bool> = match mask {
        Some(m) => {
            assert!(m.width() == width && m.height() == height, "mask size mismatch");
            m.data().iter().map(|&v| v != 0).collect()
        }
        None => vec![true; width * height],
    };
    let ctx = PmContext {
        intr_ref: reference.intrinsics,
        ref_luma,
        sups,
        cfg,
        active,
    };

    let mut planes = vec![PlaneHypothesis::invalid(); width * height];
    let mut costs = vec![COST_MAX; width * height];
    let mut states = vec![PixelState::Invalid; width * height];

    // Initialization: rendered depth/normal where present, random elsewhere.
    let init_results: Vec<(usize, PlaneHypothesis, PixelState)> = (0..width * height)
        .into_par_iter()
        .filter(|&i| ctx.active[i])
        .map(|i| {
            let x = i % width;
            let y = i / width;
            let pixel = Pixel::new(x as f64, y as f64);
            let ray = ctx.intr_ref.ray(pixel);
            if let Some(init) = init {
                let dist = init.depth.get(x, y);
                let n = init.normal.get(x, y);
                let n = Vector3::new(n[0], n[1], n[2]);
                if dist.is_finite() && dist > 0.0 && n.norm() > 0.5 {
                    let z = dist / ray.norm();
                    if let Ok(plane) = plane_from_depth_normal(pixel, z, n.normalize(), &ctx.intr_ref)
                    {
                        return (i, plane, PixelState::Propagated);
                    }
                }
            }
            let mut rng = KeyedRng::from_key(&[cfg.seed, 0x696e_6974, i as u64]);
            let z = rng.range(cfg.depth_range.0, cfg.depth_range.1);
            let n = ctx.random_facing_normal(&mut rng, &ray);
            match plane_from_depth_normal(pixel, z, n, &ctx.intr_ref) {
                Ok(plane) => (i, plane, PixelState::Random),
                Err(_) => (i, PlaneHypothesis::invalid(), PixelState::Invalid),
            }
        })
        .collect();
    for (i, plane, state) in init_results {
        planes[i] = plane;
        states[i] = state;
    }
    let cost_init: Vec<(usize, f64)> = (0..width * height)
        .into_par_iter()
        .filter(|&i| ctx.active[i] && states[i] != PixelState::Invalid)
        .map(|i| (i, ctx.aggregated_cost(i % width, i / width, &planes[i])))
        .collect();
    for (i, c) in cost_init {
        costs[i] = c;
    }

    let phase_pixels: [Vec<usize>; 2] = {
        let mut reds = Vec::new();
        let mut blacks = Vec::new();
        for i in 0..width * height {
            if !ctx.active[i] {
                continue;
            }
            let x = i % width;
            let y = i / width;
            if (x + y) % 2 == 0 {
                reds.push(i);
            } else {
                blacks.push(i);
            }
        }
        [reds, blacks]
    };

    for iter in 0..cfg.iterations {
        let depth_jitter = 0.15 * 0.5f64.powi(iter as i32);
        let normal_jitter = 0.3 * 0.75f64.powi(iter as i32);
        for (phase, pixels) in phase_pixels.iter().enumerate() {
            let updates: Vec<(usize, PlaneHypothesis, f64, PixelState)> = pixels
                .par_iter()
                .map(|&i| {
                    let x = i % width;
                    let y = i / width;
                    let pixel = Pixel::new(x as f64, y as f64);
                    let ray = ctx.intr_ref.ray(pixel);
                    let mut best_plane = planes[i];
                    let mut best_cost = costs[i];
                    let mut best_state = states[i];

                    let consider = |plane: PlaneHypothesis,
                                        state: PixelState,
                                        best_plane: &mut PlaneHypothesis,
                                        best_cost: &mut f64,
                                        best_state: &mut PixelState| {
                        let c = ctx.aggregated_cost(x, y, &plane);
                        if c < *best_cost {
                            *best_cost = c;
                            *best_plane = plane;
                            *best_state = state;
                        }
                    };

                    // 4-neighbor propagation (opposite checkerboard color).
                    let neighbors = [
                        (x.wrapping_sub(1), y),
                        (x + 1, y),
                        (x, y.wrapping_sub(1)),
                        (x, y + 1),
                    ];
                    for (nx, ny) in neighbors {
                        if nx >= width || ny >= height {
                            continue;
                        }
                        let j = ny * width + nx;
                        if !ctx.active[j] || states[j] == PixelState::Invalid {
                            continue;
                        }
                        if planes[j].d == best_plane.d && planes[j].normal == best_plane.normal {
                            continue;
                        }
                        consider(
                            planes[j],
                            PixelState::Propagated,
                            &mut best_plane,
                            &mut best_cost,
                            &mut best_state,
                        );
                    }

                    let mut rng = KeyedRng::from_key(&[
                        cfg.seed,
                        0x7065_7274,
                        i as u64,
                        iter as u64,
                        phase as u64,
                    ]);

                    // Perturb the current hypothesis.
                    if best_state != PixelState::Invalid && best_plane.d.is_finite() {
                        if let Ok(z) = depth_from_plane(pixel, &best_plane, &ctx.intr_ref) {
                            if z > 0.0 {
                                let z2 = z * (1.0 + depth_jitter * (2.0 * rng.uniform() - 1.0));
                                let jitter = Vector3::new(
                                    rng.normal(),
                                    rng.normal(),
                                    rng.normal(),
                                ) * normal_jitter;
                                let mut n2 = best_plane.normal + jitter;
                                let norm = n2.norm();
                                if norm > 1e-9 {
                                    n2 /= norm;
                                    if n2.dot(&ray) > 0.0 {
                                        n2 = -n2;
                                    }
                                    if z2 > 0.0 && n2.dot(&ray).abs() >= GRAZING_EPS {
                                        if let Ok(plane) =
                                            plane_from_depth_normal(pixel, z2, n2, &ctx.intr_ref)
                                        {
                                            consider(
                                                plane,
                                                best_state,
                                                &mut best_plane,
                                                &mut best_cost,
                                                &mut best_state,
                                            );
                                        }
                                    }
                                }
                            }
                        }
                    }

                    // Fresh random sample (re-sampling for unmatched pixels).
                    let z = rng.range(cfg.depth_range.0, cfg.depth_range.1);
                    let n = ctx.random_facing_normal(&mut rng, &ray);
                    if let Ok(plane) = plane_from_depth_normal(pixel, z, n, &ctx.intr_ref) {
                        consider(
                            plane,
                            PixelState::Random,
                            &mut best_plane,
                            &mut best_cost,
                            &mut best_state,
                        );
                    }

                    (i, best_plane, best_cost, best_state)
                })
                .collect();
            for (i, plane, cost, state) in updates {
                planes[i] = plane;
                costs[i] = cost;
                states[i] = state;
            }
        }
    }

    for i in 0..width * height {
        if ctx.active[i] && states[i] != PixelState::Invalid && costs[i] <= cfg.cost_max {
            states[i] = PixelState::Converged;
        }
    }

    Ok(HypothesisMap {
        width,
        height,
        planes,
        costs,
        states,
    })
}

/// Aggregate cross-view agreement statistics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConsistencyResult {
    pub pixels_checked: usize,
    pub pixels_surviving: usize,
    pub mean_reproj_px: f64,
    pub mean_rel_depth: f64,
    pub mean_normal_deg: f64,
}

/// One supporting view's hypothesis map registered against the reference.
pub struct SupportMap {
    pub intr: CameraIntrinsics,
    /// supporting camera from reference camera.
    pub rel: RigidTransform,
    pub map: HypothesisMap,
}

/// Keeps the converged reference pixels whose hypotheses agree with at least
/// `min_consistent` supporting maps. Returns the survivor mask alongside the
/// per-pixel consistent-view counts.
pub fn filter_consistent(
    ref_map: &HypothesisMap,
    intr_ref: &CameraIntrinsics,
    sups: &[SupportMap],
    cfg: &PatchMatchConfig,
) -> (ConsistencyResult, MaskRaster, Raster<u32>) {
    let width = ref_map.width();
    let height = ref_map.height();
    let mut survivors = MaskRaster::filled(width, height, 0);
    let mut counts = Raster::<u32>::filled(width, height, 0);
    let mut checked = 0usize;
    let mut surviving = 0usize;
    let mut sum_reproj = 0.0;
    let mut sum_depth = 0.0;
    let mut sum_normal = 0.0;
    let mut pass_pairs = 0usize;
    for y in 0..height {
        for x in 0..width {
            if ref_map.state(x, y) != PixelState::Converged {
                continue;
            }
            checked += 1;
            let mut passes = 0u32;
            for sup in sups {
                let check = geometric_consistency(
                    ref_map,
                    &sup.map,
                    (x, y),
                    intr_ref,
                    &sup.intr,
                    &sup.rel,
                    cfg,
                );
                if check.pass {
                    passes += 1;
                    sum_reproj += check.reproj_px;
                    sum_depth += check.rel_depth;
                    sum_normal += check.normal_deg;
                    pass_pairs += 1;
                }
            }
            counts.set(x, y, passes);
            if passes as usize >= cfg.min_consistent {
                survivors.set(x, y, 1);
                surviving += 1;
            }
        }
    }
    let denom = pass_pairs.max(1) as f64;
    (
        ConsistencyResult {
            pixels_checked: checked,
            pixels_surviving: surviving,
            mean_reproj_px: sum_reproj / denom,
            mean_rel_depth: sum_depth / denom,
            mean_normal_deg: sum_normal / denom,
        },
        survivors,
        counts,
    )
}

/// Rigid object trajectory: world_from_object poses at sample timestamps.
#[derive(Debug, Clone)]
pub struct Track {
    entries: Vec<(f64, RigidTransform)>,
}

impl Track {
    pub fn new(mut entries: Vec<(f64, RigidTransform)>) -> Self {
        assert!(!entries.is_empty(), "track needs at least one pose");
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self { entries }
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    fn frame_period(&self) -> f64 {
        if self.entries.len() < 2 {
            return f64::INFINITY;
        }
        self.entries
            .windows(2)
            .map(|w| w[1].0 - w[0].0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest-timestamp pose; errors when the gap exceeds half the frame
    /// period.
    pub fn world_from_object(&self, t: f64) -> Result<RigidTransform, MvsError> {
        let mut best = 0usize;
        let mut gap = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let g = (e.0 - t).abs();
            if g < gap {
                gap = g;
                best = i;
            }
        }
        if gap > self.frame_period() / 2.0 {
            return Err(MvsError::TrackGap(t));
        }
        Ok(self.entries[best].1)
    }
}

/// Re-expresses camera poses in the object frame so a rigid moving object
/// becomes static across the returned views.
pub fn object_frame_views(views: &[CameraView], track: &Track) -> Result<Vec<CameraView>, MvsError> {
    views
        .iter()
        .map(|view| {
            let object_from_world = track.world_from_object(view.timestamp)?.inverse();
            let mut out = view.clone();
            out.world_from_camera = object_from_world.compose(&view.world_from_camera);
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ColorRaster;
    use crate::rng::KeyedRng;
    use approx::assert_relative_eq;
    use nalgebra::{Quaternion, UnitQuaternion};
    use std::sync::Arc;

    fn unit_intr() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4)
    }

    #[test]
    fn plane_from_depth_normal_frontoparallel() {
        let intr = unit_intr();
        let hyp = plane_from_depth_normal(
            Pixel::new(0.4, 0.7),
            2.0,
            Vector3::new(0.0, 0.0, -1.0),
            &intr,
        )
        .unwrap();
        assert_relative_eq!(hyp.d, 2.0, epsilon = 1e-12);
        let z = depth_from_plane(Pixel::new(0.4, 0.7), &hyp, &intr).unwrap();
        assert_relative_eq!(z, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn plane_from_depth_normal_slanted() {
        let intr = unit_intr();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let hyp = plane_from_depth_normal(
            Pixel::new(0.0, 0.0),
            2.0,
            Vector3::new(s, 0.0, -s),
            &intr,
        )
        .unwrap();
        assert_relative_eq!(hyp.d, std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn plane_from_zero_depth_errors() {
        let intr = unit_intr();
        assert!(plane_from_depth_normal(
            Pixel::new(0.0, 0.0),
            0.0,
            Vector3::new(0.0, 0.0, -1.0),
            &intr
        )
        .is_err());
    }

    #[test]
    fn identity_pose_warps_to_itself() {
        let intr = unit_intr();
        let hyp = plane_from_depth_normal(
            Pixel::new(0.3, -0.2),
            3.0,
            Vector3::new(0.1, -0.2, -0.9).normalize(),
            &intr,
        )
        .unwrap();
        let p = Pixel::new(0.3, -0.2);
        let q = homography_warp(p, &hyp, &intr, &intr, &RigidTransform::identity()).unwrap();
        assert!(q.distance(&p) < 1e-12);
    }

    #[test]
    fn lateral_translation_hand_example() {
        // Unit intrinsics, plane z = 2 (n = (0,0,-1), d = 2), rel t = (-1,0,0):
        // H = [[1,0,-0.5],[0,1,0],[0,0,1]], so (0.5, 0.3) -> (0, 0.3).
        let intr = unit_intr();
        let hyp = PlaneHypothesis {
            d: 2.0,
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        let rel = RigidTransform::from_translation(Vector3::new(-1.0, 0.0, 0.0));
        let h = homography_matrix(&hyp, &intr, &intr, &rel).unwrap();
        assert_relative_eq!(h[(0, 2)], -0.5, epsilon = 1e-12);
        let q = homography_warp(Pixel::new(0.5, 0.3), &hyp, &intr, &intr, &rel).unwrap();
        assert!(q.distance(&Pixel::new(0.0, 0.3)) < 1e-12);
    }

    #[test]
    fn degenerate_plane_and_behind_camera_error() {
        let intr = unit_intr();
        let hyp = PlaneHypothesis {
            d: 0.0,
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(
            homography_warp(Pixel::new(0.0, 0.0), &hyp, &intr, &intr, &RigidTransform::identity())
                .unwrap_err(),
            MvsError::DegeneratePlane
        );
        let hyp = PlaneHypothesis {
            d: 2.0,
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        // Supporting camera 10 m ahead of the plane at z = 2.
        let rel = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -10.0));
        assert_eq!(
            homography_warp(Pixel::new(0.0, 0.0), &hyp, &intr, &intr, &rel).unwrap_err(),
            MvsError::BehindCamera
        );
    }

    fn random_pose(rng: &mut KeyedRng, max_angle: f64) -> RigidTransform {
        let axis = Vector3::new(rng.normal(), rng.normal(), rng.normal());
        let axis = nalgebra::Unit::new_normalize(axis);
        RigidTransform::new(
            UnitQuaternion::from_axis_angle(&axis, rng.range(-max_angle, max_angle)),
            Vector3::new(rng.range(-0.5, 0.5), rng.range(-0.5, 0.5), rng.range(-0.5, 0.5)),
        )
    }

    #[test]
    fn warp_matches_unproject_transform_project() {
        let intr_r = CameraIntrinsics::new(300.0, 280.0, 160.0, 120.0, 320, 240);
        let intr_s = CameraIntrinsics::new(260.0, 260.0, 158.0, 118.0, 320, 240);
        let mut rng = KeyedRng::from_key(&[88]);
        let mut tested = 0;
        while tested < 10_000 {
            let rel = random_pose(&mut rng, 0.3);
            let p = Pixel::new(rng.range(0.0, 319.0), rng.range(0.0, 239.0));
            let z = rng.range(1.0, 30.0);
            let ray = intr_r.ray(p);
            let mut n = Vector3::new(rng.normal(), rng.normal(), rng.normal());
            if n.norm() < 1e-9 {
                continue;
            }
            n = n.normalize();
            if n.dot(&ray) > 0.0 {
                n = -n;
            }
            if n.dot(&ray).abs() < 1e-3 {
                continue;
            }
            let hyp = plane_from_depth_normal(p, z, n, &intr_r).unwrap();
            // 3D route.
            let x = unproject(&intr_r, p, z).unwrap();
            let x_sup = rel.transform_point(&x);
            if x_sup.z <= 1e-3 {
                continue;
            }
            let (q3d, _) = project(&intr_s, &x_sup).unwrap();
            // Homography route.
            let qh = homography_warp(p, &hyp, &intr_r, &intr_s, &rel).unwrap();
            assert!(
                qh.distance(&q3d) < 1e-6,
                "routes diverge by {} px",
                qh.distance(&q3d)
            );
            tested += 1;
        }
    }

    /// Two-view rig looking at the plane z = depth with analytic textures:
    /// pixel intensity is a smooth function of the world hit point, so the
    /// views are exactly photo-consistent.
    fn plane_rig(depth: f64, baseline: f64, w: usize, h: usize) -> (CameraView, CameraView) {
        let intr = CameraIntrinsics::new(
            w as f64 * 0.9,
            w as f64 * 0.9,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
        );
        let texture = |x: f64, y: f64| -> f32 {
            (0.5 + 0.2 * (3.1 * x).sin() * (2.3 * y).cos()
                + 0.15 * (7.7 * x + 1.3).sin()
                + 0.15 * (6.1 * y - 0.7).cos()) as f32
        };
        let render = |center_x: f64| -> ColorRaster {
            let mut img = ColorRaster::filled(w, h, [0.0; 3]);
            for py in 0..h {
                for px in 0..w {
                    let ray = intr.ray(Pixel::new(px as f64, py as f64));
                    let t = depth / ray.z;
                    let wx = center_x + ray.x * t;
                    let wy = ray.y * t;
                    let v = texture(wx, wy).clamp(0.0, 1.0);
                    img.set(px, py, [v, v, v]);
                }
            }
            img
        };
        let a = CameraView::new(0, 0, 0.0, intr, RigidTransform::identity())
            .with_image(Arc::new(render(0.0)));
        let b = CameraView::new(
            1,
            0,
            0.1,
            intr,
            RigidTransform::from_translation(Vector3::new(baseline, 0.0, 0.0)),
        )
        .with_image(Arc::new(render(baseline)));
        (a, b)
    }

    #[test]
    fn photometric_cost_zero_for_true_plane() {
        let (a, b) = plane_rig(5.0, 0.4, 64, 64);
        // The plane z=5 in the reference camera frame.
        let hyp = plane_from_depth_normal(
            Pixel::new(32.0, 32.0),
            5.0,
            Vector3::new(0.0, 0.0, -1.0),
            &a.intrinsics,
        )
        .unwrap();
        let ref_luma = luma_raster(a.image.as_ref().unwrap());
        let sup_luma = luma_raster(b.image.as_ref().unwrap());
        let rel = relative_pose(&a, &b);
        let cost = photometric_cost(
            &ref_luma,
            &sup_luma,
            (32, 32),
            &hyp,
            &a.intrinsics,
            &b.intrinsics,
            &rel,
            11,
        );
        // Bilinear resampling leaves a small residual on a smooth texture.
        assert!(cost < 5e-3, "cost {cost}");

        let wrong = PlaneHypothesis {
            d: hyp.d * 0.7,
            normal: hyp.normal,
        };
        let bad = photometric_cost(
            &ref_luma,
            &sup_luma,
            (32, 32),
            &wrong,
            &a.intrinsics,
            &b.intrinsics,
            &rel,
            11,
        );
        assert!(bad > cost * 10.0, "wrong-depth cost {bad} vs {cost}");
    }

    #[test]
    fn photometric_cost_integer_shift_is_exactly_zero() {
        // Pure lateral baseline chosen so the warp is an exact -8 px shift:
        // shift = fx * tx / d with fx=57.6, tx=-10/14.4, d=5 -> -8.
        let w = 64;
        let intr = CameraIntrinsics::new(57.6, 57.6, 32.0, 32.0, w, w);
        let mut rng = KeyedRng::from_key(&[123]);
        let mut base = ColorRaster::filled(w, w, [0.0; 3]);
        for v in base.data_mut() {
            let g = rng.uniform() as f32;
            *v = [g, g, g];
        }
        // Supporting image: reference shifted left by 8 pixels.
        let mut sup_img = ColorRaster::filled(w, w, [0.0; 3]);
        for y in 0..w {
            for x in 0..w {
                let sx = (x + 8).min(w - 1);
                sup_img.set(x, y, base.get(sx, y));
            }
        }
        let tx = -8.0 * 5.0 / 57.6;
        let a = CameraView::new(0, 0, 0.0, intr, RigidTransform::identity())
            .with_image(Arc::new(base));
        let b = CameraView::new(
            1,
            0,
            0.1,
            intr,
            RigidTransform::from_translation(Vector3::new(-tx, 0.0, 0.0)),
        )
        .with_image(Arc::new(sup_img));
        let rel = relative_pose(&a, &b);
        let hyp = plane_from_depth_normal(
            Pixel::new(32.0, 32.0),
            5.0,
            Vector3::new(0.0, 0.0, -1.0),
            &intr,
        )
        .unwrap();
        let ref_luma = luma_raster(a.image.as_ref().unwrap());
        let sup_luma = luma_raster(b.image.as_ref().unwrap());
        let cost = photometric_cost(&ref_luma, &sup_luma, (20, 32), &hyp, &intr, &intr, &rel, 11);
        assert!(cost < 1e-6, "cost {cost}");
    }

    #[test]
    fn photometric_cost_negated_patch_is_two() {
        let w = 32;
        let intr = CameraIntrinsics::new(30.0, 30.0, 16.0, 16.0, w, w);
        let mut rng = KeyedRng::from_key(&[9]);
        let mut a_img = ColorRaster::filled(w, w, [0.0; 3]);
        let mut b_img = ColorRaster::filled(w, w, [0.0; 3]);
        for i in 0..w * w {
            let g = rng.uniform() as f32;
            a_img.data_mut()[i] = [g, g, g];
            // Zero-mean negation around 0.5.
            let neg = 1.0 - g;
            b_img.data_mut()[i] = [neg, neg, neg];
        }
        let a = CameraView::new(0, 0, 0.0, intr, RigidTransform::identity())
            .with_image(Arc::new(a_img));
        let b = CameraView::new(1, 0, 0.1, intr, RigidTransform::identity())
            .with_image(Arc::new(b_img));
        let rel = relative_pose(&a, &b);
        let hyp = plane_from_depth_normal(
            Pixel::new(16.0, 16.0),
            4.0,
            Vector3::new(0.0, 0.0, -1.0),
            &intr,
        )
        .unwrap();
        let cost = photometric_cost(
            &luma_raster(a.image.as_ref().unwrap()),
            &luma_raster(b.image.as_ref().unwrap()),
            (16, 16),
            &hyp,
            &intr,
            &intr,
            &rel,
            11,
        );
        assert_relative_eq!(cost, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn photometric_cost_matches_double_loop_oracle() {
        let (a, b) = plane_rig(5.0, 0.4, 64, 64);
        let ref_luma = luma_raster(a.image.as_ref().unwrap());
        let sup_luma = luma_raster(b.image.as_ref().unwrap());
        let rel = relative_pose(&a, &b);
        let hyp = plane_from_depth_normal(
            Pixel::new(30.0, 30.0),
            5.5, // 10% wrong depth
            Vector3::new(0.0, 0.0, -1.0),
            &a.intrinsics,
        )
        .unwrap();
        let window = 11;
        let cost = photometric_cost(
            &ref_luma,
            &sup_luma,
            (30, 30),
            &hyp,
            &a.intrinsics,
            &b.intrinsics,
            &rel,
            window,
        );
        // Direct double-loop NCC oracle using the public warp operation.
        let h = window / 2;
        let mut rs = Vec::new();
        let mut ss = Vec::new();
        for dy in 0..window {
            for dx in 0..window {
                let q = Pixel::new((30 + dx - h) as f64, (30 + dy - h) as f64);
                let wq = homography_warp(q, &hyp, &a.intrinsics, &b.intrinsics, &rel).unwrap();
                rs.push(ref_luma.get(30 + dx - h, 30 + dy - h));
                ss.push(bilinear(&sup_luma, wq.u, wq.v).unwrap());
            }
        }
        let n = rs.len() as f64;
        let mr = rs.iter().sum::<f64>() / n;
        let ms = ss.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vr = 0.0;
        let mut vs = 0.0;
        for i in 0..rs.len() {
            cov += (rs[i] - mr) * (ss[i] - ms);
            vr += (rs[i] - mr).powi(2);
            vs += (ss[i] - ms).powi(2);
        }
        let oracle = 1.0 - cov / (vr * vs).sqrt();
        assert!((cost - oracle).abs() < 1e-9, "cost {cost} oracle {oracle}");
    }

    #[test]
    fn ncc_is_invariant_to_constant_offset() {
        let (a, b) = plane_rig(5.0, 0.4, 64, 64);
        let mut ref_luma = luma_raster(a.image.as_ref().unwrap());
        let sup_luma = luma_raster(b.image.as_ref().unwrap());
        let rel = relative_pose(&a, &b);
        let hyp = plane_from_depth_normal(
            Pixel::new(32.0, 32.0),
            5.0,
            Vector3::new(0.0, 0.0, -1.0),
            &a.intrinsics,
        )
        .unwrap();
        let before = photometric_cost(
            &ref_luma,
            &sup_luma,
            (32, 32),
            &hyp,
            &a.intrinsics,
            &b.intrinsics,
            &rel,
            11,
        );
        for v in ref_luma.data_mut() {
            *v += 0.31;
        }
        let after = photometric_cost(
            &ref_luma,
            &sup_luma,
            (32, 32),
            &hyp,
            &a.intrinsics,
            &b.intrinsics,
            &rel,
            11,
        );
        assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn patchmatch_recovers_plane_and_gt_init_is_fixed_point() {
        let (a, b) = plane_rig(5.0, 0.5, 96, 96);
        let (_, c) = plane_rig(5.0, -0.45, 96, 96);
        let cfg = PatchMatchConfig {
            iterations: 6,
            depth_range: (2.0, 12.0),
            seed: 5,
            ..Default::default()
        };
        let map = patchmatch_iterate(&a, &[b.clone(), c.clone()], None, None, &cfg).unwrap();
        let mut good = 0usize;
        let mut converged = 0usize;
        for y in 8..88 {
            for x in 8..88 {
                if map.state(x, y) != PixelState::Converged {
                    continue;
                }
                converged += 1;
                let z = map.depth_z(x, y, &a.intrinsics).unwrap();
                if (z - 5.0).abs() / 5.0 < 0.01 {
                    good += 1;
                }
            }
        }
        assert!(converged > 3000, "converged {converged}");
        assert!(
            good as f64 >= 0.97 * converged as f64,
            "good {good} of {converged}"
        );

    }

    #[test]
    fn gt_init_is_a_fixed_point_after_one_iteration() {
        // Exact integer-pixel shift between the views: the true plane scores
        // a cost of exactly zero, so no candidate can displace it.
        let w = 64;
        let intr = CameraIntrinsics::new(57.6, 57.6, 32.0, 32.0, w, w);
        let mut rng = KeyedRng::from_key(&[321]);
        let mut base = ColorRaster::filled(w, w, [0.0; 3]);
        for v in base.data_mut() {
            let g = rng.uniform() as f32;
            *v = [g, g, g];
        }
        let mut sup_img = ColorRaster::filled(w, w, [0.0; 3]);
        for y in 0..w {
            for x in 0..w {
                let sx = (x + 8).min(w - 1);
                sup_img.set(x, y, base.get(sx, y));
            }
        }
        let tx = 8.0 * 5.0 / 57.6;
        let a = CameraView::new(0, 0, 0.0, intr, RigidTransform::identity())
            .with_image(Arc::new(base));
        let b = CameraView::new(
            1,
            0,
            0.1,
            intr,
            RigidTransform::from_translation(Vector3::new(tx, 0.0, 0.0)),
        )
        .with_image(Arc::new(sup_img));

        let mut depth = DepthRaster::filled(w, w, f64::INFINITY);
        let mut normal = NormalRaster::filled(w, w, [0.0; 3]);
        for y in 0..w {
            for x in 0..w {
                let ray = intr.ray(Pixel::new(x as f64, y as f64));
                depth.set(x, y, 5.0 / ray.z * ray.norm());
                normal.set(x, y, [0.0, 0.0, -1.0]);
            }
        }
        let init = InitRasters { depth, normal };
        let cfg = PatchMatchConfig {
            iterations: 1,
            depth_range: (2.0, 12.0),
            seed: 9,
            ..Default::default()
        };
        let map = patchmatch_iterate(&a, &[b], Some(&init), None, &cfg).unwrap();
        // Columns whose warped windows stay inside the truly shifted region.
        let mut max_err: f64 = 0.0;
        for y in 6..w - 6 {
            for x in 14..w - 20 {
                assert_eq!(map.state(x, y), PixelState::Converged);
                let z = map.depth_z(x, y, &intr).unwrap();
                max_err = max_err.max((z - 5.0).abs());
            }
        }
        assert!(max_err < 1e-9, "max depth error {max_err}");
    }

    #[test]
    fn textureless_regions_never_converge() {
        let w = 48;
        let intr = CameraIntrinsics::new(40.0, 40.0, 24.0, 24.0, w, w);
        let flat = Arc::new(ColorRaster::filled(w, w, [0.5; 3]));
        let a = CameraView::new(0, 0, 0.0, intr, RigidTransform::identity()).with_image(flat.clone());
        let b = CameraView::new(
            1,
            0,
            0.1,
            intr,
            RigidTransform::from_translation(Vector3::new(0.3, 0.0, 0.0)),
        )
        .with_image(flat);
        let cfg = PatchMatchConfig {
            iterations: 3,
            depth_range: (2.0, 10.0),
            ..Default::default()
        };
        let map = patchmatch_iterate(&a, &[b], None, None, &cfg).unwrap();
        assert_eq!(map.converged_count(), 0);
    }

    #[test]
    fn mask_isolates_inactive_pixels() {
        let (a, b) = plane_rig(5.0, 0.5, 64, 64);
        let mut mask = MaskRaster::filled(64, 64, 0);
        for y in 20..44 {
            for x in 20..44 {
                mask.set(x, y, 1);
            }
        }
        let cfg = PatchMatchConfig {
            iterations: 3,
            depth_range: (2.0, 12.0),
            seed: 2,
            ..Default::default()
        };
        let map = patchmatch_iterate(&a, &[b], None, Some(&mask), &cfg).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if mask.get(x, y) == 0 {
                    assert_eq!(map.state(x, y), PixelState::Invalid);
                    assert!(map.plane(x, y).d.is_nan());
                }
            }
        }
    }

    #[test]
    fn patchmatch_is_deterministic() {
        let (a, b) = plane_rig(5.0, 0.5, 48, 48);
        let cfg = PatchMatchConfig {
            iterations: 2,
            depth_range: (2.0, 12.0),
            seed: 77,
            ..Default::default()
        };
        let m1 = patchmatch_iterate(&a, &[b.clone()], None, None, &cfg).unwrap();
        let m2 = patchmatch_iterate(&a, &[b], None, None, &cfg).unwrap();
        for i in 0..m1.planes.len() {
            assert!(m1.planes[i].d.to_bits() == m2.planes[i].d.to_bits());
            assert_eq!(m1.costs[i].to_bits(), m2.costs[i].to_bits());
        }
    }

    #[test]
    fn geometric_consistency_passes_on_exact_planes() {
        let (a, b) = plane_rig(5.0, 0.5, 64, 64);
        let cfg = PatchMatchConfig::default();
        let make_map = |view: &CameraView| -> HypothesisMap {
            let w = view.intrinsics.width;
            let h = view.intrinsics.height;
            let mut planes = Vec::with_capacity(w * h);
            for _ in 0..w * h {
                planes.push(PlaneHypothesis {
                    d: 5.0,
                    normal: Vector3::new(0.0, 0.0, -1.0),
                });
            }
            HypothesisMap {
                width: w,
                height: h,
                planes,
                costs: vec![0.0; w * h],
                states: vec![PixelState::Converged; w * h],
            }
        };
        let ref_map = make_map(&a);
        let sup_map = make_map(&b);
        let rel = relative_pose(&a, &b);
        let check = geometric_consistency(
            &ref_map,
            &sup_map,
            (32, 32),
            &a.intrinsics,
            &b.intrinsics,
            &rel,
            &cfg,
        );
        assert!(check.pass);
        assert!(check.rel_depth < 1e-9);
        assert!(check.normal_deg < 1e-6);

        // Perturb the supporting depth by 5%: must fail at 2% tolerance.
        let mut bad_sup = make_map(&b);
        for p in &mut bad_sup.planes {
            p.d *= 1.05;
        }
        let check = geometric_consistency(
            &ref_map,
            &bad_sup,
            (32, 32),
            &a.intrinsics,
            &b.intrinsics,
            &rel,
            &cfg,
        );
        assert!(!check.pass);
    }

    #[test]
    fn filter_consistent_thresholds() {
        let (a, b) = plane_rig(5.0, 0.5, 48, 48);
        let make_map = |view: &CameraView| -> HypothesisMap {
            let w = view.intrinsics.width;
            let h = view.intrinsics.height;
            HypothesisMap {
                width: w,
                height: h,
                planes: vec![
                    PlaneHypothesis {
                        d: 5.0,
                        normal: Vector3::new(0.0, 0.0, -1.0),
                    };
                    w * h
                ],
                costs: vec![0.0; w * h],
                states: vec![PixelState::Converged; w * h],
            }
        };
        let ref_map = make_map(&a);
        let sup = SupportMap {
            intr: b.intrinsics,
            rel: relative_pose(&a, &b),
            map: make_map(&b),
        };
        let cfg = PatchMatchConfig {
            min_consistent: 1,
            ..Default::default()
        };
        let (result, survivors, _) = filter_consistent(&ref_map, &a.intrinsics, &[sup], &cfg);
        // Pixels warping outside the supporting image fail; interior survives.
        assert!(result.pixels_surviving > 1000);
        assert_eq!(
            survivors.data().iter().filter(|&&m| m != 0).count(),
            result.pixels_surviving
        );

        let cfg_many = PatchMatchConfig {
            min_consistent: 3,
            ..cfg
        };
        let sup2 = SupportMap {
            intr: b.intrinsics,
            rel: relative_pose(&a, &b),
            map: make_map(&b),
        };
        let (result2, _, _) = filter_consistent(&ref_map, &a.intrinsics, &[sup2], &cfg_many);
        assert_eq!(result2.pixels_surviving, 0);
    }

    #[test]
    fn object_frame_views_static_track_is_identity() {
        let intr = unit_intr();
        let views = vec![
            CameraView::new(0, 0, 0.0, intr, RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0))),
            CameraView::new(1, 0, 1.0, intr, RigidTransform::from_translation(Vector3::new(4.0, 5.0, 6.0))),
        ];
        let track = Track::new(vec![
            (0.0, RigidTransform::identity()),
            (1.0, RigidTransform::identity()),
        ]);
        let out = object_frame_views(&views, &track).unwrap();
        for (a, b) in views.iter().zip(&out) {
            assert!((a.world_from_camera.translation() - b.world_from_camera.translation()).norm() < 1e-12);
        }
    }

    #[test]
    fn object_frame_views_moving_object_recedes() {
        let intr = unit_intr();
        let views: Vec<CameraView> = (0..3)
            .map(|i| CameraView::new(i, 0, i as f64, intr, RigidTransform::identity()))
            .collect();
        let track = Track::new(
            (0..3)
                .map(|i| {
                    (
                        i as f64,
                        RigidTransform::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
                    )
                })
                .collect(),
        );
        let out = object_frame_views(&views, &track).unwrap();
        for (i, v) in out.iter().enumerate() {
            assert_relative_eq!(v.world_from_camera.translation().x, -(i as f64), epsilon = 1e-12);
        }

        // A point fixed on the object keeps identical object-frame coords.
        let x_obj = Vector3::new(0.3, -0.1, 4.0);
        for (i, v) in out.iter().enumerate() {
            let x_world = track
                .world_from_object(i as f64)
                .unwrap()
                .transform_point(&x_obj);
            let cam_orig = views[i].camera_from_world().transform_point(&x_world);
            let cam_obj = v.camera_from_world().transform_point(&x_obj);
            assert!((cam_orig - cam_obj).norm() < 1e-12);
        }
    }

    #[test]
    fn track_gap_errors() {
        let track = Track::new(vec![
            (0.0, RigidTransform::identity()),
            (1.0, RigidTransform::identity()),
        ]);
        assert!(track.world_from_object(0.4).is_ok());
        assert!(matches!(track.world_from_object(1.8), Err(MvsError::TrackGap(_))));
    }

    #[test]
    fn quaternion_randoms_are_well_formed() {
        // Guard against NaNs from degenerate random quaternions in the pose
        // helper used across the tests above.
        let mut rng = KeyedRng::from_key(&[3]);
        for _ in 0..100 {
            let q = Quaternion::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
            let u = UnitQuaternion::new_normalize(q);
            assert!(u.quaternion().norm() > 0.99);
        }
    }
}
