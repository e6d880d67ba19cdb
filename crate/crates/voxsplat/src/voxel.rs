//! Voxelization of provenance-tagged points, per-voxel view visibility,
//! occlusion-aware depth/index rasterization and the incomplete-instance
//! discriminant.
//!
//! Each voxel remembers the union of view ids that observed any of its
//! member points. Rasterizing a view z-buffers the voxels along each pixel
//! ray: ordering uses the exact ray/box entry distance so the first-hit index
//! agrees with per-pixel ray casting, while the stored depth is the distance
//! to the voxel centroid (the mean of its member surface points), which keeps
//! the depth error well inside the voxel diagonal.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{project, CameraView, Pixel};
use crate::raster::{DepthRaster, IndexRaster, MaskRaster, MISSING_INDEX};

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("no point falls inside the voxel grid bounds")]
    EmptyInput,
    #[error("no view observes any of the requested voxels")]
    NoObservingView,
}

/// Origin of a scene point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Lidar,
    Sfm,
    Mvs,
}

impl SourceKind {
    pub fn code(self) -> u8 {
        match self {
            SourceKind::Lidar => 0,
            SourceKind::Sfm => 1,
            SourceKind::Mvs => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SourceKind::Lidar),
            1 => Some(SourceKind::Sfm),
            2 => Some(SourceKind::Mvs),
            _ => None,
        }
    }
}

/// World-frame point tagged with the views it was observed from.
/// LiDAR and MVS points carry exactly one view; SfM points at least two.
#[derive(Debug, Clone)]
pub struct ProvenancedPoint {
    pub position: Vector3<f64>,
    pub source_views: Vec<u32>,
    pub kind: SourceKind,
}

impl ProvenancedPoint {
    pub fn lidar(position: Vector3<f64>, view_id: u32) -> Self {
        Self {
            position,
            source_views: vec![view_id],
            kind: SourceKind::Lidar,
        }
    }

    pub fn sfm(position: Vector3<f64>, mut views: Vec<u32>) -> Self {
        assert!(views.len() >= 2, "sfm points are triangulated from at least two views");
        views.sort_unstable();
        views.dedup();
        Self {
            position,
            source_views: views,
            kind: SourceKind::Sfm,
        }
    }

    pub fn mvs(position: Vector3<f64>, reference_view: u32) -> Self {
        Self {
            position,
            source_views: vec![reference_view],
            kind: SourceKind::Mvs,
        }
    }
}

/// Aggregate of the points that fell into one cell.
#[derive(Debug, Clone)]
pub struct VoxelRecord {
    pub centroid: Vector3<f64>,
    pub point_count: usize,
    pub visibility: BTreeSet<u32>,
    /// Indices into the point list the grid was built from.
    pub point_indices: Vec<u32>,
}

/// Sparse voxel grid with half-open cells [k*r, (k+1)*r).
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    origin: Vector3<f64>,
    resolution: f64,
    dims: [usize; 3],
    cells: BTreeMap<i64, VoxelRecord>,
}

impl VoxelGrid {
    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, id: i64) -> Option<&VoxelRecord> {
        self.cells.get(&id)
    }

    /// Cells in ascending linear-index order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, &VoxelRecord)> {
        self.cells.iter().map(|(&k, v)| (k, v))
    }

    pub fn linear_index(&self, cell: [usize; 3]) -> i64 {
        ((cell[2] * self.dims[1] + cell[1]) * self.dims[0] + cell[0]) as i64
    }

    pub fn cell_coords(&self, id: i64) -> [usize; 3] {
        let id = id as usize;
        let x = id % self.dims[0];
        let y = (id / self.dims[0]) % self.dims[1];
        let z = id / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Cell containing a point, or None when out of bounds.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let rel = (p - self.origin) / self.resolution;
        let mut cell = [0usize; 3];
        for a in 0..3 {
            let k = rel[a].floor();
            if k < 0.0 || k >= self.dims[a] as f64 {
                return None;
            }
            cell[a] = k as usize;
        }
        Some(cell)
    }

    /// World-space min/max corners of a cell.
    pub fn cell_bounds(&self, id: i64) -> (Vector3<f64>, Vector3<f64>) {
        let c = self.cell_coords(id);
        let min = self.origin
            + Vector3::new(
                c[0] as f64 * self.resolution,
                c[1] as f64 * self.resolution,
                c[2] as f64 * self.resolution,
            );
        (min, min.add_scalar(self.resolution))
    }
}

/// Bins points into cells, unioning visibility and averaging positions.
pub fn voxelize(
    points: &[ProvenancedPoint],
    origin: Vector3<f64>,
    dims: [usize; 3],
    resolution: f64,
) -> Result<VoxelGrid, VoxelError> {
    assert!(resolution > 0.0, "resolution must be positive");
    let mut grid = VoxelGrid {
        origin,
        resolution,
        dims,
        cells: BTreeMap::new(),
    };
    struct Acc {
        sum: Vector3<f64>,
        count: usize,
        visibility: BTreeSet<u32>,
        indices: Vec<u32>,
    }
    let mut acc: BTreeMap<i64, Acc> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let Some(cell) = grid.cell_of(&p.position) else {
            continue;
        };
        let id = grid.linear_index(cell);
        let e = acc.entry(id).or_insert_with(|| Acc {
            sum: Vector3::zeros(),
            count: 0,
            visibility: BTreeSet::new(),
            indices: Vec::new(),
        });
        e.sum += p.position;
        e.count += 1;
        e.visibility.extend(p.source_views.iter().copied());
        e.indices.push(i as u32);
    }
    if acc.is_empty() {
        return Err(VoxelError::EmptyInput);
    }
    grid.cells = acc
        .into_iter()
        .map(|(id, a)| {
            (
                id,
                VoxelRecord {
                    centroid: a.sum / a.count as f64,
                    point_count: a.count,
                    visibility: a.visibility,
                    point_indices: a.indices,
                },
            )
        })
        .collect();
    Ok(grid)
}

/// Grid bounds that contain every point, padded by one cell.
pub fn fit_grid_bounds(points: &[ProvenancedPoint], resolution: f64) -> (Vector3<f64>, [usize; 3]) {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        min = min.inf(&p.position);
        max = max.sup(&p.position);
    }
    let origin = min.add_scalar(-resolution);
    let extent = max - origin;
    let dims = [
        (extent.x / resolution).floor() as usize + 2,
        (extent.y / resolution).floor() as usize + 2,
        (extent.z / resolution).floor() as usize + 2,
    ];
    (origin, dims)
}

/// Which voxels participate in rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterizeMode {
    /// Every occupied voxel.
    AllVoxels,
    /// Only voxels whose visibility set contains the rasterized view.
    ViewFiltered,
}

/// Per-pixel first-hit depth and voxel index from z-buffering.
#[derive(Debug, Clone)]
pub struct DepthIndexMap {
    pub depth: DepthRaster,
    pub index: IndexRaster,
}

impl DepthIndexMap {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }
}

const RAY_EPS: f64 = 1e-9;

/// Entry distance of a ray into an axis-aligned box, if it hits in front.
#[inline]
pub fn ray_box_entry(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    bmin: &Vector3<f64>,
    bmax: &Vector3<f64>,
) -> Option<f64> {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for a in 0..3 {
        let d = dir[a];
        if d == 0.0 {
            if origin[a] < bmin[a] || origin[a] > bmax[a] {
                return None;
            }
        } else {
            let inv = 1.0 / d;
            let mut t0 = (bmin[a] - origin[a]) * inv;
            let mut t1 = (bmax[a] - origin[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return None;
            }
        }
    }
    (tmax > 0.0 && tmin > RAY_EPS).then_some(tmin)
}

struct VoxelJob {
    id: i64,
    bmin: Vector3<f64>,
    bmax: Vector3<f64>,
    centroid_dist: f64,
    px: [usize; 4], // u0, u1, v0, v1 inclusive
}

/// Z-buffers the voxels covering each pixel ray. The nearest voxel (smallest
/// ray entry distance) wins; pixels nothing covers stay missing.
pub fn rasterize_visible(grid: &VoxelGrid, view: &CameraView, mode: RasterizeMode) -> DepthIndexMap {
    let w = view.intrinsics.width;
    let h = view.intrinsics.height;
    let cam_from_world = view.camera_from_world();
    let center = view.center();

    // Precompute normalized world rays per pixel.
    let rays: Vec<Vector3<f64>> = (0..w * h)
        .map(|i| {
            let p = Pixel::new((i % w) as f64, (i / w) as f64);
            view.pixel_ray_world(p)
        })
        .collect();

    let jobs: Vec<VoxelJob> = grid
        .iter()
        .filter(|(_, rec)| match mode {
            RasterizeMode::AllVoxels => true,
            RasterizeMode::ViewFiltered => rec.visibility.contains(&view.view_id),
        })
        .filter_map(|(id, rec)| {
            let (bmin, bmax) = grid.cell_bounds(id);
            let mut u_lo = f64::INFINITY;
            let mut u_hi = f64::NEG_INFINITY;
            let mut v_lo = f64::INFINITY;
            let mut v_hi = f64::NEG_INFINITY;
            let mut behind = 0usize;
            for corner in 0..8 {
                let world = Vector3::new(
                    if corner & 1 == 0 { bmin.x } else { bmax.x },
                    if corner & 2 == 0 { bmin.y } else { bmax.y },
                    if corner & 4 == 0 { bmin.z } else { bmax.z },
                );
                let cam = cam_from_world.transform_point(&world);
                if cam.z <= RAY_EPS {
                    behind += 1;
                    continue;
                }
                let (p, _) = project(&view.intrinsics, &cam).expect("z checked");
                u_lo = u_lo.min(p.u);
                u_hi = u_hi.max(p.u);
                v_lo = v_lo.min(p.v);
                v_hi = v_hi.max(p.v);
            }
            if behind == 8 {
                return None;
            }
            // Any corner behind the image plane makes the 2D hull unbounded;
            // fall back to testing the whole image.
            let px = if behind > 0 {
                [0, w - 1, 0, h - 1]
            } else {
                let u0 = (u_lo.floor() - 1.0).max(0.0) as usize;
                let v0 = (v_lo.floor() - 1.0).max(0.0) as usize;
                if u_lo.floor() - 1.0 >= w as f64 || v_lo.floor() - 1.0 >= h as f64 {
                    return None;
                }
                let u1 = (u_hi.ceil() + 1.0).min((w - 1) as f64) as usize;
                let v1 = (v_hi.ceil() + 1.0).min((h - 1) as f64) as usize;
                if u_hi.ceil() + 1.0 < 0.0 || v_hi.ceil() + 1.0 < 0.0 {
                    return None;
                }
                [u0, u1, v0, v1]
            };
            if px[0] > px[1] || px[2] > px[3] {
                return None;
            }
            Some(VoxelJob {
                id,
                bmin,
                bmax,
                centroid_dist: (rec.centroid - center).norm(),
                px,
            })
        })
        .collect();

    // Process rows in parallel bands; each band owns its z-buffer slice.
    const BAND: usize = 16;
    let bands: Vec<usize> = (0..h).step_by(BAND).collect();
    let results: Vec<(usize, Vec<f64>, Vec<f64>, Vec<i64>)> = bands
        .par_iter()
        .map(|&y0| {
            let y1 = (y0 + BAND).min(h);
            let rows = y1 - y0;
            let mut key = vec![f64::INFINITY; rows * w];
            let mut depth = vec![f64::INFINITY; rows * w];
            let mut index = vec![MISSING_INDEX; rows * w];
            for job in &jobs {
                let v_start = job.px[2].max(y0);
                let v_end = job.px[3].min(y1 - 1);
                if v_start > v_end {
                    continue;
                }
                for y in v_start..=v_end {
                    let row = (y - y0) * w;
                    for x in job.px[0]..=job.px[1] {
                        let ray = &rays[y * w + x];
                        if let Some(t) = ray_box_entry(&center, ray, &job.bmin, &job.bmax) {
                            let slot = row + x;
                            if t < key[slot] {
                                key[slot] = t;
                                depth[slot] = job.centroid_dist;
                                index[slot] = job.id;
                            }
                        }
                    }
                }
            }
            (y0, key, depth, index)
        })
        .collect();

    let mut depth = DepthRaster::filled(w, h, f64::INFINITY);
    let mut index = IndexRaster::filled(w, h, MISSING_INDEX);
    for (y0, _key, d, ix) in results {
        let rows = d.len() / w;
        for r in 0..rows {
            let dst = (y0 + r) * w;
            depth.data_mut()[dst..dst + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            index.data_mut()[dst..dst + w].copy_from_slice(&ix[r * w..(r + 1) * w]);
        }
    }
    DepthIndexMap { depth, index }
}

/// Union of voxel indices the mask's pixels map to.
pub fn instance_voxels(mask: &MaskRaster, dim: &DepthIndexMap) -> BTreeSet<i64> {
    assert!(mask.same_size(&dim.index), "mask dimensions must match the map");
    let mut out = BTreeSet::new();
    for (m, &ix) in mask.data().iter().zip(dim.index.data()) {
        if *m != 0 && ix != MISSING_INDEX {
            out.insert(ix);
        }
    }
    out
}

/// Discriminant outcome for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Complete,
    Incomplete,
    Unobserved,
}

/// Bad/total pixel tallies feeding the incomplete flag; mergeable across
/// views.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BadPixelCounts {
    pub bad: usize,
    pub total: usize,
}

impl BadPixelCounts {
    pub fn merge(&mut self, other: &BadPixelCounts) {
        self.bad += other.bad;
        self.total += other.total;
    }
}

/// Tallies instance pixels where the Gaussian-rendered depth is missing or
/// significantly exceeds the voxel depth.
pub fn flag_counts(
    mask: &MaskRaster,
    voxel_depth: &DepthIndexMap,
    gaussian_depth: &DepthRaster,
    tau_rel: f64,
) -> BadPixelCounts {
    assert!(mask.same_size(gaussian_depth) && mask.same_size(&voxel_depth.depth));
    let mut counts = BadPixelCounts::default();
    for i in 0..mask.data().len() {
        if mask.data()[i] == 0 {
            continue;
        }
        let v = voxel_depth.depth.data()[i];
        if !v.is_finite() {
            continue;
        }
        counts.total += 1;
        let g = gaussian_depth.data()[i];
        if !g.is_finite() || g > v * (1.0 + tau_rel) {
            counts.bad += 1;
        }
    }
    counts
}

pub fn status_from_counts(counts: &BadPixelCounts, tau_frac: f64) -> InstanceStatus {
    if counts.total == 0 {
        InstanceStatus::Unobserved
    } else if counts.bad as f64 / counts.total as f64 >= tau_frac {
        InstanceStatus::Incomplete
    } else {
        InstanceStatus::Complete
    }
}

/// Single-view discriminant; the pipeline pools counts across views.
pub fn flag_incomplete(
    mask: &MaskRaster,
    voxel_depth: &DepthIndexMap,
    gaussian_depth: &DepthRaster,
    tau_rel: f64,
    tau_frac: f64,
) -> InstanceStatus {
    assert!(tau_frac > 0.0 && tau_frac <= 1.0);
    status_from_counts(&flag_counts(mask, voxel_depth, gaussian_depth, tau_rel), tau_frac)
}

/// A segmented scene element with its per-view masks.
#[derive(Debug, Clone)]
pub struct InstanceRecord {
    pub instance_id: u32,
    /// view_id -> binary mask.
    pub masks: BTreeMap<u32, MaskRaster>,
    pub voxel_ids: BTreeSet<i64>,
    pub status: InstanceStatus,
}

/// One view's share of an instance's voxels.
#[derive(Debug, Clone)]
pub struct ViewCandidate {
    pub view_id: u32,
    /// Ascending voxel ids visible in this view.
    pub voxel_ids: Vec<i64>,
    /// Centroid-to-viewpoint distance per voxel, aligned with `voxel_ids`.
    pub distances: Vec<f64>,
}

impl ViewCandidate {
    pub fn covisible_count(&self) -> usize {
        self.voxel_ids.len()
    }

    pub fn mean_distance(&self) -> f64 {
        if self.distances.is_empty() {
            f64::INFINITY
        } else {
            self.distances.iter().sum::<f64>() / self.distances.len() as f64
        }
    }
}

/// For each view, the subset of the voxels it observes with their distances.
/// Views observing nothing are omitted.
pub fn candidate_views(
    voxel_ids: &BTreeSet<i64>,
    grid: &VoxelGrid,
    views: &[CameraView],
) -> Result<Vec<ViewCandidate>, VoxelError> {
    assert!(!voxel_ids.is_empty(), "voxel set must not be empty");
    let mut out = Vec::new();
    for view in views {
        let mut ids = Vec::new();
        let mut dists = Vec::new();
        let center = view.center();
        for &id in voxel_ids {
            if let Some(rec) = grid.get(id) {
                if rec.visibility.contains(&view.view_id) {
                    ids.push(id);
                    dists.push((rec.centroid - center).norm());
                }
            }
        }
        if !ids.is_empty() {
            out.push(ViewCandidate {
                view_id: view.view_id,
                voxel_ids: ids,
                distances: dists,
            });
        }
    }
    if out.is_empty() {
        return Err(VoxelError::NoObservingView);
    }
    Ok(out)
}

/// Distances of the voxels visible in both candidates, aligned pairwise.
pub fn covisible_distances(a: &ViewCandidate, b: &ViewCandidate) -> (usize, Vec<f64>, Vec<f64>) {
    let mut da = Vec::new();
    let mut db = Vec::new();
    let mut i = 0;
    let mut j = 0;
    while i < a.voxel_ids.len() && j < b.voxel_ids.len() {
        match a.voxel_ids[i].cmp(&b.voxel_ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                da.push(a.distances[i]);
                db.push(b.distances[j]);
                i += 1;
                j += 1;
            }
        }
    }
    (da.len(), da, db)
}
