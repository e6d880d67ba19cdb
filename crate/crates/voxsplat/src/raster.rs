//! Dense per-pixel storage shared by every stage.
//!
//! Depth rasters hold the Euclidean distance from the camera center along the
//! pixel ray, in meters; missing depth is `f64::INFINITY`. Index rasters use
//! `-1` for missing. Normal rasters hold camera-frame unit vectors with the
//! zero vector meaning missing.

/// Missing entry in an index raster.
pub const MISSING_INDEX: i64 = -1;

/// Row-major 2D grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_size<U: Copy>(&self, other: &Raster<U>) -> bool {
        self.width == other.width() && self.height == other.height()
    }
}

/// RGB in [0,1] per channel.
pub type ColorRaster = Raster<[f32; 3]>;
/// Euclidean ray distance in meters, `INFINITY` = missing.
pub type DepthRaster = Raster<f64>;
/// Scalar grayscale image.
pub type LumaRaster = Raster<f64>;
/// Camera-frame unit normals, zero vector = missing.
pub type NormalRaster = Raster<[f64; 3]>;
/// Binary membership, nonzero = member.
pub type MaskRaster = Raster<u8>;
/// Voxel linear indices, `MISSING_INDEX` = missing.
pub type IndexRaster = Raster<i64>;

#[inline]
pub fn depth_missing(d: f64) -> bool {
    !d.is_finite()
}

/// Mean of the RGB channels; the luminance used for patch correlation.
#[inline]
pub fn luma(c: [f32; 3]) -> f64 {
    (c[0] as f64 + c[1] as f64 + c[2] as f64) / 3.0
}

pub fn luma_raster(color: &ColorRaster) -> LumaRaster {
    LumaRaster::from_vec(
        color.width(),
        color.height(),
        color.data().iter().map(|&c| luma(c)).collect(),
    )
}

/// Bilinear sample with pixel centers at integer coordinates.
/// Valid for coordinates in [0, width-1] x [0, height-1]; `None` outside.
#[inline]
pub fn bilinear(raster: &LumaRaster, x: f64, y: f64) -> Option<f64> {
    if raster.width() < 2 || raster.height() < 2 {
        return None;
    }
    let wm = (raster.width() - 1) as f64;
    let hm = (raster.height() - 1) as f64;
    if !(x >= 0.0 && y >= 0.0 && x <= wm && y <= hm) {
        return None;
    }
    let x0 = (x.floor() as usize).min(raster.width() - 2);
    let y0 = (y.floor() as usize).min(raster.height() - 2);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = raster.get(x0, y0);
    let v10 = raster.get(x0 + 1, y0);
    let v01 = raster.get(x0, y0 + 1);
    let v11 = raster.get(x0 + 1, y0 + 1);
    Some(v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy)
}
