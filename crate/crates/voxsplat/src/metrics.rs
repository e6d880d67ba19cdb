//! Image comparison metrics.

use thiserror::Error;

use crate::raster::ColorRaster;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// PSNR cap reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio over [0,1] RGB channels, capped at 99 dB when
/// the MSE drops below 1e-10.
pub fn psnr(a: &ColorRaster, b: &ColorRaster) -> Result<f64, MetricsError> {
    if !a.same_size(b) {
        return Err(MetricsError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let mut sum = 0.0f64;
    for (pa, pb) in a.data().iter().zip(b.data()) {
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            sum += d * d;
        }
    }
    let mse = sum / (a.data().len() * 3) as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_cap() {
        let a = ColorRaster::filled(8, 8, [0.3, 0.5, 0.7]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn opposite_images_score_zero() {
        let a = ColorRaster::filled(8, 8, [0.0; 3]);
        let b = ColorRaster::filled(8, 8, [1.0; 3]);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn uniform_tenth_error_is_twenty_db() {
        let a = ColorRaster::filled(8, 8, [0.4; 3]);
        let b = ColorRaster::filled(8, 8, [0.5; 3]);
        // f32 storage of 0.1 leaves ~1e-7 slack around the exact 20 dB.
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let a = ColorRaster::filled(8, 8, [0.0; 3]);
        let b = ColorRaster::filled(8, 4, [0.0; 3]);
        assert!(psnr(&a, &b).is_err());
    }
}
