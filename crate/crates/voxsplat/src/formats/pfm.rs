//! PFM rasters: little-endian float32, negative scale header, bottom-up
//! scanlines. Grayscale (`Pf`) for depth, 3-channel (`PF`) for normals.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FormatError;
use crate::raster::{DepthRaster, NormalRaster};

pub struct PfmData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Top-down row-major samples.
    pub data: Vec<f32>,
}

fn write_pfm(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    top_down: &[f32],
) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = if channels == 3 { "PF" } else { "Pf" };
    write!(w, "{header}\n{width} {height}\n-1.0\n").map_err(|e| FormatError::io(path, e))?;
    // Bottom-up scanlines.
    for y in (0..height).rev() {
        let row = &top_down[y * width * channels..(y + 1) * width * channels];
        for &v in row {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| FormatError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn write_pfm_depth(path: &Path, depth: &DepthRaster) -> Result<(), FormatError> {
    let data: Vec<f32> = depth.data().iter().map(|&d| d as f32).collect();
    write_pfm(path, depth.width(), depth.height(), 1, &data)
}

pub fn write_pfm_normals(path: &Path, normals: &NormalRaster) -> Result<(), FormatError> {
    let mut data = Vec::with_capacity(normals.data().len() * 3);
    for n in normals.data() {
        data.extend_from_slice(&[n[0] as f32, n[1] as f32, n[2] as f32]);
    }
    write_pfm(path, normals.width(), normals.height(), 3, &data)
}

pub fn read_pfm(path: &Path) -> Result<PfmData, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;

    // Header: three whitespace-terminated tokens then binary data.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, FormatError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::parse(path, "truncated header"));
        }
        let tok = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        // Consume the single whitespace terminating the token.
        if pos < bytes.len() {
            pos += 1;
        }
        Ok(tok)
    };
    let magic = token(&bytes)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(FormatError::parse(path, format!("bad magic {other:?}"))),
    };
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| FormatError::parse(path, "bad width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| FormatError::parse(path, "bad height"))?;
    let scale: f32 = token(&bytes)?
        .parse()
        .map_err(|_| FormatError::parse(path, "bad scale"))?;
    let little_endian = scale < 0.0;

    let expected = width * height * channels * 4;
    if bytes.len() < pos + expected {
        return Err(FormatError::parse(path, "truncated sample data"));
    }
    let raw = &bytes[pos..pos + expected];
    let mut bottom_up = Vec::with_capacity(width * height * channels);
    for chunk in raw.chunks_exact(4) {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        bottom_up.push(if little_endian {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        });
    }
    // Flip to top-down.
    let mut data = vec![0.0f32; bottom_up.len()];
    for y in 0..height {
        let src = (height - 1 - y) * width * channels;
        data[y * width * channels..(y + 1) * width * channels]
            .copy_from_slice(&bottom_up[src..src + width * channels]);
    }
    Ok(PfmData {
        width,
        height,
        channels,
        data,
    })
}

impl PfmData {
    pub fn to_depth(&self) -> DepthRaster {
        assert_eq!(self.channels, 1);
        DepthRaster::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn to_normals(&self) -> NormalRaster {
        assert_eq!(self.channels, 3);
        let mut out = NormalRaster::filled(self.width, self.height, [0.0; 3]);
        for i in 0..self.width * self.height {
            out.data_mut()[i] = [
                self.data[i * 3] as f64,
                self.data[i * 3 + 1] as f64,
                self.data[i * 3 + 2] as f64,
            ];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn depth_round_trips_with_missing_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let mut depth = DepthRaster::filled(5, 3, f64::INFINITY);
        depth.set(1, 2, 4.25);
        depth.set(4, 0, 0.5);
        write_pfm_depth(&path, &depth).unwrap();
        let back = read_pfm(&path).unwrap().to_depth();
        assert_eq!(back.get(1, 2), 4.25);
        assert_eq!(back.get(4, 0), 0.5);
        assert!(back.get(0, 0).is_infinite());
    }

    #[test]
    fn normals_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("n.pfm");
        let mut n = NormalRaster::filled(4, 4, [0.0; 3]);
        n.set(2, 1, [0.5, -0.5, std::f64::consts::FRAC_1_SQRT_2]);
        write_pfm_normals(&path, &n).unwrap();
        let back = read_pfm(&path).unwrap().to_normals();
        let v = back.get(2, 1);
        assert!((v[0] - 0.5).abs() < 1e-7);
        assert!((v[2] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
    }
}
