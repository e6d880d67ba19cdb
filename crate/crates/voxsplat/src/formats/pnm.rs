//! Binary PPM (P6) images and PGM (P5) masks.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::FormatError;
use crate::raster::{ColorRaster, MaskRaster};

pub fn write_ppm(path: &Path, image: &ColorRaster) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", image.width(), image.height())
        .map_err(|e| FormatError::io(path, e))?;
    let mut buf = Vec::with_capacity(image.data().len() * 3);
    for px in image.data() {
        for c in 0..3 {
            buf.push((px[c].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&buf).map_err(|e| FormatError::io(path, e))?;
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn write_pgm(path: &Path, mask: &MaskRaster) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height())
        .map_err(|e| FormatError::io(path, e))?;
    w.write_all(mask.data()).map_err(|e| FormatError::io(path, e))?;
    w.flush().map_err(|e| FormatError::io(path, e))
}

fn parse_pnm_header(path: &Path, bytes: &[u8], magic: &str) -> Result<(usize, usize, usize), FormatError> {
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        if tokens.len() == 4 {
            pos += 1; // single whitespace after maxval
            break;
        }
    }
    if tokens.len() != 4 {
        return Err(FormatError::parse(path, "truncated header"));
    }
    if tokens[0] != magic {
        return Err(FormatError::parse(path, format!("expected {magic}, got {}", tokens[0])));
    }
    let width: usize = tokens[1].parse().map_err(|_| FormatError::parse(path, "bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| FormatError::parse(path, "bad height"))?;
    if tokens[3] != "255" {
        return Err(FormatError::parse(path, "only maxval 255 is supported"));
    }
    Ok((width, height, pos))
}

pub fn read_ppm(path: &Path) -> Result<ColorRaster, FormatError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| FormatError::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;
    let (width, height, pos) = parse_pnm_header(path, &bytes, "P6")?;
    let expected = width * height * 3;
    if bytes.len() < pos + expected {
        return Err(FormatError::parse(path, "truncated pixel data"));
    }
    let mut out = ColorRaster::filled(width, height, [0.0; 3]);
    for i in 0..width * height {
        out.data_mut()[i] = [
            bytes[pos + i * 3] as f32 / 255.0,
            bytes[pos + i * 3 + 1] as f32 / 255.0,
            bytes[pos + i * 3 + 2] as f32 / 255.0,
        ];
    }
    Ok(out)
}

pub fn read_pgm(path: &Path) -> Result<MaskRaster, FormatError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| FormatError::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;
    let (width, height, pos) = parse_pnm_header(path, &bytes, "P5")?;
    let expected = width * height;
    if bytes.len() < pos + expected {
        return Err(FormatError::parse(path, "truncated pixel data"));
    }
    Ok(MaskRaster::from_vec(
        width,
        height,
        bytes[pos..pos + expected].to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn mask_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut mask = MaskRaster::filled(7, 5, 0);
        mask.set(3, 2, 255);
        mask.set(0, 4, 1);
        write_pgm(&path, &mask).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(mask.data(), back.data());
    }

    #[test]
    fn image_round_trips_with_quantization() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("i.ppm");
        let img = ColorRaster::filled(3, 2, [64.0 / 255.0, 0.0, 1.0]);
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(img.data(), back.data());
    }
}
