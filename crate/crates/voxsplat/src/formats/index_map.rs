//! Raw voxel-index maps: 8-byte header (width, height as u32 LE) followed by
//! row-major int32 LE indices, -1 for missing.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::FormatError;
use crate::raster::{IndexRaster, MISSING_INDEX};

pub fn write_index_map(path: &Path, index: &IndexRaster) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&(index.width() as u32).to_le_bytes())
        .map_err(|e| FormatError::io(path, e))?;
    w.write_all(&(index.height() as u32).to_le_bytes())
        .map_err(|e| FormatError::io(path, e))?;
    for &ix in index.data() {
        let v: i32 = if ix == MISSING_INDEX {
            -1
        } else {
            i32::try_from(ix).map_err(|_| {
                FormatError::parse(path, format!("voxel index {ix} exceeds int32"))
            })?
        };
        w.write_all(&v.to_le_bytes())
            .map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_index_map(path: &Path) -> Result<IndexRaster, FormatError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| FormatError::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;
    if bytes.len() < 8 {
        return Err(FormatError::parse(path, "truncated header"));
    }
    let width = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let height = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if bytes.len() < 8 + width * height * 4 {
        return Err(FormatError::parse(path, "truncated index data"));
    }
    let data: Vec<i64> = bytes[8..8 + width * height * 4]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64)
        .collect();
    Ok(IndexRaster::from_vec(width, height, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn index_map_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ix.bin");
        let mut ix = IndexRaster::filled(6, 4, MISSING_INDEX);
        ix.set(2, 3, 12345);
        ix.set(0, 0, 7);
        write_index_map(&path, &ix).unwrap();
        let back = read_index_map(&path).unwrap();
        assert_eq!(ix.data(), back.data());
    }
}
