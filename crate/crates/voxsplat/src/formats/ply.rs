//! Binary little-endian PLY for point clouds and Gaussian primitive sets.
//!
//! Points carry x,y,z (float32) and a source_kind byte; which views observed
//! each point lives in a sidecar JSON of contiguous ranges. Primitives carry
//! x,y,z, scale_0..2, rot_0..3 (w,x,y,z), opacity and r,g,b, all float32.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::splat::GaussianPrimitive;
use crate::voxel::{ProvenancedPoint, SourceKind};

/// Contiguous run of points sharing one source-view set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ProvenanceRange {
    pub start: usize,
    pub end: usize,
    pub views: Vec<u32>,
}

fn ply_header(count: usize, properties: &[&str]) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {count}\n"));
    for p in properties {
        h.push_str(&format!("property {p}\n"));
    }
    h.push_str("end_header\n");
    h
}

/// Writes the cloud and returns the provenance ranges for the sidecar JSON.
/// Points are grouped so equal view sets form contiguous runs.
pub fn write_point_cloud(
    path: &Path,
    points: &[ProvenancedPoint],
) -> Result<Vec<ProvenanceRange>, FormatError> {
    // Stable order: original order already groups ranges poorly, so sort an
    // index permutation by (views, kind) while keeping ties in input order.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .source_views
            .cmp(&points[b].source_views)
            .then(points[a].kind.code().cmp(&points[b].kind.code()))
            .then(a.cmp(&b))
    });

    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(
        ply_header(
            points.len(),
            &[
                "float x",
                "float y",
                "float z",
                "uchar source_kind",
            ],
        )
        .as_bytes(),
    )
    .map_err(|e| FormatError::io(path, e))?;

    let mut ranges: Vec<ProvenanceRange> = Vec::new();
    for (out_idx, &i) in order.iter().enumerate() {
        let p = &points[i];
        for c in 0..3 {
            w.write_all(&(p.position[c] as f32).to_le_bytes())
                .map_err(|e| FormatError::io(path, e))?;
        }
        w.write_all(&[p.kind.code()])
            .map_err(|e| FormatError::io(path, e))?;
        match ranges.last_mut() {
            Some(r) if r.views == p.source_views && r.end == out_idx => r.end = out_idx + 1,
            _ => ranges.push(ProvenanceRange {
                start: out_idx,
                end: out_idx + 1,
                views: p.source_views.clone(),
            }),
        }
    }
    w.flush().map_err(|e| FormatError::io(path, e))?;
    Ok(ranges)
}

fn read_ply_payload<'a>(
    path: &Path,
    bytes: &'a [u8],
    expect_props: &[&str],
) -> Result<(usize, &'a [u8]), FormatError> {
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| FormatError::parse(path, "missing end_header"))?
        + 11;
    let header = String::from_utf8_lossy(&bytes[..header_end]);
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    for line in header.lines() {
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = rest.trim().parse::<usize>().ok();
        } else if let Some(rest) = line.strip_prefix("property ") {
            props.push(rest.trim().to_string());
        } else if line.starts_with("format") && !line.contains("binary_little_endian") {
            return Err(FormatError::parse(path, "only binary_little_endian PLY is supported"));
        }
    }
    let count = count.ok_or_else(|| FormatError::parse(path, "missing vertex element"))?;
    if props != expect_props {
        return Err(FormatError::parse(
            path,
            format!("unexpected properties {props:?}"),
        ));
    }
    Ok((count, &bytes[header_end..]))
}

pub fn read_point_cloud(
    path: &Path,
    ranges: &[ProvenanceRange],
) -> Result<Vec<ProvenancedPoint>, FormatError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| FormatError::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;
    let (count, payload) = read_ply_payload(
        path,
        &bytes,
        &["float x", "float y", "float z", "uchar source_kind"],
    )?;
    let stride = 13;
    if payload.len() < count * stride {
        return Err(FormatError::parse(path, "truncated vertex data"));
    }
    let views_for = |i: usize| -> Result<Vec<u32>, FormatError> {
        ranges
            .iter()
            .find(|r| i >= r.start && i < r.end)
            .map(|r| r.views.clone())
            .ok_or_else(|| FormatError::parse(path, format!("point {i} not covered by provenance")))
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = |o: usize| {
            let b = &payload[i * stride + o * 4..i * stride + o * 4 + 4];
            f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
        };
        let kind = SourceKind::from_code(payload[i * stride + 12])
            .ok_or_else(|| FormatError::parse(path, "unknown source_kind"))?;
        out.push(ProvenancedPoint {
            position: Vector3::new(at(0), at(1), at(2)),
            source_views: views_for(i)?,
            kind,
        });
    }
    Ok(out)
}

const PRIMITIVE_PROPS: [&str; 13] = [
    "float x",
    "float y",
    "float z",
    "float scale_0",
    "float scale_1",
    "float scale_2",
    "float rot_0",
    "float rot_1",
    "float rot_2",
    "float rot_3",
    "float opacity",
    "float r",
    "float g",
];

// The last color channel; kept separate so the const array stays readable.
const PRIMITIVE_PROP_B: &str = "float b";

pub fn write_primitives(path: &Path, primitives: &[GaussianPrimitive]) -> Result<(), FormatError> {
    let mut props: Vec<&str> = PRIMITIVE_PROPS.to_vec();
    props.push(PRIMITIVE_PROP_B);
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(ply_header(primitives.len(), &props).as_bytes())
        .map_err(|e| FormatError::io(path, e))?;
    for g in primitives {
        let q = g.rotation.quaternion();
        let fields: [f32; 14] = [
            g.mean.x as f32,
            g.mean.y as f32,
            g.mean.z as f32,
            g.scale.x as f32,
            g.scale.y as f32,
            g.scale.z as f32,
            q.w as f32,
            q.i as f32,
            q.j as f32,
            q.k as f32,
            g.opacity as f32,
            g.color[0],
            g.color[1],
            g.color[2],
        ];
        for f in fields {
            w.write_all(&f.to_le_bytes())
                .map_err(|e| FormatError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_primitives(path: &Path) -> Result<Vec<GaussianPrimitive>, FormatError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| FormatError::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;
    let mut props: Vec<&str> = PRIMITIVE_PROPS.to_vec();
    props.push(PRIMITIVE_PROP_B);
    let (count, payload) = read_ply_payload(path, &bytes, &props)?;
    let stride = 14 * 4;
    if payload.len() < count * stride {
        return Err(FormatError::parse(path, "truncated vertex data"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = |o: usize| {
            let b = &payload[i * stride + o * 4..i * stride + o * 4 + 4];
            f32::from_le_bytes([b[0], b[1], b[2], b[3]])
        };
        out.push(GaussianPrimitive {
            mean: Vector3::new(at(0) as f64, at(1) as f64, at(2) as f64),
            scale: Vector3::new(at(3) as f64, at(4) as f64, at(5) as f64),
            rotation: nalgebra::UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
                at(6) as f64,
                at(7) as f64,
                at(8) as f64,
                at(9) as f64,
            )),
            opacity: at(10) as f64,
            color: [at(11), at(12), at(13)],
        });
    }
    Ok(out)
}
