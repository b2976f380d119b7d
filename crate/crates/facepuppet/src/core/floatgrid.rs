//! Binary float-grid container for meshes, flow fields, and scalar fields.
//!
//! One shared layout, three magics:
//!
//! ```text
//! offset  size  content
//! 0       8     magic: "PFMESH1\n" | "PFFLOW1\n" | "PFSCAL1\n"
//! 8       4     width  (u32 little-endian)
//! 12      4     height (u32 little-endian)
//! 16      —     row-major f32 little-endian payload
//! ```
//!
//! Payload per grid cell: mesh `x y z valid`, flow `dx dy`, scalar
//! `value valid`. Validity flags are written as exactly 1.0 or 0.0 and
//! anything else is rejected on read. Loading a file and saving it again
//! reproduces the input byte for byte.

use std::fs;
use std::path::Path;

use crate::core::mesh::{DepthMesh, ScalarField};
use crate::core::warp::WarpField;
use crate::error::{Error, Result};

const MAGIC_MESH: &[u8; 8] = b"PFMESH1\n";
const MAGIC_FLOW: &[u8; 8] = b"PFFLOW1\n";
const MAGIC_SCALAR: &[u8; 8] = b"PFSCAL1\n";

/// Hard cap on cells so corrupt headers cannot trigger huge allocations.
const MAX_CELLS: u64 = 1 << 28;

/// Which payload a float-grid file carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Mesh,
    Flow,
    Scalar,
}

impl GridKind {
    fn channels(self) -> usize {
        match self {
            GridKind::Mesh => 4,
            GridKind::Flow => 2,
            GridKind::Scalar => 2,
        }
    }

    fn magic(self) -> &'static [u8; 8] {
        match self {
            GridKind::Mesh => MAGIC_MESH,
            GridKind::Flow => MAGIC_FLOW,
            GridKind::Scalar => MAGIC_SCALAR,
        }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Read the header of a float-grid file: kind, width, height.
pub fn probe(path: impl AsRef<Path>) -> Result<(GridKind, usize, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (kind, w, h) = parse_header(path, &bytes)?;
    Ok((kind, w, h))
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(GridKind, usize, usize)> {
    if bytes.len() < 16 {
        return Err(format_err(path, "file shorter than the 16-byte header"));
    }
    let kind = match &bytes[0..8] {
        m if m == MAGIC_MESH => GridKind::Mesh,
        m if m == MAGIC_FLOW => GridKind::Flow,
        m if m == MAGIC_SCALAR => GridKind::Scalar,
        m => {
            return Err(format_err(
                path,
                format!("unrecognized magic {:?}", String::from_utf8_lossy(m)),
            ))
        }
    };
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
    if w == 0 || h == 0 || w * h > MAX_CELLS {
        return Err(format_err(path, format!("implausible grid size {w}x{h}")));
    }
    Ok((kind, w as usize, h as usize))
}

fn check_payload(path: &Path, bytes: &[u8], kind: GridKind, w: usize, h: usize) -> Result<()> {
    let expect = 16 + w * h * kind.channels() * 4;
    if bytes.len() != expect {
        return Err(format_err(
            path,
            format!("expected {expect} bytes for {w}x{h} payload, found {}", bytes.len()),
        ));
    }
    Ok(())
}

fn read_f32(bytes: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(bytes[16 + i * 4..16 + i * 4 + 4].try_into().unwrap())
}

fn read_flag(path: &Path, bytes: &[u8], i: usize) -> Result<bool> {
    let v = read_f32(bytes, i);
    if v == 1.0 {
        Ok(true)
    } else if v == 0.0 {
        Ok(false)
    } else {
        Err(format_err(path, format!("validity flag must be 0 or 1, found {v}")))
    }
}

fn header(kind: GridKind, w: usize, h: usize, cap: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + cap);
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out
}

pub fn save_mesh(path: impl AsRef<Path>, mesh: &DepthMesh) -> Result<()> {
    let (w, h) = (mesh.width(), mesh.height());
    let mut out = header(GridKind::Mesh, w, h, w * h * 16);
    for v in 0..h {
        for u in 0..w {
            let p = mesh.point(u, v);
            let ok = mesh.is_valid(u, v);
            for c in 0..3 {
                let val = if ok { p[c] as f32 } else { 0.0 };
                out.extend_from_slice(&val.to_le_bytes());
            }
            out.extend_from_slice(&(if ok { 1.0f32 } else { 0.0 }).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<DepthMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (kind, w, h) = parse_header(path, &bytes)?;
    if kind != GridKind::Mesh {
        return Err(format_err(path, "not a mesh grid file"));
    }
    check_payload(path, &bytes, kind, w, h)?;
    let mut points = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let base = i * 4;
        let p = [
            read_f32(&bytes, base) as f64,
            read_f32(&bytes, base + 1) as f64,
            read_f32(&bytes, base + 2) as f64,
        ];
        let ok = read_flag(path, &bytes, base + 3)?;
        if ok && !p.iter().all(|c| c.is_finite()) {
            return Err(format_err(path, format!("non-finite vertex at cell {i}")));
        }
        points.push(p);
        valid.push(ok);
    }
    DepthMesh::new(w, h, points, valid)
}

pub fn save_flow(path: impl AsRef<Path>, flow: &WarpField) -> Result<()> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = header(GridKind::Flow, w, h, w * h * 8);
    for i in 0..w * h {
        out.extend_from_slice(&flow.dx()[i].to_le_bytes());
        out.extend_from_slice(&flow.dy()[i].to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<WarpField> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (kind, w, h) = parse_header(path, &bytes)?;
    if kind != GridKind::Flow {
        return Err(format_err(path, "not a flow grid file"));
    }
    check_payload(path, &bytes, kind, w, h)?;
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for i in 0..w * h {
        dx.push(read_f32(&bytes, i * 2));
        dy.push(read_f32(&bytes, i * 2 + 1));
    }
    WarpField::new(w, h, dx, dy)
}

pub fn save_scalar(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let (w, h) = (field.width(), field.height());
    let mut out = header(GridKind::Scalar, w, h, w * h * 8);
    for v in 0..h {
        for u in 0..w {
            let ok = field.is_valid(u, v);
            let val = if ok { field.get(u, v) as f32 } else { 0.0 };
            out.extend_from_slice(&val.to_le_bytes());
            out.extend_from_slice(&(if ok { 1.0f32 } else { 0.0 }).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_scalar(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (kind, w, h) = parse_header(path, &bytes)?;
    if kind != GridKind::Scalar {
        return Err(format_err(path, "not a scalar grid file"));
    }
    check_payload(path, &bytes, kind, w, h)?;
    let mut values = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let v = read_f32(&bytes, i * 2) as f64;
        let ok = read_flag(path, &bytes, i * 2 + 1)?;
        if ok && !v.is_finite() {
            return Err(format_err(path, format!("non-finite value at cell {i}")));
        }
        values.push(v);
        valid.push(ok);
    }
    ScalarField::new(w, h, values, valid)
}
