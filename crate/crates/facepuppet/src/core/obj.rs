//! Wavefront OBJ export for grid meshes.
//!
//! Only valid vertices are written. Each fully-valid 2x2 cell of the grid
//! becomes two triangles wound counter-clockwise when viewed from +z (the
//! camera side), so a 2x2 mesh exports exactly two faces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::core::mesh::DepthMesh;
use crate::error::{Error, Result};

fn vertex_numbering(mesh: &DepthMesh) -> Vec<u32> {
    // 1-based OBJ index per grid cell, 0 for invalid vertices
    let mut ids = vec![0u32; mesh.width() * mesh.height()];
    let mut next = 1u32;
    for v in 0..mesh.height() {
        for u in 0..mesh.width() {
            if mesh.is_valid(u, v) {
                ids[v * mesh.width() + u] = next;
                next += 1;
            }
        }
    }
    ids
}

fn write_faces(out: &mut String, mesh: &DepthMesh, ids: &[u32], with_uv: bool) {
    let w = mesh.width();
    for v in 0..mesh.height() - 1 {
        for u in 0..w - 1 {
            let a = ids[v * w + u];
            let b = ids[v * w + u + 1];
            let c = ids[(v + 1) * w + u];
            let d = ids[(v + 1) * w + u + 1];
            // (A, C, B) and (B, C, D): counter-clockwise from +z because
            // grid v runs downward in world y
            if a != 0 && b != 0 && c != 0 {
                face(out, [a, c, b], with_uv);
            }
            if b != 0 && c != 0 && d != 0 {
                face(out, [b, c, d], with_uv);
            }
        }
    }
}

fn face(out: &mut String, idx: [u32; 3], with_uv: bool) {
    if with_uv {
        let _ = writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            idx[0], idx[0], idx[1], idx[1], idx[2], idx[2]
        );
    } else {
        let _ = writeln!(out, "f {} {} {}", idx[0], idx[1], idx[2]);
    }
}

/// Plain geometry export.
pub fn save_obj(path: impl AsRef<Path>, mesh: &DepthMesh) -> Result<()> {
    let ids = vertex_numbering(mesh);
    let mut out = String::new();
    for v in 0..mesh.height() {
        for u in 0..mesh.width() {
            if mesh.is_valid(u, v) {
                let p = mesh.point(u, v);
                let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
            }
        }
    }
    write_faces(&mut out, mesh, &ids, false);
    fs::write(path, out)?;
    Ok(())
}

/// Geometry plus texture coordinates and a sidecar .mtl pointing at
/// `texture_file` (a file name resolved relative to the OBJ). Texture
/// coordinates map the grid onto the full image: u/(w−1) across,
/// 1 − v/(h−1) down, matching OBJ's bottom-left origin.
pub fn save_obj_textured(
    path: impl AsRef<Path>,
    mesh: &DepthMesh,
    texture_file: &str,
) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad OBJ path {}", path.display())))?;
    let mtl_name = format!("{stem}.mtl");

    let ids = vertex_numbering(mesh);
    let mut out = String::new();
    let _ = writeln!(out, "mtllib {mtl_name}");
    let _ = writeln!(out, "usemtl face");
    let (w1, h1) = ((mesh.width() - 1) as f64, (mesh.height() - 1) as f64);
    for v in 0..mesh.height() {
        for u in 0..mesh.width() {
            if mesh.is_valid(u, v) {
                let p = mesh.point(u, v);
                let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
            }
        }
    }
    for v in 0..mesh.height() {
        for u in 0..mesh.width() {
            if mesh.is_valid(u, v) {
                let _ = writeln!(out, "vt {} {}", u as f64 / w1, 1.0 - v as f64 / h1);
            }
        }
    }
    write_faces(&mut out, mesh, &ids, true);
    fs::write(path, out)?;

    let mtl = format!(
        "newmtl face\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nmap_Kd {texture_file}\n"
    );
    fs::write(path.with_file_name(mtl_name), mtl)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("objtest-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn two_by_two_mesh_gives_two_triangles() {
        let mesh = DepthMesh::from_fn(2, 2, |u, v| [u as f64, -(v as f64), 0.5]);
        let p = temp_path("quad.obj");
        save_obj(&p, &mesh).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let verts = text.lines().filter(|l| l.starts_with("v ")).count();
        let faces: Vec<&str> = text.lines().filter(|l| l.starts_with("f ")).collect();
        assert_eq!(verts, 4);
        assert_eq!(faces, vec!["f 1 3 2", "f 2 3 4"]);
    }

    #[test]
    fn invalid_vertices_drop_incident_faces() {
        let mut valid = vec![true; 9];
        valid[4] = false; // center of a 3x3
        let pts = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64, 0.0]).collect();
        let mesh = DepthMesh::new(3, 3, pts, valid).unwrap();
        let p = temp_path("holed.obj");
        save_obj(&p, &mesh).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 8);
        // six of the eight triangles touch the center; the far corners of
        // cells (0,0) and (1,1) survive, renumbered around the hole
        let faces: Vec<&str> = text.lines().filter(|l| l.starts_with("f ")).collect();
        assert_eq!(faces, vec!["f 1 4 2", "f 5 7 8"]);
    }

    #[test]
    fn all_invalid_mesh_exports_empty_geometry() {
        let mesh = DepthMesh::new(3, 3, vec![[0.0; 3]; 9], vec![false; 9]).unwrap();
        let p = temp_path("empty.obj");
        save_obj(&p, &mesh).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 0);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 0);
    }

    #[test]
    fn winding_faces_the_camera() {
        // mesh y decreases as grid v grows (world y up, image v down)
        let mesh = DepthMesh::from_fn(2, 2, |u, v| [u as f64, 1.0 - v as f64, 0.0]);
        let p = temp_path("wind.obj");
        save_obj(&p, &mesh).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let verts: Vec<[f64; 3]> = text
            .lines()
            .filter(|l| l.starts_with("v "))
            .map(|l| {
                let c: Vec<f64> = l
                    .split_whitespace()
                    .skip(1)
                    .map(|t| t.parse().unwrap())
                    .collect();
                [c[0], c[1], c[2]]
            })
            .collect();
        for line in text.lines().filter(|l| l.starts_with("f ")) {
            let idx: Vec<usize> = line
                .split_whitespace()
                .skip(1)
                .map(|t| t.parse::<usize>().unwrap() - 1)
                .collect();
            let (a, b, c) = (verts[idx[0]], verts[idx[1]], verts[idx[2]]);
            let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let nz = e1[0] * e2[1] - e1[1] * e2[0];
            assert!(nz > 0.0, "face {line} winds away from +z");
        }
    }

    #[test]
    fn textured_export_writes_uv_and_mtl() {
        let mesh = DepthMesh::from_fn(3, 2, |u, v| [u as f64, -(v as f64), 0.0]);
        let p = temp_path("tex.obj");
        save_obj_textured(&p, &mesh, "skin.png").unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("mtllib tex.mtl"));
        assert!(text.contains("vt 0 1"));
        assert!(text.contains("vt 1 0"));
        assert!(text.contains("f 1/1 4/4 2/2"));
        let mtl = fs::read_to_string(temp_path("tex.mtl")).unwrap();
        assert!(mtl.contains("map_Kd skin.png"));
    }
}
