//! Grid-structured 3D face geometry.
//!
//! A [`DepthMesh`] is a regular (u, v) lattice of 3D vertices with a validity
//! mask — the natural output of a depth sensor or a fitted template. A
//! [`TranslationField`] stores per-vertex 3D displacements on the same
//! lattice (for example, the difference between one frame of a performance
//! and the performer's average face).

use crate::error::{Error, Result};

/// Regular grid of 3D points with per-vertex validity.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMesh {
    width: usize,
    height: usize,
    points: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

impl DepthMesh {
    pub fn new(
        width: usize,
        height: usize,
        points: Vec<[f64; 3]>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "mesh grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if points.len() != width * height || valid.len() != width * height {
            return Err(Error::dims(
                "mesh buffers",
                width * height,
                points.len().max(valid.len()),
            ));
        }
        for (p, &ok) in points.iter().zip(&valid) {
            if ok && !p.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite("mesh vertex"));
            }
        }
        Ok(Self {
            width,
            height,
            points,
            valid,
        })
    }

    /// Fully-valid mesh built from a per-vertex function of (u, v).
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut points = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                points.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            points,
            valid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    #[inline]
    pub fn point(&self, u: usize, v: usize) -> [f64; 3] {
        self.points[v * self.width + u]
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Bilinear position sample at fractional grid coordinates. Returns
    /// `None` when outside the grid or when any of the four surrounding
    /// vertices is invalid.
    pub fn sample(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        if !(u.is_finite() && v.is_finite()) || u < 0.0 || v < 0.0 {
            return None;
        }
        let u0 = u.floor() as usize;
        let v0 = v.floor() as usize;
        if u0 + 1 >= self.width || v0 + 1 >= self.height {
            // allow sampling exactly on the far edge
            if u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64 {
                let uu = u0.min(self.width - 1);
                let vv = v0.min(self.height - 1);
                let u1 = (u0 + 1).min(self.width - 1);
                let v1 = (v0 + 1).min(self.height - 1);
                return self.bilerp(uu, vv, u1, v1, u - uu as f64, v - vv as f64);
            }
            return None;
        }
        self.bilerp(u0, v0, u0 + 1, v0 + 1, u - u0 as f64, v - v0 as f64)
    }

    fn bilerp(
        &self,
        u0: usize,
        v0: usize,
        u1: usize,
        v1: usize,
        fu: f64,
        fv: f64,
    ) -> Option<[f64; 3]> {
        let corners = [(u0, v0), (u1, v0), (u0, v1), (u1, v1)];
        if corners.iter().any(|&(u, v)| !self.is_valid(u, v)) {
            return None;
        }
        let p00 = self.point(u0, v0);
        let p10 = self.point(u1, v0);
        let p01 = self.point(u0, v1);
        let p11 = self.point(u1, v1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * fu;
            let bot = p01[c] + (p11[c] - p01[c]) * fu;
            out[c] = top + (bot - top) * fv;
        }
        Some(out)
    }

    /// Nearest valid grid vertex to fractional grid coordinates, by squared
    /// (u, v) distance; ties break toward the smaller linear index. Searches
    /// outward in rings from the rounded location, so cost scales with the
    /// distance to the nearest valid vertex rather than the grid size.
    /// Returns `None` when the mesh has no valid vertices.
    pub fn nearest_valid_grid(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let cu = u.round().clamp(0.0, (self.width - 1) as f64) as i64;
        let cv = v.round().clamp(0.0, (self.height - 1) as f64) as i64;
        let max_ring = (self.width + self.height) as i64;
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..=max_ring {
            if let Some((d, _)) = best {
                // ring r cells are at least (r−1) grid units from (u, v)
                // because (cu, cv) is within half a unit of the query
                let ring_min = (ring - 1).max(0) as f64 - 0.5;
                if d.sqrt() < ring_min {
                    break;
                }
            }
            for dv in -ring..=ring {
                for du in -ring..=ring {
                    if du.abs().max(dv.abs()) != ring {
                        continue;
                    }
                    let (uu, vv) = (cu + du, cv + dv);
                    if uu < 0
                        || vv < 0
                        || uu as usize >= self.width
                        || vv as usize >= self.height
                    {
                        continue;
                    }
                    let (uu, vv) = (uu as usize, vv as usize);
                    if !self.is_valid(uu, vv) {
                        continue;
                    }
                    let idx = vv * self.width + uu;
                    let d = (uu as f64 - u).powi(2) + (vv as f64 - v).powi(2);
                    let better = match best {
                        None => true,
                        Some((bd, bi)) => d < bd || (d == bd && idx < bi),
                    };
                    if better {
                        best = Some((d, idx));
                    }
                }
            }
        }
        best.map(|(_, idx)| (idx % self.width, idx / self.width))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor == 0.0 {
            return Err(Error::InvalidInput(format!(
                "scale factor must be finite and nonzero, got {factor}"
            )));
        }
        let points = self
            .points
            .iter()
            .map(|p| [p[0] * factor, p[1] * factor, p[2] * factor])
            .collect();
        Self::new(self.width, self.height, points, self.valid.clone())
    }

    pub fn translated(&self, delta: [f64; 3]) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]])
            .collect();
        Self {
            width: self.width,
            height: self.height,
            points,
            valid: self.valid.clone(),
        }
    }

    /// Axis-aligned bounds over valid vertices: (min, max).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (p, &ok) in self.points.iter().zip(&self.valid) {
            if !ok {
                continue;
            }
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        (lo, hi)
    }

    /// Vertex-wise `self + scale·field`. Vertices where the field is
    /// invalid keep their base position; mesh validity is unchanged.
    pub fn displaced(&self, field: &TranslationField, scale: f64) -> Result<Self> {
        if field.width() != self.width || field.height() != self.height {
            return Err(Error::dims(
                "translation field grid",
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", field.width(), field.height()),
            ));
        }
        let mut points = self.points.clone();
        for v in 0..self.height {
            for u in 0..self.width {
                let i = v * self.width + u;
                if self.valid[i] && field.is_valid(u, v) {
                    let d = field.delta(u, v);
                    for c in 0..3 {
                        points[i][c] += scale * d[c];
                    }
                }
            }
        }
        Self::new(self.width, self.height, points, self.valid.clone())
    }

    /// Mean of valid vertices; `None` for an all-invalid mesh.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for (p, &ok) in self.points.iter().zip(&self.valid) {
            if ok {
                for c in 0..3 {
                    acc[c] += p[c];
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        for c in &mut acc {
            *c /= n as f64;
        }
        Some(acc)
    }
}

/// Uniform-cell spatial hash over a mesh's valid vertices for nearest-vertex
/// queries in 3D. Ties (exactly equal distances) resolve to the smaller
/// linear vertex index, so results never depend on hash iteration order.
pub struct VertexIndex {
    cell: f64,
    origin: [f64; 3],
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
    points: Vec<[f64; 3]>,
    grid_width: usize,
}

impl VertexIndex {
    pub fn build(mesh: &DepthMesh) -> Result<Self> {
        if mesh.valid_count() == 0 {
            return Err(Error::Empty("mesh has no valid vertices to index".into()));
        }
        let (lo, hi) = mesh.bounds();
        // Bucket at the median edge length: cells then hold O(1) vertices
        // on any reasonably uniform grid, and the ring search terminates
        // after inspecting a bounded neighbourhood.
        let mut edges = Vec::new();
        for v in 0..mesh.height() {
            for u in 0..mesh.width() {
                if !mesh.is_valid(u, v) {
                    continue;
                }
                let p = mesh.point(u, v);
                let mut push = |q: [f64; 3]| {
                    let d = ((p[0] - q[0]).powi(2)
                        + (p[1] - q[1]).powi(2)
                        + (p[2] - q[2]).powi(2))
                    .sqrt();
                    edges.push(d);
                };
                if u + 1 < mesh.width() && mesh.is_valid(u + 1, v) {
                    push(mesh.point(u + 1, v));
                }
                if v + 1 < mesh.height() && mesh.is_valid(u, v + 1) {
                    push(mesh.point(u, v + 1));
                }
            }
        }
        let cell = if edges.is_empty() {
            // isolated vertices: any positive cell size indexes correctly
            let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2]);
            extent.max(1.0)
        } else {
            let mid = edges.len() / 2;
            let (_, median, _) =
                edges.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            median.max(1e-9)
        };
        let dims = [
            ((hi[0] - lo[0]) / cell).floor() as usize + 1,
            ((hi[1] - lo[1]) / cell).floor() as usize + 1,
            ((hi[2] - lo[2]) / cell).floor() as usize + 1,
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut points = Vec::with_capacity(mesh.width() * mesh.height());
        for v in 0..mesh.height() {
            for u in 0..mesh.width() {
                let idx = v * mesh.width() + u;
                let p = mesh.point(u, v);
                points.push(p);
                if !mesh.is_valid(u, v) {
                    continue;
                }
                let c = Self::cell_of(&p, &lo, cell, &dims);
                cells[c].push(idx as u32);
            }
        }
        Ok(Self {
            cell,
            origin: lo,
            dims,
            cells,
            points,
            grid_width: mesh.width(),
        })
    }

    fn cell_of(p: &[f64; 3], origin: &[f64; 3], cell: f64, dims: &[usize; 3]) -> usize {
        let ix = (((p[0] - origin[0]) / cell).floor().max(0.0) as usize).min(dims[0] - 1);
        let iy = (((p[1] - origin[1]) / cell).floor().max(0.0) as usize).min(dims[1] - 1);
        let iz = (((p[2] - origin[2]) / cell).floor().max(0.0) as usize).min(dims[2] - 1);
        (iz * dims[1] + iy) * dims[0] + ix
    }

    /// Nearest valid vertex to `p`, returned as (u, v) grid coordinates.
    /// Searches outward ring by ring; a candidate found in ring r is only
    /// accepted once ring r+1 cannot contain anything closer.
    pub fn nearest(&self, p: [f64; 3]) -> (usize, usize) {
        let cx = ((p[0] - self.origin[0]) / self.cell).floor() as i64;
        let cy = ((p[1] - self.origin[1]) / self.cell).floor() as i64;
        let cz = ((p[2] - self.origin[2]) / self.cell).floor() as i64;
        // enough rings to reach every in-bounds cell even from a start cell
        // far outside the grid
        let span = |c: i64, dim: usize| c.abs().max((c - (dim as i64 - 1)).abs());
        let max_ring = span(cx, self.dims[0])
            .max(span(cy, self.dims[1]))
            .max(span(cz, self.dims[2]))
            + 1;
        let mut best: Option<(f64, u32)> = None;
        for ring in 0..=max_ring {
            if let Some((d, _)) = best {
                // everything in this ring is at least (ring-1)*cell away
                let ring_min = (ring - 1).max(0) as f64 * self.cell;
                if d.sqrt() < ring_min {
                    break;
                }
            }
            self.scan_ring(cx, cy, cz, ring, &p, &mut best);
        }
        let idx = best.expect("index built over a non-empty mesh").1 as usize;
        (idx % self.grid_width, idx / self.grid_width)
    }

    fn scan_ring(
        &self,
        cx: i64,
        cy: i64,
        cz: i64,
        ring: i64,
        p: &[f64; 3],
        best: &mut Option<(f64, u32)>,
    ) {
        for dz in -ring..=ring {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    let (x, y, z) = (cx + dx, cy + dy, cz + dz);
                    if x < 0
                        || y < 0
                        || z < 0
                        || x as usize >= self.dims[0]
                        || y as usize >= self.dims[1]
                        || z as usize >= self.dims[2]
                    {
                        continue;
                    }
                    let c = (z as usize * self.dims[1] + y as usize) * self.dims[0] + x as usize;
                    for &idx in &self.cells[c] {
                        let q = self.points[idx as usize];
                        let d = (q[0] - p[0]).powi(2)
                            + (q[1] - p[1]).powi(2)
                            + (q[2] - p[2]).powi(2);
                        let better = match *best {
                            None => true,
                            Some((bd, bi)) => d < bd || (d == bd && idx < bi),
                        };
                        if better {
                            *best = Some((d, idx));
                        }
                    }
                }
            }
        }
    }
}

/// Per-vertex 3D displacements on a mesh grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationField {
    width: usize,
    height: usize,
    deltas: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

impl TranslationField {
    pub fn new(
        width: usize,
        height: usize,
        deltas: Vec<[f64; 3]>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if deltas.len() != width * height || valid.len() != width * height {
            return Err(Error::dims(
                "translation buffers",
                width * height,
                deltas.len().max(valid.len()),
            ));
        }
        for (d, &ok) in deltas.iter().zip(&valid) {
            if ok && !d.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite("translation vector"));
            }
        }
        Ok(Self {
            width,
            height,
            deltas,
            valid,
        })
    }

    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            deltas: vec![[0.0; 3]; width * height],
            valid: vec![true; width * height],
        }
    }

    /// Per-vertex difference `frame - base` where both vertices are valid.
    pub fn between(base: &DepthMesh, frame: &DepthMesh) -> Result<Self> {
        if base.width() != frame.width() || base.height() != frame.height() {
            return Err(Error::dims(
                "mesh difference",
                format!("{}x{}", base.width(), base.height()),
                format!("{}x{}", frame.width(), frame.height()),
            ));
        }
        let (w, h) = (base.width(), base.height());
        let mut deltas = vec![[0.0; 3]; w * h];
        let mut valid = vec![false; w * h];
        for v in 0..h {
            for u in 0..w {
                if base.is_valid(u, v) && frame.is_valid(u, v) {
                    let a = base.point(u, v);
                    let b = frame.point(u, v);
                    deltas[v * w + u] = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                    valid[v * w + u] = true;
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            deltas,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    #[inline]
    pub fn delta(&self, u: usize, v: usize) -> [f64; 3] {
        self.deltas[v * self.width + u]
    }

    pub fn deltas(&self) -> &[[f64; 3]] {
        &self.deltas
    }

    pub fn set(&mut self, u: usize, v: usize, delta: [f64; 3]) {
        let i = v * self.width + u;
        self.deltas[i] = delta;
        self.valid[i] = true;
    }

    /// Bilinear sample; `None` outside the grid or near invalid vertices.
    pub fn sample(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        if !(u.is_finite() && v.is_finite()) || u < 0.0 || v < 0.0 {
            return None;
        }
        let u0 = u.floor() as usize;
        let v0 = v.floor() as usize;
        let u1 = u0 + 1;
        let v1 = v0 + 1;
        let (u1, v1) = if u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64 {
            (u1.min(self.width - 1), v1.min(self.height - 1))
        } else {
            return None;
        };
        let corners = [(u0, v0), (u1, v0), (u0, v1), (u1, v1)];
        if corners.iter().any(|&(uu, vv)| !self.is_valid(uu, vv)) {
            return None;
        }
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let d00 = self.delta(u0, v0);
        let d10 = self.delta(u1, v0);
        let d01 = self.delta(u0, v1);
        let d11 = self.delta(u1, v1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = d00[c] + (d10[c] - d00[c]) * fu;
            let bot = d01[c] + (d11[c] - d01[c]) * fu;
            out[c] = top + (bot - top) * fv;
        }
        Some(out)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.deltas
            .iter()
            .zip(&self.valid)
            .filter(|&(_, &ok)| ok)
            .map(|(d, _)| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn rms_magnitude(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (d, &ok) in self.deltas.iter().zip(&self.valid) {
            if ok {
                acc += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (acc / n as f64).sqrt()
        }
    }
}

/// Scalar value per grid vertex with a validity mask, e.g. projected
/// deformation magnitudes awaiting denoising.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::dims(
                "scalar field buffers",
                width * height,
                values.len().max(valid.len()),
            ));
        }
        for (v, &ok) in values.iter().zip(&valid) {
            if ok && !v.is_finite() {
                return Err(Error::NonFinite("scalar field value"));
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        let i = v * self.width + u;
        self.values[i] = value;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, u: usize, v: usize) {
        let i = v * self.width + u;
        self.valid[i] = false;
        self.values[i] = 0.0;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// (min, max) over valid entries; `None` if none are valid.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for (v, &ok) in self.values.iter().zip(&self.valid) {
            if ok {
                range = Some(match range {
                    None => (*v, *v),
                    Some((lo, hi)) => (lo.min(*v), hi.max(*v)),
                });
            }
        }
        range
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize) -> DepthMesh {
        DepthMesh::from_fn(w, h, |u, v| [u as f64, v as f64, 0.0])
    }

    #[test]
    fn sample_interpolates_plane_exactly() {
        let m = plane(10, 8);
        let p = m.sample(3.25, 4.5).unwrap();
        assert!((p[0] - 3.25).abs() < 1e-12);
        assert!((p[1] - 4.5).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
        // far corner is exactly reachable
        assert!(m.sample(9.0, 7.0).is_some());
        assert!(m.sample(9.01, 7.0).is_none());
    }

    #[test]
    fn sample_refuses_invalid_neighbourhoods() {
        let mut valid = vec![true; 25];
        valid[2 * 5 + 2] = false;
        let pts = (0..25).map(|i| [(i % 5) as f64, (i / 5) as f64, 0.0]).collect();
        let m = DepthMesh::new(5, 5, pts, valid).unwrap();
        assert!(m.sample(1.5, 1.5).is_none()); // touches (2,2)
        assert!(m.sample(0.5, 0.5).is_some());
    }

    #[test]
    fn nearest_vertex_matches_brute_force() {
        // wavy sheet with a hole
        let w = 30;
        let h = 24;
        let mut valid = vec![true; w * h];
        for v in 8..12 {
            for u in 10..16 {
                valid[v * w + u] = false;
            }
        }
        let pts: Vec<[f64; 3]> = (0..w * h)
            .map(|i| {
                let (u, v) = (i % w, i / w);
                [
                    u as f64,
                    v as f64,
                    ((u as f64) * 0.7).sin() * 3.0 + ((v as f64) * 0.4).cos() * 2.0,
                ]
            })
            .collect();
        let m = DepthMesh::new(w, h, pts.clone(), valid.clone()).unwrap();
        let index = VertexIndex::build(&m).unwrap();
        let queries = [
            [0.2, 0.1, 0.0],
            [12.7, 9.9, 1.5],
            [29.0, 23.0, -4.0],
            [15.5, 10.0, 3.3],
            [-5.0, -5.0, 10.0],
            [40.0, 30.0, 0.0],
        ];
        for q in queries {
            let got = index.nearest(q);
            // brute force with the same tie-break rule
            let mut best = (usize::MAX, f64::INFINITY);
            for i in 0..w * h {
                if !valid[i] {
                    continue;
                }
                let p = pts[i];
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            }
            assert_eq!(got, (best.0 % w, best.0 / w), "query {q:?}");
        }
    }

    #[test]
    fn nearest_vertex_ties_break_to_lowest_index() {
        // two vertices equidistant from the query
        let pts = vec![
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [2.0, 2.0, 0.0],
        ];
        let m = DepthMesh::new(2, 2, pts, vec![true; 4]).unwrap();
        let index = VertexIndex::build(&m).unwrap();
        assert_eq!(index.nearest([1.0, 0.0, 0.0]), (0, 0));
        assert_eq!(index.nearest([1.0, 1.0, 0.0]), (0, 0));
    }

    #[test]
    fn nearest_valid_grid_matches_brute_force() {
        let w = 20;
        let h = 15;
        let mut valid = vec![true; w * h];
        // carve an L-shaped invalid region
        for v in 3..10 {
            for u in 5..12 {
                valid[v * w + u] = false;
            }
        }
        for v in 10..14 {
            for u in 5..8 {
                valid[v * w + u] = false;
            }
        }
        let pts = (0..w * h).map(|i| [(i % w) as f64, (i / w) as f64, 0.0]).collect();
        let m = DepthMesh::new(w, h, pts, valid.clone()).unwrap();
        for &(qu, qv) in &[
            (7.3, 6.1),
            (0.0, 0.0),
            (19.0, 14.0),
            (6.5, 11.9),
            (-3.0, 7.5),
            (25.0, 20.0),
            (8.0, 6.0),
        ] {
            let got = m.nearest_valid_grid(qu, qv).unwrap();
            let mut best = (usize::MAX, f64::INFINITY);
            for i in 0..w * h {
                if !valid[i] {
                    continue;
                }
                let d = ((i % w) as f64 - qu).powi(2) + ((i / w) as f64 - qv).powi(2);
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            }
            assert_eq!(got, (best.0 % w, best.0 / w), "query ({qu},{qv})");
        }
    }

    #[test]
    fn all_invalid_mesh_constructs_but_cannot_be_indexed() {
        let m = DepthMesh::new(3, 3, vec![[0.0; 3]; 9], vec![false; 9]).unwrap();
        assert_eq!(m.valid_count(), 0);
        assert!(m.nearest_valid_grid(1.0, 1.0).is_none());
        assert!(m.centroid().is_none());
        assert!(VertexIndex::build(&m).is_err());
    }

    #[test]
    fn between_masks_and_subtracts() {
        let a = plane(6, 6);
        let mut valid = vec![true; 36];
        valid[7] = false;
        let pts = (0..36)
            .map(|i| [(i % 6) as f64 + 1.0, (i / 6) as f64, 2.0])
            .collect();
        let b = DepthMesh::new(6, 6, pts, valid).unwrap();
        let t = TranslationField::between(&a, &b).unwrap();
        assert!(!t.is_valid(1, 1));
        assert!(t.is_valid(2, 1));
        assert_eq!(t.delta(2, 1), [1.0, 0.0, 2.0]);
        assert!((t.max_magnitude() - (1.0f64 + 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scaled_multiplies_coordinates() {
        let m = plane(4, 4).scaled(2.0).unwrap();
        assert_eq!(m.point(3, 2), [6.0, 4.0, 0.0]);
        assert!(plane(4, 4).scaled(0.0).is_err());
    }
}
