//! Triangulations of rectangular domains, P1 finite-element matrices and
//! barycentric projectors.

use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, SparseSymMatrix};

/// Barycentric coordinates below `-CONTAINMENT_TOL` mean "outside".
const CONTAINMENT_TOL: f64 = 1e-12;
/// Projector weights at or below this are treated as exact zeros.
const WEIGHT_DROP: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

/// Lumped mass `C` (diagonal) and stiffness `G`.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub c: SparseSymMatrix,
    pub g: SparseSymMatrix,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh2D {
    /// Validates indices and requires counter-clockwise, non-degenerate
    /// triangles.
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::DegenerateMesh(format!("triangle {t} references a missing vertex")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::DegenerateMesh(format!(
                    "triangle {t} has non-positive signed area {area}"
                )));
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// `([xmin, xmax], [ymin, ymax])` over all vertices.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut bx = [f64::INFINITY, f64::NEG_INFINITY];
        let mut by = [f64::INFINITY, f64::NEG_INFINITY];
        for v in &self.vertices {
            bx = [bx[0].min(v[0]), bx[1].max(v[0])];
            by = [by[0].min(v[1]), by[1].max(v[1])];
        }
        (bx, by)
    }

    /// Plain-text form: one `v x y` line per vertex, then one `t i j k` line
    /// per triangle.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:e} {:e}", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "t {} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn from_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let bad = || Error::Parse(format!("line {}: {:?}", lineno + 1, line));
            match parts.next() {
                None => continue,
                Some("v") => {
                    let x: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                    let y: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                    vertices.push([x, y]);
                }
                Some("t") => {
                    let mut tri = [0usize; 3];
                    for slot in &mut tri {
                        *slot = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                    }
                    triangles.push(tri);
                }
                Some(_) => return Err(bad()),
            }
            if parts.next().is_some() {
                return Err(bad());
            }
        }
        Self::new(vertices, triangles)
    }
}

/// Structured grid over `x_range × y_range`, each axis extended on both sides
/// by `margin` times its own length, with `nx·ny` vertices and every cell cut
/// into two triangles along its lower-left to upper-right diagonal.
pub fn build_grid_mesh(
    x_range: [f64; 2],
    y_range: [f64; 2],
    nx: usize,
    ny: usize,
    margin: f64,
) -> Result<Mesh2D> {
    if nx < 2 || ny < 2 {
        return Err(Error::DegenerateMesh("grid needs at least 2 vertices per axis".into()));
    }
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::InvalidParameter(format!("margin must be non-negative, got {margin}")));
    }
    let lx = x_range[1] - x_range[0];
    let ly = y_range[1] - y_range[0];
    if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
        return Err(Error::DegenerateMesh(format!("empty range {x_range:?} x {y_range:?}")));
    }
    let (x0, x1) = (x_range[0] - margin * lx, x_range[1] + margin * lx);
    let (y0, y1) = (y_range[0] - margin * ly, y_range[1] + margin * ly);
    let coord = |lo: f64, hi: f64, i: usize, n: usize| {
        if i + 1 == n {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([coord(x0, x1, i, nx), coord(y0, y1, j, ny)]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v00 = j * nx + i;
            let (v10, v01, v11) = (v00 + 1, v00 + nx, v00 + nx + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Mesh2D::new(vertices, triangles)
}

/// Lumped mass and stiffness matrices of continuous piecewise-linear
/// elements.
pub fn fem_matrices(mesh: &Mesh2D) -> Result<FemMatrices> {
    let n = mesh.n_vertices();
    let mut mass = vec![0.0; n];
    let mut trip = Vec::with_capacity(mesh.triangles.len() * 6);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|v| mesh.vertices[v]);
        let area = signed_area(p[0], p[1], p[2]);
        if !(area > 0.0) {
            return Err(Error::DegenerateMesh(format!("triangle {t} has zero area")));
        }
        // Edge opposite each vertex; grad φ_i ∝ its rotation.
        let e: [[f64; 2]; 3] = std::array::from_fn(|i| {
            let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            [b[0] - a[0], b[1] - a[1]]
        });
        for a in 0..3 {
            mass[tri[a]] += area / 3.0;
            for b in 0..=a {
                let k = (e[a][0] * e[b][0] + e[a][1] * e[b][1]) / (4.0 * area);
                trip.push((tri[a], tri[b], k));
            }
        }
    }
    Ok(FemMatrices {
        c: SparseSymMatrix::diagonal(&mass),
        g: SparseSymMatrix::from_triplets(n, &trip)?,
    })
}

/// Uniform bucket grid over triangle bounding boxes for point location.
struct Locator {
    x0: f64,
    y0: f64,
    hx: f64,
    hy: f64,
    nbx: usize,
    nby: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(mesh: &Mesh2D) -> Self {
        let (bx, by) = mesh.bounding_box();
        let side = ((mesh.triangles.len() as f64).sqrt().ceil() as usize).max(1);
        let (nbx, nby) = (side, side);
        let hx = ((bx[1] - bx[0]) / nbx as f64).max(f64::MIN_POSITIVE);
        let hy = ((by[1] - by[0]) / nby as f64).max(f64::MIN_POSITIVE);
        let mut loc = Self { x0: bx[0], y0: by[0], hx, hy, nbx, nby, buckets: vec![Vec::new(); nbx * nby] };
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p = tri.map(|v| mesh.vertices[v]);
            let xs = p.map(|q| q[0]);
            let ys = p.map(|q| q[1]);
            let (i0, j0) = loc.cell(xs.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::INFINITY, f64::min));
            let (i1, j1) = loc.cell(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            // One extra cell each way covers points on bucket boundaries.
            for j in j0.saturating_sub(1)..=(j1 + 1).min(nby - 1) {
                for i in i0.saturating_sub(1)..=(i1 + 1).min(nbx - 1) {
                    loc.buckets[j * nbx + i].push(t);
                }
            }
        }
        loc
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize) {
        let i = ((x - self.x0) / self.hx).floor().clamp(0.0, (self.nbx - 1) as f64) as usize;
        let j = ((y - self.y0) / self.hy).floor().clamp(0.0, (self.nby - 1) as f64) as usize;
        (i, j)
    }

    fn candidates(&self, x: f64, y: f64) -> &[usize] {
        let (i, j) = self.cell(x, y);
        &self.buckets[j * self.nbx + i]
    }
}

fn barycentric(p: [[f64; 2]; 3], x: f64, y: f64) -> [f64; 3] {
    let d = (p[1][1] - p[2][1]) * (p[0][0] - p[2][0]) + (p[2][0] - p[1][0]) * (p[0][1] - p[2][1]);
    let l0 = ((p[1][1] - p[2][1]) * (x - p[2][0]) + (p[2][0] - p[1][0]) * (y - p[2][1])) / d;
    let l1 = ((p[2][1] - p[0][1]) * (x - p[2][0]) + (p[0][0] - p[2][0]) * (y - p[2][1])) / d;
    [l0, l1, 1.0 - l0 - l1]
}

/// `n_points × n_vertices` matrix of barycentric weights. Points on shared
/// edges go to the lowest-index containing triangle.
pub fn projector(mesh: &Mesh2D, points: &[[f64; 2]]) -> Result<SparseMatrix> {
    let loc = Locator::new(mesh);
    let mut rows = Vec::with_capacity(points.len());
    for (idx, &[x, y]) in points.iter().enumerate() {
        let mut found = None;
        for &t in loc.candidates(x, y) {
            let tri = mesh.triangles[t];
            let lam = barycentric(tri.map(|v| mesh.vertices[v]), x, y);
            if lam.iter().all(|&l| l >= -CONTAINMENT_TOL) {
                found = Some((tri, lam));
                break;
            }
        }
        let (tri, lam) = found.ok_or(Error::PointOutsideMesh { index: idx })?;
        let lam = lam.map(|l| l.clamp(0.0, 1.0));
        let total: f64 = lam.iter().sum();
        let row: Vec<(usize, f64)> = tri
            .iter()
            .zip(lam)
            .filter(|(_, l)| *l > WEIGHT_DROP)
            .map(|(&v, l)| (v, l / total))
            .collect();
        rows.push(row);
    }
    SparseMatrix::from_rows(mesh.n_vertices(), rows)
}
