//! Conforming quasi-uniform triangulations of the unit square and of a
//! regular polygon inscribed in the unit disk.
//!
//! Both constructions guarantee that every triangle has at least one
//! interior vertex, a property the velocity space needs on the coarsest
//! mesh and which midpoint refinement preserves. Edges are canonicalized
//! (sorted vertex pairs, lexicographic enumeration) so downstream
//! degree-of-freedom numbering is deterministic.

use crate::elements::EDGE_VERTICES;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;

/// Sentinel for a missing neighbor in [`Mesh::edge_tris`].
pub const NO_TRI: usize = usize::MAX;

/// Quasi-uniformity ratios (h / min inradius) stay below this for both mesh
/// families at every refinement depth; midpoint refinement produces children
/// similar to their parents, so the ratio is level-independent.
pub const MAX_QUASI_UNIFORMITY: f64 = 12.0;

/// Immutable conforming triangulation. Construct through the builders or
/// [`Mesh::import_text`]; all derived data (edges, adjacency, boundary
/// masks, `h`) is computed once at construction.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Vertex coordinates.
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex index triples.
    pub triangles: Vec<[usize; 3]>,
    /// Canonical edges `[a, b]` with `a < b`, lexicographically sorted.
    pub edges: Vec<[usize; 2]>,
    /// Edge ids per triangle; local edge `e` is opposite local vertex `e`.
    pub tri_edges: Vec<[usize; 3]>,
    /// Adjacent triangles per edge ([`NO_TRI`] marks the outside).
    pub edge_tris: Vec<[usize; 2]>,
    pub boundary_vertex_mask: Vec<bool>,
    pub boundary_edge_mask: Vec<bool>,
    /// Max element diameter (longest triangle side in the mesh).
    pub h: f64,
    /// h / smallest inradius.
    pub quasi_uniformity_ratio: f64,
    /// For refined meshes: parent triangle in the coarse mesh, per triangle.
    pub parent: Option<Vec<usize>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("polygon disk mesh needs at least 8 boundary segments, got {0}")]
    TooFewSegments(usize),
    #[error("triangle {tri} is degenerate (area {area:.3e})")]
    DegenerateTriangle { tri: usize, area: f64 },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("imported mesh is inadmissible: {0}")]
    Inadmissible(String),
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum MeshViolation {
    /// Signed area not strictly positive (flipped or degenerate triangle).
    Orientation { tri: usize, area: f64 },
    /// All three vertices of a triangle lie on the boundary.
    InteriorVertex { tri: usize },
    /// Edge with an adjacency count other than 1 (boundary) or 2 (interior).
    EdgeAdjacency { edge: usize, count: usize },
    /// Boundary masks disagree with edge adjacency.
    BoundaryMask { what: String },
    /// h / min inradius above [`MAX_QUASI_UNIFORMITY`].
    QuasiUniformity { ratio: f64 },
    /// Parent map present but malformed.
    ParentMap { what: String },
}

impl fmt::Display for MeshViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshViolation::Orientation { tri, area } => {
                write!(f, "orientation: triangle {tri} has signed area {area:.3e}")
            }
            MeshViolation::InteriorVertex { tri } => {
                write!(
                    f,
                    "interior-vertex condition: triangle {tri} has only boundary vertices"
                )
            }
            MeshViolation::EdgeAdjacency { edge, count } => {
                write!(f, "edge {edge} has {count} adjacent triangles")
            }
            MeshViolation::BoundaryMask { what } => write!(f, "boundary mask: {what}"),
            MeshViolation::QuasiUniformity { ratio } => {
                write!(
                    f,
                    "quasi-uniformity ratio {ratio:.3} exceeds {MAX_QUASI_UNIFORMITY}"
                )
            }
            MeshViolation::ParentMap { what } => write!(f, "parent map: {what}"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<MeshViolation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Affine geometry of one triangle: `x = v0 + J ξ` with `J = [v1-v0 | v2-v0]`.
#[derive(Debug, Clone, Copy)]
pub struct TriGeometry {
    pub v0: [f64; 2],
    /// Column-major Jacobian: `jac[c]` is column `c`.
    pub jac: [[f64; 2]; 2],
    /// Inverse transpose of the Jacobian; maps reference gradients to
    /// physical gradients.
    pub inv_t: [[f64; 2]; 2],
    pub det: f64,
    pub area: f64,
}

impl TriGeometry {
    /// Physical point of reference coordinates `(xi, eta)`.
    pub fn to_physical(&self, xi: f64, eta: f64) -> [f64; 2] {
        [
            self.v0[0] + self.jac[0][0] * xi + self.jac[1][0] * eta,
            self.v0[1] + self.jac[0][1] * xi + self.jac[1][1] * eta,
        ]
    }

    /// Reference gradient to physical gradient.
    pub fn grad_to_physical(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1],
            self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1],
        ]
    }

    /// Barycentric coordinates of a physical point.
    pub fn barycentric(&self, p: [f64; 2]) -> [f64; 3] {
        let rx = p[0] - self.v0[0];
        let ry = p[1] - self.v0[1];
        // Solve J (xi, eta)^T = r.
        let xi = (self.jac[1][1] * rx - self.jac[1][0] * ry) / self.det;
        let eta = (-self.jac[0][1] * rx + self.jac[0][0] * ry) / self.det;
        [1.0 - xi - eta, xi, eta]
    }
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn tri_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area (positive for counterclockwise triangles).
    pub fn tri_signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.tri_coords(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn geometry(&self, t: usize) -> TriGeometry {
        let [p0, p1, p2] = self.tri_coords(t);
        let jac = [
            [p1[0] - p0[0], p1[1] - p0[1]],
            [p2[0] - p0[0], p2[1] - p0[1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[1][0] * jac[0][1];
        // J^{-T} = adj(J)^T / det with adj worked out by hand for 2x2.
        let inv_t = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        TriGeometry {
            v0: p0,
            jac,
            inv_t,
            det,
            area: 0.5 * det,
        }
    }

    pub fn domain_area(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.tri_signed_area(t))
            .sum()
    }

    /// SHA-256 over the text export; identifies the mesh in persisted
    /// trajectory files.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.export_text().as_bytes());
        hasher.finalize().into()
    }

    /// Line-oriented text export: `vertices N`, `triangles M`, then `x y`
    /// rows and `a b c` rows. Coordinates print with enough digits to
    /// round-trip exactly.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("vertices {}\n", self.n_vertices()));
        out.push_str(&format!("triangles {}\n", self.n_triangles()));
        for v in &self.vertices {
            out.push_str(&format!("{:?} {:?}\n", v[0], v[1]));
        }
        for t in &self.triangles {
            out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
        }
        out
    }

    pub fn import_text(text: &str) -> Result<Mesh, MeshError> {
        let mut lines = text.lines().enumerate();
        let mut expect_count = |tag: &str| -> Result<usize, MeshError> {
            let (idx, line) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                message: format!("missing `{tag}` header"),
            })?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(n), None) if t == tag => n.parse().map_err(|e| MeshError::Parse {
                    line: idx + 1,
                    message: format!("bad count: {e}"),
                }),
                _ => Err(MeshError::Parse {
                    line: idx + 1,
                    message: format!("expected `{tag} N`, got `{line}`"),
                }),
            }
        };
        let nv = expect_count("vertices")?;
        let nt = expect_count("triangles")?;

        let mut vertices = Vec::with_capacity(nv);
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nv {
            let (idx, line) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                message: "unexpected end of vertex rows".into(),
            })?;
            let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            match nums {
                Ok(v) if v.len() == 2 => vertices.push([v[0], v[1]]),
                _ => {
                    return Err(MeshError::Parse {
                        line: idx + 1,
                        message: format!("expected `x y`, got `{line}`"),
                    })
                }
            }
        }
        for _ in 0..nt {
            let (idx, line) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                message: "unexpected end of triangle rows".into(),
            })?;
            let nums: Result<Vec<usize>, _> = line.split_whitespace().map(str::parse).collect();
            match nums {
                Ok(t) if t.len() == 3 && t.iter().all(|&i| i < nv) => {
                    triangles.push([t[0], t[1], t[2]])
                }
                _ => {
                    return Err(MeshError::Parse {
                        line: idx + 1,
                        message: format!("expected three vertex indices below {nv}, got `{line}`"),
                    })
                }
            }
        }

        let mesh = finalize(vertices, triangles, None);
        let report = validate(&mesh);
        if let Some(v) = report.violations.first() {
            return Err(MeshError::Inadmissible(v.to_string()));
        }
        Ok(mesh)
    }
}

/// Derive edges, adjacency, boundary masks, and the size metrics.
fn finalize(
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    parent: Option<Vec<usize>>,
) -> Mesh {
    // Canonical edge enumeration: sorted pairs in lexicographic order.
    let mut edge_ids: BTreeMap<[usize; 2], usize> = BTreeMap::new();
    for t in &triangles {
        for [a, b] in EDGE_VERTICES {
            let (lo, hi) = (t[a].min(t[b]), t[a].max(t[b]));
            edge_ids.entry([lo, hi]).or_insert(0);
        }
    }
    let edges: Vec<[usize; 2]> = edge_ids.keys().copied().collect();
    for (i, e) in edges.iter().enumerate() {
        *edge_ids.get_mut(e).unwrap() = i;
    }

    let mut tri_edges = Vec::with_capacity(triangles.len());
    let mut edge_tris = vec![[NO_TRI; 2]; edges.len()];
    for (ti, t) in triangles.iter().enumerate() {
        let mut ids = [0usize; 3];
        for (e, [a, b]) in EDGE_VERTICES.iter().enumerate() {
            let (lo, hi) = (t[*a].min(t[*b]), t[*a].max(t[*b]));
            let id = edge_ids[&[lo, hi]];
            ids[e] = id;
            let slot = &mut edge_tris[id];
            if slot[0] == NO_TRI {
                slot[0] = ti;
            } else {
                slot[1] = ti;
            }
        }
        tri_edges.push(ids);
    }

    let boundary_edge_mask: Vec<bool> = edge_tris.iter().map(|s| s[1] == NO_TRI).collect();
    let mut boundary_vertex_mask = vec![false; vertices.len()];
    for (e, &[a, b]) in edges.iter().enumerate() {
        if boundary_edge_mask[e] {
            boundary_vertex_mask[a] = true;
            boundary_vertex_mask[b] = true;
        }
    }

    let mut h: f64 = 0.0;
    let mut min_inradius = f64::INFINITY;
    for t in 0..triangles.len() {
        let [p0, p1, p2] = {
            let [a, b, c] = triangles[t];
            [vertices[a], vertices[b], vertices[c]]
        };
        let s01 = dist(p0, p1);
        let s12 = dist(p1, p2);
        let s20 = dist(p2, p0);
        h = h.max(s01).max(s12).max(s20);
        let area = 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]));
        let perimeter = s01 + s12 + s20;
        min_inradius = min_inradius.min(2.0 * area / perimeter);
    }

    Mesh {
        vertices,
        triangles,
        edges,
        tri_edges,
        edge_tris,
        boundary_vertex_mask,
        boundary_edge_mask,
        h,
        quasi_uniformity_ratio: h / min_inradius,
        parent,
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Unit square split into `n x n` cells, each cell into 4 triangles around
/// its center. The center vertices keep every triangle attached to an
/// interior vertex even at `n = 1`; max element diameter is the cell side
/// `1/n`.
pub fn build_unit_square_mesh(n: usize) -> Mesh {
    assert!(n >= 1, "need at least one cell per side");
    let grid = |i: usize, j: usize| j * (n + 1) + i;
    let n_grid = (n + 1) * (n + 1);
    let mut vertices = Vec::with_capacity(n_grid + n * n);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    for cy in 0..n {
        for cx in 0..n {
            vertices.push([(cx as f64 + 0.5) / n as f64, (cy as f64 + 0.5) / n as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(4 * n * n);
    for cy in 0..n {
        for cx in 0..n {
            let m = n_grid + cy * n + cx;
            let c00 = grid(cx, cy);
            let c10 = grid(cx + 1, cy);
            let c11 = grid(cx + 1, cy + 1);
            let c01 = grid(cx, cy + 1);
            triangles.push([c00, c10, m]);
            triangles.push([c10, c11, m]);
            triangles.push([c11, c01, m]);
            triangles.push([c01, c00, m]);
        }
    }
    finalize(vertices, triangles, None)
}

/// Regular `n`-gon inscribed in the unit disk, triangulated by concentric
/// rings: ring `k` of `m` holds `c k` vertices at radius `k/m` where
/// `c = n/m`, with a fan at the center and angle-merged strips between
/// rings. `m` is the largest divisor of `n` keeping at least 6 sectors.
pub fn build_polygon_disk_mesh(n: usize) -> Result<Mesh, MeshError> {
    if n < 8 {
        return Err(MeshError::TooFewSegments(n));
    }
    let m = (1..=n)
        .rev()
        .find(|m| n % m == 0 && n / m >= 6)
        .unwrap_or(1);
    let c = n / m;

    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; m + 1];
    for k in 1..=m {
        ring_start[k] = vertices.len();
        let count = c * k;
        let radius = k as f64 / m as f64;
        for i in 0..count {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            vertices.push([radius * theta.cos(), radius * theta.sin()]);
        }
    }

    let mut triangles = Vec::new();
    // Center fan against ring 1.
    for i in 0..c {
        triangles.push([0, ring_start[1] + i, ring_start[1] + (i + 1) % c]);
    }
    // Strips: merge inner ring k and outer ring k+1 by ascending angle.
    for k in 1..m {
        let (inner0, n_in) = (ring_start[k], c * k);
        let (outer0, n_out) = (ring_start[k + 1], c * (k + 1));
        let angle =
            |idx: usize, count: usize| 2.0 * std::f64::consts::PI * idx as f64 / count as f64;
        let (mut i, mut j) = (0usize, 0usize);
        while i < n_in || j < n_out {
            let next_inner = if i < n_in {
                angle(i + 1, n_in)
            } else {
                f64::INFINITY
            };
            let next_outer = if j < n_out {
                angle(j + 1, n_out)
            } else {
                f64::INFINITY
            };
            let iv = inner0 + i % n_in;
            let jv = outer0 + j % n_out;
            if next_outer <= next_inner {
                triangles.push([jv, outer0 + (j + 1) % n_out, iv]);
                j += 1;
            } else {
                triangles.push([jv, inner0 + (i + 1) % n_in, iv]);
                i += 1;
            }
        }
    }

    let mesh = finalize(vertices, triangles, None);
    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_signed_area(t);
        if area <= 1e-14 {
            return Err(MeshError::DegenerateTriangle { tri: t, area });
        }
    }
    Ok(mesh)
}

/// Midpoint refinement: each triangle splits into 3 corner children and the
/// medial triangle. New vertices are midpoints, indexed `V + edge_id`;
/// midpoints of boundary edges become boundary vertices. The result carries
/// a parent map into `mesh`.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    vertices.reserve(mesh.n_edges());
    for &[a, b] in &mesh.edges {
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
    }

    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    let mut parent = Vec::with_capacity(4 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [v0, v1, v2] = *tri;
        // Midpoint of the edge opposite local vertex e.
        let m = [
            nv + mesh.tri_edges[t][0],
            nv + mesh.tri_edges[t][1],
            nv + mesh.tri_edges[t][2],
        ];
        triangles.push([v0, m[2], m[1]]);
        triangles.push([v1, m[0], m[2]]);
        triangles.push([v2, m[1], m[0]]);
        triangles.push([m[0], m[1], m[2]]);
        parent.extend_from_slice(&[t, t, t, t]);
    }
    finalize(vertices, triangles, Some(parent))
}

/// Check every mesh invariant and report all violations found.
pub fn validate(mesh: &Mesh) -> ValidationReport {
    let mut violations = Vec::new();

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_signed_area(t);
        if area <= 0.0 {
            violations.push(MeshViolation::Orientation { tri: t, area });
        }
    }

    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.iter().all(|&v| mesh.boundary_vertex_mask[v]) {
            violations.push(MeshViolation::InteriorVertex { tri: t });
        }
    }

    for (e, slot) in mesh.edge_tris.iter().enumerate() {
        let count = slot.iter().filter(|&&t| t != NO_TRI).count();
        let expected = if mesh.boundary_edge_mask[e] { 1 } else { 2 };
        if count != expected {
            violations.push(MeshViolation::EdgeAdjacency { edge: e, count });
        }
    }

    let mut derived_vertex_mask = vec![false; mesh.n_vertices()];
    for (e, &[a, b]) in mesh.edges.iter().enumerate() {
        if mesh.boundary_edge_mask[e] {
            derived_vertex_mask[a] = true;
            derived_vertex_mask[b] = true;
        }
    }
    if derived_vertex_mask != mesh.boundary_vertex_mask {
        violations.push(MeshViolation::BoundaryMask {
            what: "vertex mask disagrees with boundary edges".into(),
        });
    }

    if mesh.quasi_uniformity_ratio > MAX_QUASI_UNIFORMITY {
        violations.push(MeshViolation::QuasiUniformity {
            ratio: mesh.quasi_uniformity_ratio,
        });
    }

    if let Some(parent) = &mesh.parent {
        if parent.len() != mesh.n_triangles() {
            violations.push(MeshViolation::ParentMap {
                what: format!(
                    "length {} != triangle count {}",
                    parent.len(),
                    mesh.n_triangles()
                ),
            });
        }
    }

    ValidationReport { violations }
}
