//! P3/P2 Taylor-Hood spaces: vector-valued cubic velocity with homogeneous
//! Dirichlet data, scalar quadratic pressure.
//!
//! Velocity coefficient vectors live on free (non-boundary) degrees of
//! freedom only; Dirichlet dofs are eliminated rather than penalized, which
//! keeps assembled operators symmetric. Scalar P3 dofs are numbered
//! vertices, then two per canonical edge (1/3 point nearest the smaller
//! vertex id first), then one per triangle; vector dofs interleave the two
//! components of one scalar node. Pressure P2 dofs are vertices then edge
//! midpoints.

use crate::elements::{p2_eval, p3_eval, EDGE_VERTICES, P2_NODES, P3_NODES};
use crate::mesh::{validate, Mesh};
use crate::quad::QuadratureRule;
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Quadrature exactness for all assembled forms. The convection integrand
/// for P3 velocities has degree 8; degree 10 leaves margin so the discrete
/// skew-symmetry identity holds to rounding rather than quadrature error.
pub const DEFAULT_QUAD_DEGREE: usize = 10;

/// Identifies the space a coefficient vector belongs to; derived from the
/// mesh content hash, so equal ids imply interchangeable vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceId(pub u64);

#[derive(Debug, thiserror::Error)]
pub enum SpaceError {
    #[error("mesh is inadmissible: {0}")]
    InvalidMesh(String),
    #[error("point ({0}, {1}) lies outside the triangulated domain")]
    PointOutsideDomain(f64, f64),
}

/// Velocity coefficients over free vector dofs: entry `2k + c` is component
/// `c` at free scalar node `k`. Boundary nodes are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityVector {
    pub coeffs: Vec<f64>,
    pub space_id: SpaceId,
}

/// Pressure coefficients over all P2 dofs (pressure carries no essential
/// boundary condition).
#[derive(Debug, Clone, PartialEq)]
pub struct PressureVector {
    pub coeffs: Vec<f64>,
    pub space_id: SpaceId,
}

/// Linear functional on the velocity space, stored by its values on free
/// vector dofs; pairs with a [`VelocityVector`] by the Euclidean dot.
#[derive(Debug, Clone)]
pub struct DualVector {
    pub vals: Vec<f64>,
    pub space_id: SpaceId,
}

impl VelocityVector {
    pub fn zero(space: &TaylorHoodSpace) -> Self {
        VelocityVector {
            coeffs: vec![0.0; space.n_vel_free],
            space_id: space.id(),
        }
    }
}

impl PressureVector {
    pub fn zero(space: &TaylorHoodSpace) -> Self {
        PressureVector {
            coeffs: vec![0.0; space.n_pressure],
            space_id: space.id(),
        }
    }
}

impl DualVector {
    pub fn zero(space: &TaylorHoodSpace) -> Self {
        DualVector {
            vals: vec![0.0; space.n_vel_free],
            space_id: space.id(),
        }
    }

    /// Duality pairing with a velocity vector.
    pub fn pair(&self, v: &VelocityVector) -> f64 {
        debug_assert_eq!(self.space_id, v.space_id);
        self.vals.iter().zip(&v.coeffs).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug)]
pub struct TaylorHoodSpace {
    pub mesh: Arc<Mesh>,
    pub quad: QuadratureRule,
    /// P3 values per quadrature point.
    pub p3_vals: Vec<[f64; P3_NODES]>,
    /// P3 reference gradients per quadrature point.
    pub p3_grads_ref: Vec<[[f64; 2]; P3_NODES]>,
    /// P2 values per quadrature point.
    pub p2_vals: Vec<[f64; P2_NODES]>,
    /// Global scalar P3 dof per (triangle, local node).
    pub vel_scalar_dofs: Vec<[usize; P3_NODES]>,
    /// Global P2 dof per (triangle, local node).
    pub pressure_dofs: Vec<[usize; P2_NODES]>,
    /// Per scalar P3 dof: nodal point on the boundary.
    pub dirichlet_scalar_mask: Vec<bool>,
    /// Scalar dof -> free scalar index, or `usize::MAX` if constrained.
    pub free_scalar_index: Vec<usize>,
    /// Free scalar index -> scalar dof.
    pub free_scalar_dofs: Vec<usize>,
    /// Nodal coordinates per scalar P3 dof.
    pub scalar_node_coords: Vec<[f64; 2]>,
    pub n_scalar: usize,
    pub n_vel_total: usize,
    pub n_vel_free: usize,
    pub n_pressure: usize,
    id: SpaceId,
}

/// Build the Taylor-Hood space over a validated mesh.
pub fn build_space(mesh: &Mesh) -> Result<TaylorHoodSpace, SpaceError> {
    let report = validate(mesh);
    if let Some(v) = report.violations.first() {
        return Err(SpaceError::InvalidMesh(v.to_string()));
    }
    let mesh = Arc::new(mesh.clone());
    let (nv, ne, nt) = (mesh.n_vertices(), mesh.n_edges(), mesh.n_triangles());
    let n_scalar = nv + 2 * ne + nt;
    let n_pressure = nv + ne;

    // Scalar P3 numbering: vertex v -> v; edge e -> nv + 2e (+1); interior
    // of triangle t -> nv + 2*ne + t. Edge dof `nv + 2e` sits at the 1/3
    // point nearest the smaller vertex id of the canonical edge.
    let mut vel_scalar_dofs = Vec::with_capacity(nt);
    let mut pressure_dofs = Vec::with_capacity(nt);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let mut p3 = [0usize; P3_NODES];
        let mut p2 = [0usize; P2_NODES];
        for local in 0..3 {
            p3[local] = tri[local];
            p2[local] = tri[local];
        }
        for (le, [a, b]) in EDGE_VERTICES.iter().enumerate() {
            let (ga, gb) = (tri[*a], tri[*b]);
            let edge = mesh.tri_edges[t][le];
            // Local node 3+2le is the 1/3 point from local vertex a; it maps
            // to the canonical first slot iff a carries the smaller id.
            let (near_a, near_b) = if ga < gb {
                (nv + 2 * edge, nv + 2 * edge + 1)
            } else {
                (nv + 2 * edge + 1, nv + 2 * edge)
            };
            p3[3 + 2 * le] = near_a;
            p3[3 + 2 * le + 1] = near_b;
            p2[3 + le] = nv + edge;
        }
        p3[9] = nv + 2 * ne + t;
        vel_scalar_dofs.push(p3);
        pressure_dofs.push(p2);
    }

    let mut dirichlet_scalar_mask = vec![false; n_scalar];
    for (v, &on_boundary) in mesh.boundary_vertex_mask.iter().enumerate() {
        dirichlet_scalar_mask[v] = on_boundary;
    }
    for (e, &on_boundary) in mesh.boundary_edge_mask.iter().enumerate() {
        if on_boundary {
            dirichlet_scalar_mask[nv + 2 * e] = true;
            dirichlet_scalar_mask[nv + 2 * e + 1] = true;
        }
    }

    let mut free_scalar_index = vec![usize::MAX; n_scalar];
    let mut free_scalar_dofs = Vec::new();
    for dof in 0..n_scalar {
        if !dirichlet_scalar_mask[dof] {
            free_scalar_index[dof] = free_scalar_dofs.len();
            free_scalar_dofs.push(dof);
        }
    }

    let mut scalar_node_coords = vec![[0.0; 2]; n_scalar];
    for (v, &p) in mesh.vertices.iter().enumerate() {
        scalar_node_coords[v] = p;
    }
    for (e, &[a, b]) in mesh.edges.iter().enumerate() {
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        scalar_node_coords[nv + 2 * e] =
            [pa[0] + (pb[0] - pa[0]) / 3.0, pa[1] + (pb[1] - pa[1]) / 3.0];
        scalar_node_coords[nv + 2 * e + 1] = [
            pa[0] + 2.0 * (pb[0] - pa[0]) / 3.0,
            pa[1] + 2.0 * (pb[1] - pa[1]) / 3.0,
        ];
    }
    for t in 0..nt {
        let [p0, p1, p2] = mesh.tri_coords(t);
        scalar_node_coords[nv + 2 * ne + t] =
            [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0];
    }

    let quad = QuadratureRule::for_degree(DEFAULT_QUAD_DEGREE);
    let mut p3_vals = Vec::with_capacity(quad.len());
    let mut p3_grads_ref = Vec::with_capacity(quad.len());
    let mut p2_vals = Vec::with_capacity(quad.len());
    for &[x, y] in &quad.points {
        let (v3, g3) = p3_eval(x, y);
        let (v2, _) = p2_eval(x, y);
        p3_vals.push(v3);
        p3_grads_ref.push(g3);
        p2_vals.push(v2);
    }

    let n_vel_free = 2 * free_scalar_dofs.len();
    let id = {
        let mut hasher = Sha256::new();
        hasher.update(mesh.content_hash());
        hasher.update(n_scalar.to_le_bytes());
        hasher.update(quad.degree.to_le_bytes());
        let digest = hasher.finalize();
        SpaceId(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    };

    debug_assert_eq!(n_scalar, nv + 2 * ne + nt);
    Ok(TaylorHoodSpace {
        mesh,
        quad,
        p3_vals,
        p3_grads_ref,
        p2_vals,
        vel_scalar_dofs,
        pressure_dofs,
        dirichlet_scalar_mask,
        free_scalar_index,
        free_scalar_dofs,
        scalar_node_coords,
        n_scalar,
        n_vel_total: 2 * n_scalar,
        n_vel_free,
        n_pressure,
        id,
    })
}

impl TaylorHoodSpace {
    pub fn id(&self) -> SpaceId {
        self.id
    }

    /// Nodal velocity coefficients of one element, node-major; constrained
    /// nodes contribute zero.
    pub fn element_velocity(&self, v: &VelocityVector, t: usize) -> [[f64; 2]; P3_NODES] {
        debug_assert_eq!(v.space_id, self.id);
        let mut out = [[0.0; 2]; P3_NODES];
        for (ln, &dof) in self.vel_scalar_dofs[t].iter().enumerate() {
            let k = self.free_scalar_index[dof];
            if k != usize::MAX {
                out[ln] = [v.coeffs[2 * k], v.coeffs[2 * k + 1]];
            }
        }
        out
    }

    /// Velocity value inside triangle `t` at reference coordinates.
    pub fn eval_in_triangle(&self, v: &VelocityVector, t: usize, xi: f64, eta: f64) -> [f64; 2] {
        let el = self.element_velocity(v, t);
        let (vals, _) = p3_eval(xi, eta);
        let mut out = [0.0; 2];
        for ln in 0..P3_NODES {
            out[0] += el[ln][0] * vals[ln];
            out[1] += el[ln][1] * vals[ln];
        }
        out
    }

    /// Locate the triangle containing `p` (brute-force scan with a small
    /// barycentric tolerance); returns `(triangle, xi, eta)`.
    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, f64, f64), SpaceError> {
        const TOL: f64 = 1e-12;
        for t in 0..self.mesh.n_triangles() {
            let l = self.mesh.geometry(t).barycentric(p);
            if l.iter().all(|&c| c >= -TOL) {
                return Ok((t, l[1], l[2]));
            }
        }
        Err(SpaceError::PointOutsideDomain(p[0], p[1]))
    }
}

/// Nodal interpolant of a smooth field onto the free velocity dofs.
/// Boundary nodes stay zero, so the interpolant reproduces `g` exactly on
/// elements whose nodes are all interior whenever `g` is componentwise
/// polynomial of degree at most 3.
pub fn interpolate_velocity(
    space: &TaylorHoodSpace,
    g: impl Fn([f64; 2]) -> [f64; 2],
) -> VelocityVector {
    let mut v = VelocityVector::zero(space);
    for (k, &dof) in space.free_scalar_dofs.iter().enumerate() {
        let val = g(space.scalar_node_coords[dof]);
        v.coeffs[2 * k] = val[0];
        v.coeffs[2 * k + 1] = val[1];
    }
    v
}

/// Point value of the velocity field (boundary dofs are zero by
/// representation).
pub fn eval_velocity(
    space: &TaylorHoodSpace,
    v: &VelocityVector,
    p: [f64; 2],
) -> Result<[f64; 2], SpaceError> {
    let (t, xi, eta) = space.locate(p)?;
    Ok(space.eval_in_triangle(v, t, xi, eta))
}

/// L² norm by element quadrature (exact: integrand is degree 6).
pub fn l2_norm(space: &TaylorHoodSpace, v: &VelocityVector) -> f64 {
    let mut total = 0.0;
    for t in 0..space.mesh.n_triangles() {
        let el = space.element_velocity(v, t);
        let det = space.mesh.geometry(t).det;
        for (q, w) in space.quad.weights.iter().enumerate() {
            let mut val = [0.0; 2];
            for ln in 0..P3_NODES {
                val[0] += el[ln][0] * space.p3_vals[q][ln];
                val[1] += el[ln][1] * space.p3_vals[q][ln];
            }
            total += w * det * (val[0] * val[0] + val[1] * val[1]);
        }
    }
    total.sqrt()
}

/// H¹ seminorm (L² norm of the full velocity gradient) by quadrature.
pub fn h1_seminorm(space: &TaylorHoodSpace, v: &VelocityVector) -> f64 {
    let mut total = 0.0;
    for t in 0..space.mesh.n_triangles() {
        let el = space.element_velocity(v, t);
        let geo = space.mesh.geometry(t);
        for (q, w) in space.quad.weights.iter().enumerate() {
            let mut grad = [[0.0; 2]; 2]; // grad[c][d] = d u_c / d x_d
            for ln in 0..P3_NODES {
                let g = geo.grad_to_physical(space.p3_grads_ref[q][ln]);
                for c in 0..2 {
                    grad[c][0] += el[ln][c] * g[0];
                    grad[c][1] += el[ln][c] * g[1];
                }
            }
            let frob = grad[0][0] * grad[0][0]
                + grad[0][1] * grad[0][1]
                + grad[1][0] * grad[1][0]
                + grad[1][1] * grad[1][1];
            total += w * geo.det * frob;
        }
    }
    total.sqrt()
}

/// Max of |v| sampled at all nodal points and quadrature points.
pub fn linf_norm_sampled(space: &TaylorHoodSpace, v: &VelocityVector) -> f64 {
    debug_assert_eq!(v.space_id, space.id);
    let mut best: f64 = 0.0;
    for k in 0..space.free_scalar_dofs.len() {
        let (x, y) = (v.coeffs[2 * k], v.coeffs[2 * k + 1]);
        best = best.max((x * x + y * y).sqrt());
    }
    for t in 0..space.mesh.n_triangles() {
        let el = space.element_velocity(v, t);
        for q in 0..space.quad.len() {
            let mut val = [0.0; 2];
            for ln in 0..P3_NODES {
                val[0] += el[ln][0] * space.p3_vals[q][ln];
                val[1] += el[ln][1] * space.p3_vals[q][ln];
            }
            best = best.max((val[0] * val[0] + val[1] * val[1]).sqrt());
        }
    }
    best
}

/// Mean of a pressure field over the domain.
pub fn pressure_mean(space: &TaylorHoodSpace, p: &PressureVector) -> f64 {
    debug_assert_eq!(p.space_id, space.id);
    let mut integral = 0.0;
    let mut area = 0.0;
    for t in 0..space.mesh.n_triangles() {
        let det = space.mesh.geometry(t).det;
        for (q, w) in space.quad.weights.iter().enumerate() {
            let mut val = 0.0;
            for ln in 0..P2_NODES {
                val += p.coeffs[space.pressure_dofs[t][ln]] * space.p2_vals[q][ln];
            }
            integral += w * det * val;
            area += w * det;
        }
    }
    integral / area
}

/// L² norm of a pressure field.
pub fn pressure_l2_norm(space: &TaylorHoodSpace, p: &PressureVector) -> f64 {
    debug_assert_eq!(p.space_id, space.id);
    let mut total = 0.0;
    for t in 0..space.mesh.n_triangles() {
        let det = space.mesh.geometry(t).det;
        for (q, w) in space.quad.weights.iter().enumerate() {
            let mut val = 0.0;
            for ln in 0..P2_NODES {
                val += p.coeffs[space.pressure_dofs[t][ln]] * space.p2_vals[q][ln];
            }
            total += w * det * val * val;
        }
    }
    total.sqrt()
}

/// L² distance between a velocity field and a smooth reference field,
/// integrated with a rule exact past the polynomial degree of the FE part.
pub fn l2_error_against(
    space: &TaylorHoodSpace,
    v: &VelocityVector,
    exact: impl Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    let rule = QuadratureRule::for_degree(12);
    let mut total = 0.0;
    for t in 0..space.mesh.n_triangles() {
        let el = space.element_velocity(v, t);
        let geo = space.mesh.geometry(t);
        for (q, &[x, y]) in rule.points.iter().enumerate() {
            let (vals, _) = p3_eval(x, y);
            let mut fe = [0.0; 2];
            for ln in 0..P3_NODES {
                fe[0] += el[ln][0] * vals[ln];
                fe[1] += el[ln][1] * vals[ln];
            }
            let p = geo.to_physical(x, y);
            let ex = exact(p);
            let dx = fe[0] - ex[0];
            let dy = fe[1] - ex[1];
            total += rule.weights[q] * geo.det * (dx * dx + dy * dy);
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_polygon_disk_mesh, build_unit_square_mesh, refine_uniform};
    use crate::noise::counter_uniform;

    fn random_velocity(space: &TaylorHoodSpace, seed: u64) -> VelocityVector {
        let mut v = VelocityVector::zero(space);
        for (i, c) in v.coeffs.iter_mut().enumerate() {
            *c = 2.0 * counter_uniform(seed, i as u64, 0) - 1.0;
        }
        v
    }

    #[test]
    fn dof_counts_on_cross_split_square() {
        let space = build_space(&build_unit_square_mesh(1)).unwrap();
        assert_eq!(space.n_scalar, 25);
        assert_eq!(space.n_vel_total, 50);
        assert_eq!(space.n_vel_free, 26);
        assert_eq!(space.n_pressure, 13);
    }

    #[test]
    fn pressure_count_formula() {
        for mesh in [
            build_unit_square_mesh(3),
            build_polygon_disk_mesh(16).unwrap(),
        ] {
            let space = build_space(&mesh).unwrap();
            assert_eq!(space.n_pressure, mesh.n_vertices() + mesh.n_edges());
            assert_eq!(
                space.n_scalar,
                mesh.n_vertices() + 2 * mesh.n_edges() + mesh.n_triangles()
            );
        }
    }

    #[test]
    fn refinement_increases_free_dofs() {
        let mesh = build_unit_square_mesh(2);
        let fine = refine_uniform(&mesh);
        let coarse_space = build_space(&mesh).unwrap();
        let fine_space = build_space(&fine).unwrap();
        assert!(fine_space.n_vel_free > coarse_space.n_vel_free);
    }

    #[test]
    fn build_rejects_invalid_mesh() {
        let mut m = build_unit_square_mesh(1);
        m.triangles[0].swap(0, 1);
        assert!(matches!(build_space(&m), Err(SpaceError::InvalidMesh(_))));
    }

    #[test]
    fn dof_maps_deterministic() {
        let mesh = build_polygon_disk_mesh(8).unwrap();
        let a = build_space(&mesh).unwrap();
        let b = build_space(&mesh).unwrap();
        assert_eq!(a.vel_scalar_dofs, b.vel_scalar_dofs);
        assert_eq!(a.pressure_dofs, b.pressure_dofs);
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn dof_maps_injective_per_element() {
        let space = build_space(&build_unit_square_mesh(2)).unwrap();
        for t in 0..space.mesh.n_triangles() {
            let mut dofs = space.vel_scalar_dofs[t].to_vec();
            dofs.sort_unstable();
            dofs.dedup();
            assert_eq!(dofs.len(), P3_NODES);
        }
    }

    #[test]
    fn interpolate_zero_gives_zero() {
        let space = build_space(&build_unit_square_mesh(2)).unwrap();
        let v = interpolate_velocity(&space, |_| [0.0, 0.0]);
        assert!(v.coeffs.iter().all(|&c| c == 0.0));
        assert_eq!(l2_norm(&space, &v), 0.0);
    }

    #[test]
    fn cubic_reproduced_on_fully_interior_elements() {
        // No nonzero cubic vanishes on the entire square boundary, so exact
        // global reproduction is impossible with eliminated boundary dofs;
        // on elements whose ten nodes are all free the interpolant matches
        // any cubic exactly.
        let space = build_space(&build_unit_square_mesh(3)).unwrap();
        let g = |p: [f64; 2]| {
            let (x, y) = (p[0], p[1]);
            [
                0.4 + x - 2.0 * y + x * x * y - 0.3 * y * y * y,
                -0.7 + 2.5 * x * y + x * x * x - 1.2 * x * y * y,
            ]
        };
        let v = interpolate_velocity(&space, g);
        let mut checked = 0;
        for t in 0..space.mesh.n_triangles() {
            let interior = space.vel_scalar_dofs[t]
                .iter()
                .all(|&d| !space.dirichlet_scalar_mask[d]);
            if !interior {
                continue;
            }
            checked += 1;
            let geo = space.mesh.geometry(t);
            for &(xi, eta) in &[(0.21, 0.33), (0.05, 0.6), (0.4, 0.4)] {
                let got = space.eval_in_triangle(&v, t, xi, eta);
                let want = g(geo.to_physical(xi, eta));
                assert!((got[0] - want[0]).abs() < 1e-12);
                assert!((got[1] - want[1]).abs() < 1e-12);
            }
        }
        assert!(checked >= 4, "mesh has {checked} fully interior elements");
    }

    #[test]
    fn eval_zero_everywhere_for_zero_vector() {
        let space = build_space(&build_polygon_disk_mesh(8).unwrap()).unwrap();
        let v = VelocityVector::zero(&space);
        let val = eval_velocity(&space, &v, [0.1, 0.2]).unwrap();
        assert_eq!(val, [0.0, 0.0]);
    }

    #[test]
    fn eval_outside_domain_errors() {
        let space = build_space(&build_unit_square_mesh(1)).unwrap();
        let v = VelocityVector::zero(&space);
        assert!(matches!(
            eval_velocity(&space, &v, [1.5, 0.5]),
            Err(SpaceError::PointOutsideDomain(..))
        ));
    }

    #[test]
    fn eval_agrees_across_shared_edges() {
        let space = build_space(&build_unit_square_mesh(2)).unwrap();
        let v = random_velocity(&space, 7);
        let mesh = &space.mesh;
        let mut tested = 0;
        for e in 0..mesh.n_edges() {
            if mesh.boundary_edge_mask[e] {
                continue;
            }
            let [t0, t1] = mesh.edge_tris[e];
            let [a, b] = mesh.edges[e];
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            for s in [0.23, 0.61, 0.88] {
                let p = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let mut vals = Vec::new();
                for t in [t0, t1] {
                    let l = mesh.geometry(t).barycentric(p);
                    vals.push(space.eval_in_triangle(&v, t, l[1], l[2]));
                }
                assert!((vals[0][0] - vals[1][0]).abs() < 1e-12);
                assert!((vals[0][1] - vals[1][1]).abs() < 1e-12);
                tested += 1;
            }
        }
        assert!(tested > 0);
    }

    #[test]
    fn norms_of_zero_field_vanish() {
        let space = build_space(&build_unit_square_mesh(1)).unwrap();
        let v = VelocityVector::zero(&space);
        assert_eq!(l2_norm(&space, &v), 0.0);
        assert_eq!(h1_seminorm(&space, &v), 0.0);
        assert_eq!(linf_norm_sampled(&space, &v), 0.0);
    }

    #[test]
    fn seminorm_matches_higher_degree_rule() {
        // Both rules are exact for the degree-4 gradient integrand, so the
        // default-degree path must agree with an independent degree-14 rule
        // to rounding.
        let space = build_space(&build_unit_square_mesh(2)).unwrap();
        let v = random_velocity(&space, 3);
        let coarse = h1_seminorm(&space, &v);

        let rule = QuadratureRule::for_degree(14);
        let mut total = 0.0;
        for t in 0..space.mesh.n_triangles() {
            let el = space.element_velocity(&v, t);
            let geo = space.mesh.geometry(t);
            for (q, &[x, y]) in rule.points.iter().enumerate() {
                let (_, grads) = crate::elements::p3_eval(x, y);
                let mut grad = [[0.0; 2]; 2];
                for ln in 0..P3_NODES {
                    let g = geo.grad_to_physical(grads[ln]);
                    for c in 0..2 {
                        grad[c][0] += el[ln][c] * g[0];
                        grad[c][1] += el[ln][c] * g[1];
                    }
                }
                let frob: f64 = grad.iter().flatten().map(|g| g * g).sum();
                total += rule.weights[q] * geo.det * frob;
            }
        }
        assert!((coarse - total.sqrt()).abs() < 1e-12 * (1.0 + coarse));
    }

    #[test]
    fn sin_field_interpolation_converges_at_fourth_order() {
        // Smooth, zero on the square boundary, not polynomial.
        let pi = std::f64::consts::PI;
        let g = move |p: [f64; 2]| {
            let (x, y) = (p[0], p[1]);
            [
                (pi * x).sin() * (pi * y).sin(),
                (2.0 * pi * x).sin() * (pi * y).sin() * 0.5,
            ]
        };
        let mut errors = Vec::new();
        let mut mesh = build_unit_square_mesh(2);
        for _ in 0..3 {
            let space = build_space(&mesh).unwrap();
            let v = interpolate_velocity(&space, g);
            errors.push(l2_error_against(&space, &v, g));
            mesh = refine_uniform(&mesh);
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 3.7, "observed order {order}, errors {errors:?}");
        }
    }

    #[test]
    fn norm_homogeneity() {
        let space = build_space(&build_polygon_disk_mesh(8).unwrap()).unwrap();
        let v = random_velocity(&space, 11);
        let alpha = -2.75;
        let mut scaled = v.clone();
        for c in &mut scaled.coeffs {
            *c *= alpha;
        }
        assert!((l2_norm(&space, &scaled) - alpha.abs() * l2_norm(&space, &v)).abs() < 1e-12);
        assert!(
            (h1_seminorm(&space, &scaled) - alpha.abs() * h1_seminorm(&space, &v)).abs() < 1e-11
        );
    }

    #[test]
    fn boundary_mask_matches_node_positions_on_disk() {
        let space = build_space(&build_polygon_disk_mesh(8).unwrap()).unwrap();
        // Boundary of the octagon: all masked nodes must sit on the polygon
        // edges at radius cos(pi/8) or beyond.
        let r_edge_min = (std::f64::consts::PI / 8.0).cos() - 1e-12;
        for (dof, &masked) in space.dirichlet_scalar_mask.iter().enumerate() {
            let p = space.scalar_node_coords[dof];
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if masked {
                assert!(r >= r_edge_min, "masked node at radius {r}");
            }
        }
    }
}
