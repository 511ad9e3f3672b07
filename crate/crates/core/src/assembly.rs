//! Sparse operators of the discretization: velocity mass and stiffness,
//! the velocity-to-pressure divergence coupling, and the skew-symmetrized
//! convection residual with its Jacobian.
//!
//! All element integrals are evaluated on the reference triangle through
//! the affine map of each element (constant Jacobian), so polynomial
//! integrands are quadrature-exact. Assembly is serial and element-ordered;
//! triplet merging sorts by (row, col) with a stable sort, making the output
//! a pure function of the space.

use crate::elements::{P2_NODES, P3_NODES};
use crate::spaces::{DualVector, TaylorHoodSpace, VelocityVector};

/// Compressed-sparse-row matrix with sorted, unique columns per row.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    /// Set only by constructors of structurally symmetric bilinear forms.
    pub symmetric: bool,
}

impl SparseOperator {
    /// Merge triplets (duplicates accumulate) into CSR with sorted columns.
    /// The stable sort makes duplicate accumulation follow emission order,
    /// so output is a pure function of the triplet sequence.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        symmetric: bool,
    ) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &entries {
            debug_assert!(r < nrows && c < ncols);
            if prev == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_counts[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_counts[r + 1] += row_counts[r];
        }
        SparseOperator {
            nrows,
            ncols,
            row_ptr: row_counts,
            cols,
            vals,
            symmetric,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entry (r, c), zero if not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_add(x, &mut y, 1.0);
        y
    }

    /// y += alpha * A x.
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64], alpha: f64) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] += alpha * acc;
        }
    }

    /// y += alpha * Aᵀ x.
    pub fn transpose_matvec_add(&self, x: &[f64], y: &mut [f64], alpha: f64) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let xr = alpha * x[r];
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[k]] += self.vals[k] * xr;
            }
        }
    }

    /// xᵀ A y.
    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for r in 0..self.nrows {
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.vals[k] * y[self.cols[k]];
            }
            acc += x[r] * row;
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// max |A - Aᵀ| over all entries; requires a square matrix.
    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                worst = worst.max((self.vals[k] - self.get(self.cols[k], r)).abs());
            }
        }
        worst
    }

    /// Stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.entries() {
            m[(r, c)] += v;
        }
        m
    }
}

/// Physical P3 gradients of one element at every quadrature point.
fn physical_gradients(space: &TaylorHoodSpace, t: usize) -> Vec<[[f64; 2]; P3_NODES]> {
    let geo = space.mesh.geometry(t);
    space
        .p3_grads_ref
        .iter()
        .map(|grads| {
            let mut out = [[0.0; 2]; P3_NODES];
            for (o, &g) in out.iter_mut().zip(grads.iter()) {
                *o = geo.grad_to_physical(g);
            }
            out
        })
        .collect()
}

/// Scalar P3 mass block of one element.
pub(crate) fn element_mass_block(space: &TaylorHoodSpace, t: usize) -> [[f64; P3_NODES]; P3_NODES] {
    let det = space.mesh.geometry(t).det;
    let mut block = [[0.0; P3_NODES]; P3_NODES];
    for (q, vals) in space.p3_vals.iter().enumerate() {
        let scale = space.quad.weights[q] * det;
        for a in 0..P3_NODES {
            let va = scale * vals[a];
            for b in 0..P3_NODES {
                block[a][b] += va * vals[b];
            }
        }
    }
    block
}

/// Scalar P3 stiffness block of one element.
fn element_stiffness_block(space: &TaylorHoodSpace, t: usize) -> [[f64; P3_NODES]; P3_NODES] {
    let det = space.mesh.geometry(t).det;
    let grads = physical_gradients(space, t);
    let mut block = [[0.0; P3_NODES]; P3_NODES];
    for (q, g) in grads.iter().enumerate() {
        let scale = space.quad.weights[q] * det;
        for a in 0..P3_NODES {
            for b in 0..P3_NODES {
                block[a][b] += scale * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    block
}

/// Scatter a scalar element block into both vector components over free dofs.
fn scatter_scalar_block(
    space: &TaylorHoodSpace,
    t: usize,
    block: &[[f64; P3_NODES]; P3_NODES],
    triplets: &mut Vec<(usize, usize, f64)>,
) {
    let dofs = &space.vel_scalar_dofs[t];
    for a in 0..P3_NODES {
        let fa = space.free_scalar_index[dofs[a]];
        if fa == usize::MAX {
            continue;
        }
        for b in 0..P3_NODES {
            let fb = space.free_scalar_index[dofs[b]];
            if fb == usize::MAX {
                continue;
            }
            for c in 0..2 {
                triplets.push((2 * fa + c, 2 * fb + c, block[a][b]));
            }
        }
    }
}

/// Velocity mass matrix ⟨u, v⟩ over free dofs.
pub fn assemble_mass(space: &TaylorHoodSpace) -> SparseOperator {
    let mut triplets = Vec::new();
    for t in 0..space.mesh.n_triangles() {
        let block = element_mass_block(space, t);
        scatter_scalar_block(space, t, &block, &mut triplets);
    }
    SparseOperator::from_triplets(space.n_vel_free, space.n_vel_free, triplets, true)
}

/// Velocity stiffness matrix ⟨∇u, ∇v⟩ over free dofs.
pub fn assemble_stiffness(space: &TaylorHoodSpace) -> SparseOperator {
    let mut triplets = Vec::new();
    for t in 0..space.mesh.n_triangles() {
        let block = element_stiffness_block(space, t);
        scatter_scalar_block(space, t, &block, &mut triplets);
    }
    SparseOperator::from_triplets(space.n_vel_free, space.n_vel_free, triplets, true)
}

/// Divergence coupling B with (Bv)_q = ⟨∇·v, ψ_q⟩, shape
/// n_pressure x n_vel_free.
pub fn assemble_divergence(space: &TaylorHoodSpace) -> SparseOperator {
    let mut triplets = Vec::new();
    for t in 0..space.mesh.n_triangles() {
        let det = space.mesh.geometry(t).det;
        let grads = physical_gradients(space, t);
        let vdofs = &space.vel_scalar_dofs[t];
        let pdofs = &space.pressure_dofs[t];
        for (q, g) in grads.iter().enumerate() {
            let scale = space.quad.weights[q] * det;
            for lp in 0..P2_NODES {
                let w = scale * space.p2_vals[q][lp];
                let row = pdofs[lp];
                for ln in 0..P3_NODES {
                    let fb = space.free_scalar_index[vdofs[ln]];
                    if fb == usize::MAX {
                        continue;
                    }
                    for c in 0..2 {
                        triplets.push((row, 2 * fb + c, w * g[ln][c]));
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(space.n_pressure, space.n_vel_free, triplets, false)
}

/// Loads of the constant pressure test function: e_q = ⟨1, ψ_q⟩. Used to
/// border saddle systems with the mean-zero pressure constraint.
pub fn pressure_unit_load(space: &TaylorHoodSpace) -> Vec<f64> {
    let mut e = vec![0.0; space.n_pressure];
    for t in 0..space.mesh.n_triangles() {
        let det = space.mesh.geometry(t).det;
        for (q, vals) in space.p2_vals.iter().enumerate() {
            let scale = space.quad.weights[q] * det;
            for lp in 0..P2_NODES {
                e[space.pressure_dofs[t][lp]] += scale * vals[lp];
            }
        }
    }
    e
}

/// Load vector ⟨g, v⟩ of an analytic field evaluated at quadrature points.
pub fn velocity_load(space: &TaylorHoodSpace, g: impl Fn([f64; 2]) -> [f64; 2]) -> DualVector {
    let mut load = DualVector::zero(space);
    for t in 0..space.mesh.n_triangles() {
        let geo = space.mesh.geometry(t);
        for (q, &[xi, eta]) in space.quad.points.iter().enumerate() {
            let gv = g(geo.to_physical(xi, eta));
            let scale = space.quad.weights[q] * geo.det;
            for ln in 0..P3_NODES {
                let fa = space.free_scalar_index[space.vel_scalar_dofs[t][ln]];
                if fa == usize::MAX {
                    continue;
                }
                let w = scale * space.p3_vals[q][ln];
                load.vals[2 * fa] += w * gv[0];
                load.vals[2 * fa + 1] += w * gv[1];
            }
        }
    }
    load
}

/// Sparsity emission order of the convection Jacobian: per element, test
/// node a, test component c, trial node b, trial component e, restricted to
/// free dofs. [`convection_system`] emits values in exactly this order.
pub fn convection_jacobian_pattern(space: &TaylorHoodSpace) -> Vec<(usize, usize)> {
    let mut pattern = Vec::new();
    for t in 0..space.mesh.n_triangles() {
        let dofs = &space.vel_scalar_dofs[t];
        for a in 0..P3_NODES {
            let fa = space.free_scalar_index[dofs[a]];
            if fa == usize::MAX {
                continue;
            }
            for c in 0..2 {
                for b in 0..P3_NODES {
                    let fb = space.free_scalar_index[dofs[b]];
                    if fb == usize::MAX {
                        continue;
                    }
                    for e in 0..2 {
                        pattern.push((2 * fa + c, 2 * fb + e));
                    }
                }
            }
        }
    }
    pattern
}

/// Skew-symmetrized convection residual N(u) and Jacobian values at u.
///
/// ⟨N(u), v⟩ = ⟨(u·∇)u + ½(∇·u)u, v⟩; the ½(∇·u)u correction makes
/// ⟨N(u), u⟩ vanish identically on zero-trace fields. Jacobian values are
/// aligned with [`convection_jacobian_pattern`].
pub fn convection_system(space: &TaylorHoodSpace, u: &VelocityVector) -> (DualVector, Vec<f64>) {
    let mut residual = DualVector::zero(space);
    let mut jac = Vec::new();
    let nq = space.quad.len();
    // Per-element scratch for the 20x20 block keyed (node, component).
    let mut block = [[0.0f64; 2 * P3_NODES]; 2 * P3_NODES];

    for t in 0..space.mesh.n_triangles() {
        let el = space.element_velocity(u, t);
        let det = space.mesh.geometry(t).det;
        let grads = physical_gradients(space, t);
        for row in block.iter_mut() {
            row.fill(0.0);
        }
        for q in 0..nq {
            let vals = &space.p3_vals[q];
            let g = &grads[q];
            // Velocity value and gradient at the quadrature point:
            // grad_u[c][d] = d u_c / d x_d.
            let mut uv = [0.0; 2];
            let mut grad_u = [[0.0; 2]; 2];
            for ln in 0..P3_NODES {
                for c in 0..2 {
                    uv[c] += el[ln][c] * vals[ln];
                    grad_u[c][0] += el[ln][c] * g[ln][0];
                    grad_u[c][1] += el[ln][c] * g[ln][1];
                }
            }
            let div_u = grad_u[0][0] + grad_u[1][1];
            let scale = space.quad.weights[q] * det;

            // Residual: ((u·∇)u + ½ div(u) u) · v.
            let conv = [
                uv[0] * grad_u[0][0] + uv[1] * grad_u[0][1] + 0.5 * div_u * uv[0],
                uv[0] * grad_u[1][0] + uv[1] * grad_u[1][1] + 0.5 * div_u * uv[1],
            ];
            let dofs = &space.vel_scalar_dofs[t];
            for ln in 0..P3_NODES {
                let fa = space.free_scalar_index[dofs[ln]];
                if fa == usize::MAX {
                    continue;
                }
                let w = scale * vals[ln];
                residual.vals[2 * fa] += w * conv[0];
                residual.vals[2 * fa + 1] += w * conv[1];
            }

            // Jacobian direction w = φ_b e_e:
            //   (u·∇)w|_c   = δ_ce (u·∇φ_b)
            //   (w·∇)u|_c   = φ_b ∂u_c/∂x_e
            //   ½(∇·u)w|_c  = ½ δ_ce div(u) φ_b
            //   ½(∇·w)u|_c  = ½ ∂φ_b/∂x_e u_c
            for b in 0..P3_NODES {
                let u_dot_grad = uv[0] * g[b][0] + uv[1] * g[b][1];
                let phi_b = vals[b];
                for e in 0..2 {
                    let mut col = [0.0; 2];
                    for c in 0..2 {
                        let mut val = phi_b * grad_u[c][e] + 0.5 * g[b][e] * uv[c];
                        if c == e {
                            val += u_dot_grad + 0.5 * div_u * phi_b;
                        }
                        col[c] = val;
                    }
                    for a in 0..P3_NODES {
                        let w = scale * vals[a];
                        block[2 * a][2 * b + e] += w * col[0];
                        block[2 * a + 1][2 * b + e] += w * col[1];
                    }
                }
            }
        }
        // Emit in pattern order.
        let dofs = &space.vel_scalar_dofs[t];
        for a in 0..P3_NODES {
            if space.free_scalar_index[dofs[a]] == usize::MAX {
                continue;
            }
            for c in 0..2 {
                for b in 0..P3_NODES {
                    if space.free_scalar_index[dofs[b]] == usize::MAX {
                        continue;
                    }
                    for e in 0..2 {
                        jac.push(block[2 * a + c][2 * b + e]);
                    }
                }
            }
        }
    }
    (residual, jac)
}

/// Convection residual N(u) with ⟨N(u), v⟩ = ⟨(u·∇)u + ½(∇·u)u, v⟩.
///
/// Leaner than [`convection_system`]: no Jacobian block, so line-search
/// trials pay only for the residual.
pub fn convection_residual(space: &TaylorHoodSpace, u: &VelocityVector) -> DualVector {
    convection_residual_with_half(space, u, 0.5)
}

/// Test hook: the stabilization term with its sign flipped, which breaks
/// the ⟨N(u), u⟩ = 0 identity. Exists so integrity checks can prove they
/// detect a sign error; never call from solver code.
#[doc(hidden)]
pub fn convection_residual_sign_error(space: &TaylorHoodSpace, u: &VelocityVector) -> DualVector {
    convection_residual_with_half(space, u, -0.5)
}

fn convection_residual_with_half(
    space: &TaylorHoodSpace,
    u: &VelocityVector,
    half: f64,
) -> DualVector {
    let mut residual = DualVector::zero(space);
    let nq = space.quad.len();
    for t in 0..space.mesh.n_triangles() {
        let el = space.element_velocity(u, t);
        let det = space.mesh.geometry(t).det;
        let grads = physical_gradients(space, t);
        let dofs = &space.vel_scalar_dofs[t];
        for q in 0..nq {
            let vals = &space.p3_vals[q];
            let g = &grads[q];
            let mut uv = [0.0; 2];
            let mut grad_u = [[0.0; 2]; 2];
            for ln in 0..P3_NODES {
                for c in 0..2 {
                    uv[c] += el[ln][c] * vals[ln];
                    grad_u[c][0] += el[ln][c] * g[ln][0];
                    grad_u[c][1] += el[ln][c] * g[ln][1];
                }
            }
            let div_u = grad_u[0][0] + grad_u[1][1];
            let scale = space.quad.weights[q] * det;
            let conv = [
                uv[0] * grad_u[0][0] + uv[1] * grad_u[0][1] + half * div_u * uv[0],
                uv[0] * grad_u[1][0] + uv[1] * grad_u[1][1] + half * div_u * uv[1],
            ];
            for ln in 0..P3_NODES {
                let fa = space.free_scalar_index[dofs[ln]];
                if fa == usize::MAX {
                    continue;
                }
                let w = scale * vals[ln];
                residual.vals[2 * fa] += w * conv[0];
                residual.vals[2 * fa + 1] += w * conv[1];
            }
        }
    }
    residual
}

/// Directional derivative of N at u as a sparse operator.
pub fn convection_jacobian(space: &TaylorHoodSpace, u: &VelocityVector) -> SparseOperator {
    let pattern = convection_jacobian_pattern(space);
    let (_, vals) = convection_system(space, u);
    SparseOperator::from_triplets(
        space.n_vel_free,
        space.n_vel_free,
        pattern.into_iter().zip(vals).map(|((r, c), v)| (r, c, v)),
        false,
    )
}
