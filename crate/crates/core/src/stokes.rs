//! Discrete divergence-free projection, Stokes operator action, steady
//! Stokes solves, and small dense verification oracles.
//!
//! Every constrained solve shares one bordered saddle layout over the
//! unknowns (u, q, λ):
//!
//! ```text
//!   [ V   Bᵀ  0 ] [u]   [g]
//!   [ B   0   e ] [q] = [r]
//!   [ 0   eᵀ  0 ] [λ]   [0]
//! ```
//!
//! with e_q = ∫ψ_q. The border row pins the constant pressure mode, so q
//! is exactly mean-zero and the factorization never sees a singular block.
//! Only the velocity block V changes between uses: M for projections, K
//! for steady Stokes, M + τK + τJ(u) inside the time stepper.

use crate::assembly::{
    assemble_divergence, assemble_mass, assemble_stiffness, pressure_unit_load, velocity_load,
    SparseOperator,
};
use crate::spaces::{DualVector, PressureVector, TaylorHoodSpace, VelocityVector};
use crate::sparse::{PatternSolver, SparseError};
use thiserror::Error;

/// Relative residual bound enforced on every saddle solve.
pub const SADDLE_RESIDUAL_TOL: f64 = 1e-10;

/// Acceptable ‖Bu‖ (relative) for fields claiming to be divergence-free.
pub const DIV_FREE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StokesError {
    #[error(transparent)]
    Solver(#[from] SparseError),
    #[error("saddle solve residual {residual:.3e} exceeds {tol:.1e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("field is not discretely divergence-free: |Bu| = {0:.3e}")]
    NotDivergenceFree(f64),
    #[error("dense oracle limited to {limit} velocity dofs, space has {n_vel_free}")]
    OracleTooLarge { n_vel_free: usize, limit: usize },
    #[error("divergence kernel is degenerate: {0}")]
    DegenerateKernel(String),
}

fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Factorization of the bordered saddle system with a caller-owned
/// velocity block. The coupling blocks B, Bᵀ, e are assembled once; only
/// the velocity-block values are refreshed between factorizations.
///
/// Immutable after [`factor`](Self::factor); concurrent [`solve`](Self::solve)
/// calls with distinct right-hand sides are safe.
pub struct SaddleSolver {
    pub n_vel: usize,
    pub n_pressure: usize,
    solver: PatternSolver,
    vel_emission_len: usize,
    fixed_values: Vec<f64>,
    assembled: Vec<f64>,
    /// Divergence coupling B (n_pressure × n_vel), for residual checks.
    pub divergence: SparseOperator,
    /// Border column e_q = ∫ψ_q.
    pub pressure_unit: Vec<f64>,
}

impl SaddleSolver {
    /// Symbolic setup over `vel_pattern`, the duplicate-bearing emission
    /// order in which [`factor`](Self::factor) expects velocity values.
    pub fn new(
        space: &TaylorHoodSpace,
        vel_pattern: &[(usize, usize)],
    ) -> Result<Self, StokesError> {
        let divergence = assemble_divergence(space);
        let pressure_unit = pressure_unit_load(space);
        let nv = space.n_vel_free;
        let np = space.n_pressure;
        let n = nv + np + 1;

        let mut emission = Vec::with_capacity(vel_pattern.len() + 2 * divergence.nnz() + 2 * np);
        emission.extend_from_slice(vel_pattern);
        let mut fixed = Vec::with_capacity(2 * divergence.nnz() + 2 * np);
        for (q, v, val) in divergence.entries() {
            emission.push((v, nv + q));
            fixed.push(val);
        }
        for (q, v, val) in divergence.entries() {
            emission.push((nv + q, v));
            fixed.push(val);
        }
        for (q, &eq) in pressure_unit.iter().enumerate() {
            emission.push((nv + q, n - 1));
            fixed.push(eq);
            emission.push((n - 1, nv + q));
            fixed.push(eq);
        }

        let solver = PatternSolver::new(n, &emission)?;
        Ok(Self {
            n_vel: nv,
            n_pressure: np,
            vel_emission_len: vel_pattern.len(),
            fixed_values: fixed,
            assembled: vec![0.0; emission.len()],
            solver,
            divergence,
            pressure_unit,
        })
    }

    /// Numeric factorization with fresh velocity-block values in the
    /// emission order fixed at construction.
    pub fn factor(&mut self, vel_values: &[f64]) -> Result<(), StokesError> {
        assert_eq!(
            vel_values.len(),
            self.vel_emission_len,
            "velocity emission mismatch"
        );
        self.assembled[..self.vel_emission_len].copy_from_slice(vel_values);
        self.assembled[self.vel_emission_len..].copy_from_slice(&self.fixed_values);
        self.solver.factor(&self.assembled)?;
        Ok(())
    }

    /// Solve for (u, q, λ) given velocity and constraint right-hand sides.
    /// One refinement pass; errors if the relative residual stays above
    /// [`SADDLE_RESIDUAL_TOL`].
    pub fn solve(
        &self,
        vel_rhs: &[f64],
        pressure_rhs: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, f64), StokesError> {
        self.solve_with_border(vel_rhs, pressure_rhs, 0.0)
    }

    /// As [`solve`](Self::solve) with an explicit border right-hand side
    /// (needed when the mean-zero constraint row carries a residual).
    pub fn solve_with_border(
        &self,
        vel_rhs: &[f64],
        pressure_rhs: &[f64],
        border_rhs: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, f64), StokesError> {
        assert_eq!(vel_rhs.len(), self.n_vel);
        assert_eq!(pressure_rhs.len(), self.n_pressure);
        let n = self.n_vel + self.n_pressure + 1;
        let mut x = vec![0.0; n];
        x[..self.n_vel].copy_from_slice(vel_rhs);
        x[self.n_vel..n - 1].copy_from_slice(pressure_rhs);
        x[n - 1] = border_rhs;
        let residual = self.solver.solve_refined(&mut x)?;
        if residual > SADDLE_RESIDUAL_TOL {
            return Err(StokesError::ResidualTooLarge {
                residual,
                tol: SADDLE_RESIDUAL_TOL,
            });
        }
        let mut tail = x.split_off(self.n_vel);
        let lambda = tail.pop().expect("border unknown");
        Ok((x, tail, lambda))
    }

    /// ‖Bu‖ of a coefficient vector, for precondition checks.
    pub fn divergence_norm(&self, u: &[f64]) -> f64 {
        euclidean(&self.divergence.matvec(u))
    }
}

/// Reusable L²-orthogonal projector onto the discretely divergence-free
/// subspace: the saddle system with V = M, factored once per space.
pub struct ProjectionSolver {
    pub mass: SparseOperator,
    saddle: SaddleSolver,
}

impl ProjectionSolver {
    pub fn new(space: &TaylorHoodSpace) -> Result<Self, StokesError> {
        let mass = assemble_mass(space);
        let pattern: Vec<(usize, usize)> = mass.entries().map(|(r, c, _)| (r, c)).collect();
        let values: Vec<f64> = mass.entries().map(|(_, _, v)| v).collect();
        let mut saddle = SaddleSolver::new(space, &pattern)?;
        saddle.factor(&values)?;
        Ok(Self { mass, saddle })
    }

    /// Project a load functional: u solves ⟨u, v⟩ = f(v) over div-free v.
    pub fn project_dual(
        &self,
        space: &TaylorHoodSpace,
        f: &DualVector,
    ) -> Result<VelocityVector, StokesError> {
        assert_eq!(f.space_id, space.id(), "dual vector from a different space");
        let zeros = vec![0.0; self.saddle.n_pressure];
        let (coeffs, _, _) = self.saddle.solve(&f.vals, &zeros)?;
        Ok(VelocityVector {
            coeffs,
            space_id: space.id(),
        })
    }

    /// Project a finite element field (closest div-free field in L²).
    pub fn project(
        &self,
        space: &TaylorHoodSpace,
        f: &VelocityVector,
    ) -> Result<VelocityVector, StokesError> {
        assert_eq!(f.space_id, space.id(), "field from a different space");
        let dual = DualVector {
            vals: self.mass.matvec(&f.coeffs),
            space_id: f.space_id,
        };
        self.project_dual(space, &dual)
    }
}

/// One-shot projection of a finite element field.
pub fn helmholtz_project(
    space: &TaylorHoodSpace,
    f: &VelocityVector,
) -> Result<VelocityVector, StokesError> {
    ProjectionSolver::new(space)?.project(space, f)
}

/// One-shot projection of a load functional.
pub fn helmholtz_project_dual(
    space: &TaylorHoodSpace,
    f: &DualVector,
) -> Result<VelocityVector, StokesError> {
    ProjectionSolver::new(space)?.project_dual(space, f)
}

/// Projection of an analytic initial field: assemble ⟨y0, v⟩, then project.
pub fn project_initial(
    space: &TaylorHoodSpace,
    y0: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<VelocityVector, StokesError> {
    helmholtz_project_dual(space, &velocity_load(space, y0))
}

/// Steady Stokes solve with unit viscosity: ⟨∇u,∇v⟩ − ⟨p,∇·v⟩ = ⟨f,v⟩,
/// ⟨∇·u,ψ⟩ = 0, pressure mean-zero. The saddle convention Ku + Bᵀq = g
/// makes the physical pressure p = −q.
pub fn solve_steady_stokes(
    space: &TaylorHoodSpace,
    body_force: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<(VelocityVector, PressureVector), StokesError> {
    let stiffness = assemble_stiffness(space);
    let pattern: Vec<(usize, usize)> = stiffness.entries().map(|(r, c, _)| (r, c)).collect();
    let values: Vec<f64> = stiffness.entries().map(|(_, _, v)| v).collect();
    let mut saddle = SaddleSolver::new(space, &pattern)?;
    saddle.factor(&values)?;
    let load = velocity_load(space, body_force);
    let zeros = vec![0.0; space.n_pressure];
    let (coeffs, q, _) = saddle.solve(&load.vals, &zeros)?;
    let pressure = PressureVector {
        coeffs: q.iter().map(|v| -v).collect(),
        space_id: space.id(),
    };
    Ok((
        VelocityVector {
            coeffs,
            space_id: space.id(),
        },
        pressure,
    ))
}

/// Action of the discrete Stokes operator: ⟨A_h u, v⟩ = ⟨∇u, ∇v⟩ for all
/// div-free v. Requires u itself discretely divergence-free.
pub fn stokes_apply(
    space: &TaylorHoodSpace,
    u: &VelocityVector,
) -> Result<DualVector, StokesError> {
    assert_eq!(u.space_id, space.id(), "field from a different space");
    let b = assemble_divergence(space);
    let constraint = euclidean(&b.matvec(&u.coeffs));
    if constraint > DIV_FREE_TOL * (1.0 + euclidean(&u.coeffs)) {
        return Err(StokesError::NotDivergenceFree(constraint));
    }
    let k = assemble_stiffness(space);
    Ok(DualVector {
        vals: k.matvec(&u.coeffs),
        space_id: u.space_id,
    })
}

/// Dense linear-algebra oracles on coarse spaces: explicit kernel basis of
/// the divergence coupling, normal-equations projection, and the spectrum
/// of the Stokes operator. Gated by dof count; verification only.
pub mod dense_oracle {
    use super::*;
    use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

    pub const MAX_FREE_DOFS: usize = 400;

    fn gate(space: &TaylorHoodSpace) -> Result<(), StokesError> {
        if space.n_vel_free > MAX_FREE_DOFS {
            return Err(StokesError::OracleTooLarge {
                n_vel_free: space.n_vel_free,
                limit: MAX_FREE_DOFS,
            });
        }
        Ok(())
    }

    /// Orthonormal basis of ker B from the eigendecomposition of BᵀB.
    /// Expects rank B = n_pressure − 1 (constant pressures are the only
    /// null pressure modes) and checks for a clean spectral gap.
    pub fn kernel_basis(space: &TaylorHoodSpace) -> Result<DMatrix<f64>, StokesError> {
        gate(space)?;
        let b = assemble_divergence(space).to_dense();
        let btb = b.transpose() * &b;
        let eig = SymmetricEigen::new(btb);
        let dim = space.n_vel_free + 1 - space.n_pressure;

        let mut order: Vec<usize> = (0..space.n_vel_free).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let top = eig.eigenvalues[order[space.n_vel_free - 1]].max(f64::MIN_POSITIVE);
        let in_kernel = eig.eigenvalues[order[dim - 1]] / top;
        let out_of_kernel = eig.eigenvalues[order[dim]] / top;
        if in_kernel > 1e-12 || out_of_kernel < 1e-9 {
            return Err(StokesError::DegenerateKernel(format!(
                "expected dim {dim}: boundary eigenvalues {in_kernel:.3e} / {out_of_kernel:.3e} of top"
            )));
        }

        let mut basis = DMatrix::zeros(space.n_vel_free, dim);
        for (k, &i) in order[..dim].iter().enumerate() {
            basis.set_column(k, &eig.eigenvectors.column(i));
        }
        Ok(basis)
    }

    /// L²-orthogonal projection by normal equations on the kernel basis.
    pub fn project(space: &TaylorHoodSpace, f: &DualVector) -> Result<VelocityVector, StokesError> {
        let z = kernel_basis(space)?;
        let m = assemble_mass(space).to_dense();
        let zmz = z.transpose() * &m * &z;
        let rhs = z.transpose() * DVector::from_column_slice(&f.vals);
        let chol = Cholesky::new(zmz)
            .ok_or_else(|| StokesError::DegenerateKernel("reduced mass not PD".into()))?;
        let u = &z * chol.solve(&rhs);
        Ok(VelocityVector {
            coeffs: u.iter().copied().collect(),
            space_id: space.id(),
        })
    }

    /// Generalized eigenpairs of (ZᵀKZ, ZᵀMZ): the spectrum of A_h.
    /// Eigenvalues ascend; eigenvectors come back in full velocity
    /// coordinates, M-orthonormal and discretely divergence-free.
    pub fn stokes_eigenpairs(
        space: &TaylorHoodSpace,
    ) -> Result<(Vec<f64>, Vec<VelocityVector>), StokesError> {
        let z = kernel_basis(space)?;
        let k = assemble_stiffness(space).to_dense();
        let m = assemble_mass(space).to_dense();
        let a = z.transpose() * &k * &z;
        let mz = z.transpose() * &m * &z;

        // Whitening: W = L⁻¹ A L⁻ᵀ with ZᵀMZ = LLᵀ.
        let chol = Cholesky::new(mz)
            .ok_or_else(|| StokesError::DegenerateKernel("reduced mass not PD".into()))?;
        let l = chol.l();
        let s1 = l
            .solve_lower_triangular(&a)
            .ok_or_else(|| StokesError::DegenerateKernel("singular Cholesky factor".into()))?;
        let s2 = l
            .solve_lower_triangular(&s1.transpose())
            .ok_or_else(|| StokesError::DegenerateKernel("singular Cholesky factor".into()))?;
        let w = 0.5 * (&s2 + s2.transpose());
        let eig = SymmetricEigen::new(w);

        let dim = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let lt = l.transpose();
        let mut values = Vec::with_capacity(dim);
        let mut vectors = Vec::with_capacity(dim);
        for &i in &order {
            values.push(eig.eigenvalues[i]);
            let y = eig.eigenvectors.column(i).clone_owned();
            let x = lt
                .solve_upper_triangular(&y)
                .ok_or_else(|| StokesError::DegenerateKernel("singular Cholesky factor".into()))?;
            let full = &z * x;
            vectors.push(VelocityVector {
                coeffs: full.iter().copied().collect(),
                space_id: space.id(),
            });
        }
        Ok((values, vectors))
    }
}
