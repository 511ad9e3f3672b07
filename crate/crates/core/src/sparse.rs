//! Direct sparse LU with a reusable symbolic analysis.
//!
//! Every linear system in this crate (Helmholtz projections, steady Stokes
//! solves, Newton iterations inside the time stepper) is a saddle system
//! whose sparsity pattern is fixed by the space. The pattern is analyzed
//! once; each factorization only rescatters numeric values and reruns the
//! numeric phase, which dominates the per-step cost.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Pair, SparseColMatRef, SymbolicSparseColMat};

#[derive(Debug, thiserror::Error)]
pub enum SparseError {
    #[error("invalid sparsity pattern: {0}")]
    Pattern(String),
    #[error("LU factorization failed: {0}")]
    Factorization(String),
    #[error("solve requested before a successful factorization")]
    NotFactored,
}

/// LU solver over a fixed square sparsity pattern.
///
/// Construction fixes an emission order: a list of (row, col) slots, with
/// repeats allowed. Each [`factor`](Self::factor) call takes values aligned
/// to that order and accumulates repeats, so callers can re-emit assembly
/// output without merging duplicates themselves.
pub struct PatternSolver {
    n: usize,
    symbolic: SymbolicSparseColMat<usize>,
    sym_lu: SymbolicLu<usize>,
    /// Emission slot -> value slot in the deduplicated column-major arrays.
    positions: Vec<usize>,
    vals: Vec<f64>,
    lu: Option<Lu<usize, f64>>,
}

impl PatternSolver {
    pub fn new(n: usize, emission: &[(usize, usize)]) -> Result<Self, SparseError> {
        let pairs: Vec<Pair<usize, usize>> =
            emission.iter().map(|&(r, c)| Pair::new(r, c)).collect();
        let (symbolic, _) = SymbolicSparseColMat::<usize>::try_new_from_indices(n, n, &pairs)
            .map_err(|e| SparseError::Pattern(format!("{e:?}")))?;
        let sym_lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| SparseError::Pattern(format!("{e:?}")))?;
        let (col_ptr, row_idx) = (symbolic.col_ptr(), symbolic.row_idx());
        let positions = emission
            .iter()
            .map(|&(r, c)| {
                let lo = col_ptr[c];
                lo + row_idx[lo..col_ptr[c + 1]]
                    .binary_search(&r)
                    .expect("emitted entry present in pattern")
            })
            .collect();
        let nnz = row_idx.len();
        Ok(PatternSolver {
            n,
            symbolic,
            sym_lu,
            positions,
            vals: vec![0.0; nnz],
            lu: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn emission_len(&self) -> usize {
        self.positions.len()
    }

    /// Numeric factorization from values in emission order. On failure the
    /// solver reverts to the unfactored state. An exactly zero pivot makes
    /// the backend panic rather than error, so that path is caught and
    /// reported alongside structural singularity.
    pub fn factor(&mut self, values: &[f64]) -> Result<(), SparseError> {
        assert_eq!(
            values.len(),
            self.positions.len(),
            "emission length mismatch"
        );
        self.lu = None;
        self.vals.fill(0.0);
        for (v, &slot) in values.iter().zip(&self.positions) {
            self.vals[slot] += v;
        }
        let mat = SparseColMatRef::new(self.symbolic.as_ref(), &self.vals);
        let attempt = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            Lu::try_new_with_symbolic(self.sym_lu.clone(), mat)
        }))
        .map_err(|_| SparseError::Factorization("exactly zero pivot".into()))?;
        self.lu = Some(attempt.map_err(|e| SparseError::Factorization(format!("{e:?}")))?);
        Ok(())
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Result<(), SparseError> {
        assert_eq!(rhs.len(), self.n);
        let lu = self.lu.as_ref().ok_or(SparseError::NotFactored)?;
        let mut col = faer::Col::<f64>::from_fn(self.n, |i| rhs[i]);
        lu.solve_in_place(&mut col);
        for (r, i) in rhs.iter_mut().zip(0..self.n) {
            *r = col[i];
        }
        Ok(())
    }

    /// Residual-checked apply of the factored matrix: y = A x, using the
    /// stored deduplicated values. Used for iterative refinement.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        let (col_ptr, row_idx) = (self.symbolic.col_ptr(), self.symbolic.row_idx());
        for c in 0..self.n {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in col_ptr[c]..col_ptr[c + 1] {
                y[row_idx[k]] += self.vals[k] * xc;
            }
        }
    }

    /// Solve with one pass of iterative refinement; returns the final
    /// relative residual max |Ax - b| / max |b|.
    pub fn solve_refined(&self, rhs: &mut [f64]) -> Result<f64, SparseError> {
        let b = rhs.to_vec();
        self.solve_in_place(rhs)?;
        let mut resid = vec![0.0; self.n];
        self.apply(rhs, &mut resid);
        for (r, bv) in resid.iter_mut().zip(&b) {
            *r = bv - *r;
        }
        let mut corr = resid.clone();
        self.solve_in_place(&mut corr)?;
        for (x, c) in rhs.iter_mut().zip(&corr) {
            *x += c;
        }
        self.apply(rhs, &mut resid);
        let bmax = b
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let rmax = resid
            .iter()
            .zip(&b)
            .fold(0.0f64, |a, (av, bv)| a.max((av - bv).abs()));
        Ok(rmax / bmax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_pattern(k: usize) -> (usize, Vec<(usize, usize)>, Vec<f64>) {
        // 1D Dirichlet Laplacian tridiagonal, emitted per-element so the
        // diagonal arrives as duplicated entries.
        let n = k;
        let mut emission = Vec::new();
        let mut values = Vec::new();
        for e in 0..=k {
            let (a, b) = (e as isize - 1, e as isize);
            for &(i, j) in &[(a, a), (a, b), (b, a), (b, b)] {
                if i >= 0 && j >= 0 && (i as usize) < n && (j as usize) < n {
                    emission.push((i as usize, j as usize));
                    values.push(if i == j { 1.0 } else { -1.0 });
                }
            }
        }
        (n, emission, values)
    }

    #[test]
    fn factors_and_solves_with_duplicate_emission() {
        let (n, emission, values) = laplacian_pattern(50);
        let mut solver = PatternSolver::new(n, &emission).unwrap();
        solver.factor(&values).unwrap();
        // Constant RHS: solution of -u'' = f with u(0)=u(k)=0 on integers.
        let mut x = vec![1.0; n];
        let rel = solver.solve_refined(&mut x).unwrap();
        assert!(rel < 1e-12, "relative residual {rel}");
        let k = n as f64 + 1.0;
        for (i, xi) in x.iter().enumerate() {
            let t = (i + 1) as f64;
            let exact = 0.5 * t * (k - t);
            assert!(
                (xi - exact).abs() < 1e-9 * k * k,
                "x[{i}] = {xi}, exact {exact}"
            );
        }
    }

    #[test]
    fn refactor_reuses_pattern() {
        let (n, emission, values) = laplacian_pattern(20);
        let mut solver = PatternSolver::new(n, &emission).unwrap();
        solver.factor(&values).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| 3.0 * v).collect();
        solver.factor(&scaled).unwrap();
        let mut x = vec![3.0; n];
        solver.solve_in_place(&mut x).unwrap();
        let k = n as f64 + 1.0;
        for (i, xi) in x.iter().enumerate() {
            let t = (i + 1) as f64;
            assert!((xi - 0.5 * t * (k - t)).abs() < 1e-9 * k * k);
        }
    }

    #[test]
    fn solve_before_factor_is_an_error() {
        let (n, emission, _) = laplacian_pattern(5);
        let solver = PatternSolver::new(n, &emission).unwrap();
        let mut x = vec![1.0; n];
        assert!(matches!(
            solver.solve_in_place(&mut x),
            Err(SparseError::NotFactored)
        ));
    }

    #[test]
    fn singular_matrix_is_reported() {
        let emission = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let mut solver = PatternSolver::new(2, &emission).unwrap();
        assert!(matches!(
            solver.factor(&[1.0, 1.0, 1.0, 1.0]),
            Err(SparseError::Factorization(_))
        ));
    }

    #[test]
    fn apply_matches_emission_sum() {
        let emission = vec![(0, 0), (0, 0), (1, 1), (0, 1)];
        let mut solver = PatternSolver::new(2, &emission).unwrap();
        solver.factor(&[2.0, 3.0, 4.0, -1.0]).unwrap();
        let mut y = vec![0.0; 2];
        solver.apply(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![4.0, 4.0]);
    }
}
