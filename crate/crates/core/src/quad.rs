//! Numerical integration on the reference triangle.
//!
//! Rules are tensor-product Gauss-Legendre rules collapsed onto the triangle
//! `{(x, y) : x, y >= 0, x + y <= 1}` through the Duffy substitution
//! `(u, v) -> (u, v(1 - u))`. A monomial `x^a y^b` of total degree `d` pulls
//! back to a polynomial of degree `d + 1` in `u` and `d` in `v`, so an
//! `m x m` product rule is exact for total degree `2m - 2`.

/// Quadrature rule on the reference triangle.
///
/// Weights include the Jacobian of the Duffy map and sum to the reference
/// area `1/2`. All weights are strictly positive.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Points `(x, y)` strictly inside the reference triangle.
    pub points: Vec<[f64; 2]>,
    /// Positive weights summing to `1/2`.
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadratureRule {
    /// Smallest collapsed product rule exact for total degree `degree`.
    pub fn for_degree(degree: usize) -> Self {
        let m = (degree + 3) / 2; // smallest m with 2m - 2 >= degree
        let (nodes, weights) = gauss_legendre_unit(m);
        let mut pts = Vec::with_capacity(m * m);
        let mut wts = Vec::with_capacity(m * m);
        for (iu, &u) in nodes.iter().enumerate() {
            for (iv, &v) in nodes.iter().enumerate() {
                pts.push([u, v * (1.0 - u)]);
                wts.push(weights[iu] * weights[iv] * (1.0 - u));
            }
        }
        QuadratureRule {
            points: pts,
            weights: wts,
            degree: 2 * m - 2,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
///
/// Nodes are the roots of the Legendre polynomial `P_m`, found by Newton
/// iteration from the Chebyshev-like initial guess; the iteration is
/// quadratically convergent and stops at machine precision. Exact for
/// polynomials of degree `2m - 1`.
pub fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "rule size must be at least 1");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        // Initial guess for the i-th root of P_m on [-1, 1], descending.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1]; reverse so nodes come out ascending.
        nodes[m - 1 - i] = 0.5 * (x + 1.0);
        weights[m - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial `P_m` at `x` via the
/// three-term recurrence.
fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let dp = m as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}
