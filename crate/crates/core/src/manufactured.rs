//! Closed-form fields for verification runs: a zero-trace solenoidal
//! velocity on the unit square with matching pressure and Stokes body
//! force, and smooth compatible initial data on the disk.

/// q(t) = t²(1-t)² and its first three derivatives.
fn quartic(t: f64) -> [f64; 4] {
    [
        t * t * (1.0 - t) * (1.0 - t),
        2.0 * t - 6.0 * t * t + 4.0 * t * t * t,
        2.0 - 12.0 * t + 12.0 * t * t,
        -12.0 + 24.0 * t,
    ]
}

/// Divergence-free velocity with zero trace on the unit square: the curl
/// (∂ψ/∂y, -∂ψ/∂x) of ψ = x²(1-x)² y²(1-y)².
pub fn stream_velocity(p: [f64; 2]) -> [f64; 2] {
    let x = quartic(p[0]);
    let y = quartic(p[1]);
    [x[0] * y[1], -x[1] * y[0]]
}

/// Mean-zero pressure companion on the unit square.
pub fn stream_pressure(p: [f64; 2]) -> f64 {
    p[0] * p[0] * p[0] + p[1] * p[1] * p[1] - 0.5
}

/// Body force f = -Δu + ∇p for [`stream_velocity`] and [`stream_pressure`]
/// (unit viscosity): the pair solves the steady Stokes system exactly.
pub fn stokes_body_force(p: [f64; 2]) -> [f64; 2] {
    let x = quartic(p[0]);
    let y = quartic(p[1]);
    [
        -(x[2] * y[1] + x[0] * y[3]) + 3.0 * p[0] * p[0],
        (x[3] * y[0] + x[1] * y[2]) + 3.0 * p[1] * p[1],
    ]
}

/// Divergence-free initial velocity with zero trace on the unit disk: the
/// curl of ψ = (1-|x|²)²/4.
pub fn disk_vortex(p: [f64; 2]) -> [f64; 2] {
    let bubble = 1.0 - p[0] * p[0] - p[1] * p[1];
    [-p[1] * bubble, p[0] * bubble]
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLES: [[f64; 2]; 5] = [
        [0.2, 0.3],
        [0.5, 0.5],
        [0.8, 0.1],
        [0.33, 0.77],
        [0.61, 0.42],
    ];

    fn central_diff(f: impl Fn([f64; 2]) -> f64, p: [f64; 2], d: usize, h: f64) -> f64 {
        let mut hi = p;
        let mut lo = p;
        hi[d] += h;
        lo[d] -= h;
        (f(hi) - f(lo)) / (2.0 * h)
    }

    #[test]
    fn stream_velocity_is_divergence_free() {
        for p in SAMPLES {
            let div = central_diff(|q| stream_velocity(q)[0], p, 0, 1e-5)
                + central_diff(|q| stream_velocity(q)[1], p, 1, 1e-5);
            assert!(div.abs() < 1e-9, "div at {p:?}: {div:.3e}");
        }
    }

    #[test]
    fn stream_velocity_vanishes_on_the_boundary() {
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for p in [[t, 0.0], [t, 1.0], [0.0, t], [1.0, t]] {
                let u = stream_velocity(p);
                assert_eq!(u, [0.0, 0.0], "at {p:?}");
            }
        }
    }

    #[test]
    fn body_force_matches_finite_difference_stokes_residual() {
        // Independent check of the hand-derived derivatives: compare
        // -Δu + ∇p against five-point finite differences.
        let h = 1e-3;
        for p in SAMPLES {
            let lap = |comp: usize, q: [f64; 2]| {
                let mut acc = -4.0 * stream_velocity(q)[comp];
                for (d, s) in [(0, h), (0, -h), (1, h), (1, -h)] {
                    let mut r = q;
                    r[d] += s;
                    acc += stream_velocity(r)[comp];
                }
                acc / (h * h)
            };
            let f = stokes_body_force(p);
            let fd = [
                -lap(0, p) + central_diff(stream_pressure, p, 0, h),
                -lap(1, p) + central_diff(stream_pressure, p, 1, h),
            ];
            for c in 0..2 {
                assert!(
                    (f[c] - fd[c]).abs() < 1e-4,
                    "component {c} at {p:?}: {} vs {}",
                    f[c],
                    fd[c]
                );
            }
        }
    }

    #[test]
    fn pressure_has_zero_mean_on_the_square() {
        // ∫ x³+y³ over the unit square is 1/2 exactly.
        let n = 64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                total += stream_pressure(p);
            }
        }
        // Midpoint rule is second order; x³ has bounded second derivative.
        assert!((total / (n * n) as f64).abs() < 1e-4);
    }

    #[test]
    fn disk_vortex_is_solenoidal_and_zero_on_the_circle() {
        for p in [[0.1, 0.4], [-0.5, 0.2], [0.0, 0.0], [0.7, -0.6]] {
            let div = central_diff(|q| disk_vortex(q)[0], p, 0, 1e-5)
                + central_diff(|q| disk_vortex(q)[1], p, 1, 1e-5);
            assert!(div.abs() < 1e-9);
        }
        for k in 0..8 {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
            let u = disk_vortex([a.cos(), a.sin()]);
            assert!(u[0].abs() < 1e-15 && u[1].abs() < 1e-15);
        }
    }
}
