//! Multiplicative noise: diffusion coefficient families satisfying the
//! linear-growth and bounded-derivative hypotheses, truncated cylindrical
//! Brownian increments, and the stochastic load assembly.
//!
//! Increments are generated counter-based: the draw for (step, mode) is a
//! pure function of (seed, step, mode). Refinement studies therefore reuse
//! the identical driving noise across meshes without storing paths, and
//! coarse paths are exact left-to-right sums over a shared fine base, so
//! repeated coarsening is bit-exact regardless of grouping.

use crate::elements::P3_NODES;
use crate::spaces::{DualVector, TaylorHoodSpace, VelocityVector};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Counter-based pseudorandom primitives.

/// splitmix64 finalizer: bijective 64-bit mixer with full avalanche.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed counter hash: statistically independent streams for distinct
/// (seed, a, b, lane) keys. Distinct odd multipliers per position prevent
/// (a, b) transposition collisions.
fn counter_key(seed: u64, a: u64, b: u64, lane: u64) -> u64 {
    let mut z = seed ^ 0xA076_1D64_78BD_642F;
    z = mix64(z.wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    z = mix64(z.wrapping_add(b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)));
    z = mix64(z.wrapping_add(lane.wrapping_mul(0x1656_67B1_9E37_79F9)));
    z
}

/// Uniform draw in [0, 1) for key (seed, a, b).
pub fn counter_uniform(seed: u64, a: u64, b: u64) -> f64 {
    (counter_key(seed, a, b, 0) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw for key (seed, a, b) by Box-Muller from two lanes.
pub fn counter_gaussian(seed: u64, a: u64, b: u64) -> f64 {
    // u1 in (0, 1] keeps the log finite; u2 in [0, 1).
    let u1 = ((counter_key(seed, a, b, 1) >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
    let u2 = (counter_key(seed, a, b, 2) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// Brownian paths.

#[derive(Debug, thiserror::Error)]
pub enum NoiseError {
    #[error("truncation level must be at least 1")]
    InvalidTruncation,
    #[error("noise scale must be finite and non-negative, got {0}")]
    InvalidScale(f64),
    #[error("hypothesis bound violated: {0}")]
    HypothesisViolated(String),
    #[error("coarsening factor {k} does not divide step count {steps}")]
    BadCoarsenFactor { k: usize, steps: usize },
}

/// Increments of the first `n_modes` Brownian motions over a uniform grid.
///
/// A path holds the finest-resolution draws it was sampled at (the base)
/// plus a coarsening factor; increment `(j, n)` is the left-to-right sum of
/// `factor` consecutive base draws. Coarsening only multiplies the factor,
/// so nested coarsenings reproduce single coarsenings bit-exactly.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    pub seed: u64,
    pub n_modes: usize,
    base_tau: f64,
    base_steps: usize,
    base: Arc<Vec<f64>>,
    factor: usize,
    pub steps: usize,
}

/// Sample a path of `steps` i.i.d. N(0, tau) increment rows.
pub fn sample_path(seed: u64, steps: usize, n_modes: usize, tau: f64) -> BrownianPath {
    assert!(steps >= 1 && n_modes >= 1 && tau > 0.0);
    let sqrt_tau = tau.sqrt();
    let mut base = Vec::with_capacity(steps * n_modes);
    for j in 0..steps {
        for n in 0..n_modes {
            base.push(sqrt_tau * counter_gaussian(seed, j as u64, n as u64));
        }
    }
    BrownianPath {
        seed,
        n_modes,
        base_tau: tau,
        base_steps: steps,
        base: Arc::new(base),
        factor: 1,
        steps,
    }
}

/// Group `k` consecutive increments into one; the underlying Brownian
/// motion is unchanged.
pub fn coarsen_path(p: &BrownianPath, k: usize) -> Result<BrownianPath, NoiseError> {
    if k == 0 || p.steps % k != 0 {
        return Err(NoiseError::BadCoarsenFactor { k, steps: p.steps });
    }
    Ok(BrownianPath {
        seed: p.seed,
        n_modes: p.n_modes,
        base_tau: p.base_tau,
        base_steps: p.base_steps,
        base: Arc::clone(&p.base),
        factor: p.factor * k,
        steps: p.steps / k,
    })
}

impl BrownianPath {
    pub fn tau(&self) -> f64 {
        self.base_tau * self.factor as f64
    }

    /// Increment of mode `n` over step `j`: left-to-right sum of the base
    /// draws it covers.
    pub fn increment(&self, j: usize, n: usize) -> f64 {
        debug_assert!(j < self.steps && n < self.n_modes);
        let mut sum = 0.0;
        let start = j * self.factor;
        for i in 0..self.factor {
            sum += self.base[(start + i) * self.n_modes + n];
        }
        sum
    }

    /// All mode increments over step `j`.
    pub fn increments_row(&self, j: usize) -> Vec<f64> {
        (0..self.n_modes).map(|n| self.increment(j, n)).collect()
    }
}

// ---------------------------------------------------------------------------
// Diffusion coefficient families.

/// Small integer wavevectors cycled by mode index; keeping them in a fixed
/// set bounds every spatial derivative uniformly in the mode.
const WAVEVECTORS: [[f64; 2]; 8] = [
    [1.0, 0.0],
    [0.0, 1.0],
    [1.0, 1.0],
    [2.0, 1.0],
    [1.0, 2.0],
    [2.0, 0.0],
    [0.0, 2.0],
    [2.0, 2.0],
];

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn phase(n: usize, salt: f64) -> f64 {
    2.0 * std::f64::consts::PI * ((n as f64 + 1.0) * GOLDEN + salt).fract()
}

/// Smoothed absolute value: sigma(t) = sqrt(1 + t²). Satisfies
/// |sigma| <= 1 + |t|, |sigma'| <= 1, |sigma''| <= 1.
fn sigma(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

fn sigma_prime(t: f64) -> f64 {
    t / (1.0 + t * t).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    UnitSquare,
    UnitDisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    /// f_n(x, y) = amp_n (a_n(x) + chi(y)) with a_n bounded trigonometric
    /// fields and chi(y) = (sigma(y_1), sigma(y_2)).
    TrigAdditive,
    /// f_n(x, y) = amp_n w_n(x) g(y) with w_n a rotated stream-function
    /// gradient (pointwise divergence-free in x for every fixed y) and
    /// g(y) = (1 + sigma(y_1) + sigma(y_2)) / 3.
    StreamFunction { domain: StreamDomain },
}

/// Per-family bound B such that all truncated hypothesis sums are below
/// c_scale² B Σ n^{-2s} (1+|y|)². Derived from crude sup bounds on the mode
/// fields and their first two x- and y-derivatives; see the constructors.
const B_TRIG: f64 = 152.0;
const B_STREAM_SQUARE: f64 = 8.2e5;
const B_STREAM_DISK: f64 = 6.6e3;

#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub n_modes: usize,
    pub c_scale: f64,
    pub s_decay: f64,
    /// Upper bound for the truncated hypothesis sums: value sum below
    /// c_f²(1+|y|)², y-derivative sum below c_f².
    pub c_f: f64,
    pub divergence_free_modes: bool,
}

/// Default family: trigonometric additive modes with decay s = 1.
///
/// Mode bound derivation (amp_n = c (n+1)^{-1}): |a_n + chi|² <= 8(1+|y|)²,
/// x-gradient Frobenius² <= 16, x-Hessian Frobenius² <= 128, so
/// B = 8 + 16 + 128 = 152 dominates the first hypothesis sum; the
/// y-derivative sums carry constant 4 and are dominated too.
pub fn default_model(n_modes: usize, c_scale: f64) -> Result<NoiseModel, NoiseError> {
    build_model(NoiseFamily::TrigAdditive, n_modes, c_scale)
}

/// Divergence-free family built from stream functions; each mode is
/// pointwise divergence-free in x for every fixed y and vanishes on the
/// reference boundary (the square exactly; the disk on the unit circle).
pub fn divergence_free_model(
    n_modes: usize,
    c_scale: f64,
    domain: StreamDomain,
) -> Result<NoiseModel, NoiseError> {
    build_model(NoiseFamily::StreamFunction { domain }, n_modes, c_scale)
}

fn build_model(
    family: NoiseFamily,
    n_modes: usize,
    c_scale: f64,
) -> Result<NoiseModel, NoiseError> {
    if n_modes < 1 {
        return Err(NoiseError::InvalidTruncation);
    }
    if !c_scale.is_finite() || c_scale < 0.0 {
        return Err(NoiseError::InvalidScale(c_scale));
    }
    let s_decay = 1.0;
    let b = match family {
        NoiseFamily::TrigAdditive => B_TRIG,
        NoiseFamily::StreamFunction {
            domain: StreamDomain::UnitSquare,
        } => B_STREAM_SQUARE,
        NoiseFamily::StreamFunction {
            domain: StreamDomain::UnitDisk,
        } => B_STREAM_DISK,
    };
    let decay_sum: f64 = (0..n_modes)
        .map(|n| ((n + 1) as f64).powf(-2.0 * s_decay))
        .sum();
    let model = NoiseModel {
        family,
        n_modes,
        c_scale,
        s_decay,
        c_f: c_scale * (b * decay_sum).sqrt(),
        divergence_free_modes: matches!(family, NoiseFamily::StreamFunction { .. }),
    };
    model.check_hypothesis(50)?;
    Ok(model)
}

impl NoiseModel {
    pub fn amplitude(&self, n: usize) -> f64 {
        self.c_scale * ((n + 1) as f64).powf(-self.s_decay)
    }

    /// The x-dependent part of mode `n` (without amplitude): a_n(x) for the
    /// additive family, w_n(x) for the stream family.
    fn mode_xpart(&self, n: usize, x: [f64; 2]) -> [f64; 2] {
        match self.family {
            NoiseFamily::TrigAdditive => {
                let k = WAVEVECTORS[n % WAVEVECTORS.len()];
                let m = WAVEVECTORS[(n + 3) % WAVEVECTORS.len()];
                [
                    (k[0] * x[0] + k[1] * x[1] + phase(n, 0.0)).sin(),
                    (m[0] * x[0] + m[1] * x[1] + phase(n, 0.37)).cos(),
                ]
            }
            NoiseFamily::StreamFunction { domain } => {
                // w = (d psi / d x2, -d psi / d x1).
                let [d1, d2] = stream_gradient(domain, n, x);
                [d2, -d1]
            }
        }
    }

    /// Value of mode `n` at position `x`, velocity value `y`.
    pub fn eval_mode(&self, n: usize, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
        let amp = self.amplitude(n);
        let xp = self.mode_xpart(n, x);
        match self.family {
            NoiseFamily::TrigAdditive => [amp * (xp[0] + sigma(y[0])), amp * (xp[1] + sigma(y[1]))],
            NoiseFamily::StreamFunction { .. } => {
                let g = (1.0 + sigma(y[0]) + sigma(y[1])) / 3.0;
                [amp * xp[0] * g, amp * xp[1] * g]
            }
        }
    }

    /// Jacobian of mode `n` with respect to `y` (rows: components of f_n).
    pub fn mode_dy(&self, n: usize, x: [f64; 2], y: [f64; 2]) -> [[f64; 2]; 2] {
        let amp = self.amplitude(n);
        match self.family {
            NoiseFamily::TrigAdditive => [
                [amp * sigma_prime(y[0]), 0.0],
                [0.0, amp * sigma_prime(y[1])],
            ],
            NoiseFamily::StreamFunction { .. } => {
                let xp = self.mode_xpart(n, x);
                let dg = [sigma_prime(y[0]) / 3.0, sigma_prime(y[1]) / 3.0];
                [
                    [amp * xp[0] * dg[0], amp * xp[0] * dg[1]],
                    [amp * xp[1] * dg[0], amp * xp[1] * dg[1]],
                ]
            }
        }
    }

    /// Spatial divergence of mode `n` at fixed `y`. Zero by construction
    /// for the stream-function family.
    pub fn mode_divergence(&self, n: usize, x: [f64; 2], _y: [f64; 2]) -> f64 {
        match self.family {
            NoiseFamily::TrigAdditive => {
                let amp = self.amplitude(n);
                let k = WAVEVECTORS[n % WAVEVECTORS.len()];
                let m = WAVEVECTORS[(n + 3) % WAVEVECTORS.len()];
                let d1 = k[0] * (k[0] * x[0] + k[1] * x[1] + phase(n, 0.0)).cos();
                let d2 = -m[1] * (m[0] * x[0] + m[1] * x[1] + phase(n, 0.37)).sin();
                amp * (d1 + d2)
            }
            NoiseFamily::StreamFunction { .. } => 0.0,
        }
    }

    /// Sample the truncated hypothesis sums on an `n_grid x n_grid` set of
    /// (x, y) pairs; x ranges over [-1,1]², y over [-3,3]².
    pub fn check_hypothesis(&self, n_grid: usize) -> Result<(), NoiseError> {
        const SEED: u64 = 0x5EED_B0DD_5C8E_C4ED;
        for i in 0..n_grid {
            let x = [
                2.0 * counter_uniform(SEED, i as u64, 0) - 1.0,
                2.0 * counter_uniform(SEED, i as u64, 1) - 1.0,
            ];
            for j in 0..n_grid {
                let y = [
                    6.0 * counter_uniform(SEED, j as u64, 2) - 3.0,
                    6.0 * counter_uniform(SEED, j as u64, 3) - 3.0,
                ];
                let mut value_sum = 0.0;
                let mut dy_sum = 0.0;
                for n in 0..self.n_modes {
                    let f = self.eval_mode(n, x, y);
                    value_sum += f[0] * f[0] + f[1] * f[1];
                    let dy = self.mode_dy(n, x, y);
                    dy_sum += dy.iter().flatten().map(|d| d * d).sum::<f64>();
                }
                let growth = (1.0 + (y[0] * y[0] + y[1] * y[1]).sqrt()).powi(2);
                let cf2 = self.c_f * self.c_f;
                if value_sum > cf2 * growth + 1e-12 {
                    return Err(NoiseError::HypothesisViolated(format!(
                        "value sum {value_sum:.3e} above {:.3e} at x={x:?}, y={y:?}",
                        cf2 * growth
                    )));
                }
                if dy_sum > cf2 + 1e-12 {
                    return Err(NoiseError::HypothesisViolated(format!(
                        "y-derivative sum {dy_sum:.3e} above {cf2:.3e} at x={x:?}, y={y:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Precompute the x-dependent mode parts at every quadrature point of a
    /// space. Reused across time steps, which removes all trigonometric
    /// work from the stepping hot path.
    pub fn tabulate(&self, space: &TaylorHoodSpace) -> TabulatedNoise {
        let nq = space.quad.len();
        let nt = space.mesh.n_triangles();
        let mut xpart = Vec::with_capacity(nt * nq * self.n_modes);
        for t in 0..nt {
            let geo = space.mesh.geometry(t);
            for q in 0..nq {
                let [xi, eta] = space.quad.points[q];
                let x = geo.to_physical(xi, eta);
                for n in 0..self.n_modes {
                    xpart.push(self.mode_xpart(n, x));
                }
            }
        }
        TabulatedNoise {
            family: self.family,
            n_modes: self.n_modes,
            amps: (0..self.n_modes).map(|n| self.amplitude(n)).collect(),
            xpart,
            space_id: space.id(),
        }
    }
}

fn stream_gradient(domain: StreamDomain, n: usize, x: [f64; 2]) -> [f64; 2] {
    match domain {
        StreamDomain::UnitSquare => {
            // psi = sin²(a pi x1) sin²(b pi x2) / pi; gradient vanishes on
            // the square boundary, so w = rot(psi) does too.
            const AB: [[f64; 2]; 4] = [[1.0, 1.0], [1.0, 2.0], [2.0, 1.0], [2.0, 2.0]];
            let [a, b] = AB[n % AB.len()];
            let pi = std::f64::consts::PI;
            let (s1, s2) = ((a * pi * x[0]).sin(), (b * pi * x[1]).sin());
            [
                a * (2.0 * a * pi * x[0]).sin() * s2 * s2,
                b * s1 * s1 * (2.0 * b * pi * x[1]).sin(),
            ]
        }
        StreamDomain::UnitDisk => {
            // psi = (1 - |x|²)² sin(k·x + phi) / 4; gradient vanishes on the
            // unit circle.
            let k = WAVEVECTORS[n % WAVEVECTORS.len()];
            let ph = phase(n, 0.11);
            let r2 = x[0] * x[0] + x[1] * x[1];
            let bubble = 1.0 - r2;
            let arg = k[0] * x[0] + k[1] * x[1] + ph;
            let (s, c) = (arg.sin(), arg.cos());
            [
                0.25 * (-4.0 * x[0] * bubble * s + bubble * bubble * k[0] * c),
                0.25 * (-4.0 * x[1] * bubble * s + bubble * bubble * k[1] * c),
            ]
        }
    }
}

/// Cached x-parts of one model over one space.
#[derive(Debug, Clone)]
pub struct TabulatedNoise {
    family: NoiseFamily,
    n_modes: usize,
    amps: Vec<f64>,
    /// Layout: ((t * nq) + q) * n_modes + n.
    xpart: Vec<[f64; 2]>,
    space_id: crate::spaces::SpaceId,
}

impl TabulatedNoise {
    /// Load vector Σ_n Δβ_n ⟨f_n(·, u(·)), v⟩ for one step's increments.
    pub fn load(
        &self,
        space: &TaylorHoodSpace,
        u: &VelocityVector,
        increments: &[f64],
    ) -> DualVector {
        assert_eq!(
            self.space_id,
            space.id(),
            "noise table built for another space"
        );
        assert_eq!(increments.len(), self.n_modes);
        let nq = space.quad.len();
        let c: Vec<f64> = (0..self.n_modes)
            .map(|n| increments[n] * self.amps[n])
            .collect();
        let c_total: f64 = c.iter().sum();
        let mut dual = DualVector::zero(space);

        for t in 0..space.mesh.n_triangles() {
            let el = space.element_velocity(u, t);
            let det = space.mesh.geometry(t).det;
            for q in 0..nq {
                let vals = &space.p3_vals[q];
                let mut y = [0.0; 2];
                for ln in 0..P3_NODES {
                    y[0] += el[ln][0] * vals[ln];
                    y[1] += el[ln][1] * vals[ln];
                }
                let base = (t * nq + q) * self.n_modes;
                let mut xsum = [0.0; 2];
                for n in 0..self.n_modes {
                    let xp = self.xpart[base + n];
                    xsum[0] += c[n] * xp[0];
                    xsum[1] += c[n] * xp[1];
                }
                // Combine the y-dependent part once per point: the additive
                // chi and multiplicative g factor out of the mode sums.
                let w = match self.family {
                    NoiseFamily::TrigAdditive => [
                        xsum[0] + c_total * sigma(y[0]),
                        xsum[1] + c_total * sigma(y[1]),
                    ],
                    NoiseFamily::StreamFunction { .. } => {
                        let g = (1.0 + sigma(y[0]) + sigma(y[1])) / 3.0;
                        [xsum[0] * g, xsum[1] * g]
                    }
                };
                let scale = space.quad.weights[q] * det;
                for ln in 0..P3_NODES {
                    let dof = space.vel_scalar_dofs[t][ln];
                    let k = space.free_scalar_index[dof];
                    if k != usize::MAX {
                        dual.vals[2 * k] += scale * w[0] * vals[ln];
                        dual.vals[2 * k + 1] += scale * w[1] * vals[ln];
                    }
                }
            }
        }
        dual
    }
}

/// Load vector for one step's increments (untabulated path; prefer
/// [`NoiseModel::tabulate`] inside time loops).
pub fn noise_load(
    space: &TaylorHoodSpace,
    model: &NoiseModel,
    u: &VelocityVector,
    increments: &[f64],
) -> DualVector {
    model.tabulate(space).load(space, u, increments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::P2_NODES;
    use crate::mesh::{build_polygon_disk_mesh, build_unit_square_mesh};
    use crate::spaces::{build_space, l2_norm};

    #[test]
    fn counter_draws_are_deterministic_and_keyed() {
        assert_eq!(counter_gaussian(1, 2, 3), counter_gaussian(1, 2, 3));
        assert_ne!(counter_gaussian(1, 2, 3), counter_gaussian(1, 3, 2));
        assert_ne!(counter_gaussian(1, 2, 3), counter_gaussian(2, 2, 3));
        let u = counter_uniform(9, 8, 7);
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn sample_path_reproducible() {
        let a = sample_path(42, 16, 4, 0.25);
        let b = sample_path(42, 16, 4, 0.25);
        for j in 0..16 {
            assert_eq!(a.increments_row(j), b.increments_row(j));
        }
    }

    #[test]
    fn increment_moments_match_gaussian() {
        // 10^5 draws: mean within 4 SE of 0, variance within 4 SE of tau
        // (chi-square interval approximated by its normal limit at this
        // sample size).
        let (steps, modes, tau) = (1000, 100, 0.01);
        let p = sample_path(7, steps, modes, tau);
        let n = (steps * modes) as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for j in 0..steps {
            for m in 0..modes {
                let z = p.increment(j, m);
                sum += z;
                sum_sq += z * z;
            }
        }
        let mean = sum / n;
        let var = (sum_sq - n * mean * mean) / (n - 1.0);
        let se_mean = (tau / n).sqrt();
        let se_var = tau * (2.0 / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * se_mean, "mean {mean}, SE {se_mean}");
        assert!((var - tau).abs() < 4.0 * se_var, "var {var}, SE {se_var}");
    }

    #[test]
    fn coarsen_identity_and_total() {
        let p = sample_path(3, 12, 2, 0.5);
        let same = coarsen_path(&p, 1).unwrap();
        for j in 0..12 {
            assert_eq!(p.increments_row(j), same.increments_row(j));
        }
        let total = coarsen_path(&p, 12).unwrap();
        assert_eq!(total.steps, 1);
        for n in 0..2 {
            let sum = (0..12).fold(0.0, |acc, j| acc + p.increment(j, n));
            assert_eq!(total.increment(0, n), sum);
        }
    }

    #[test]
    fn nested_coarsening_is_bit_exact() {
        let p = sample_path(11, 24, 3, 0.125);
        let twice = coarsen_path(&coarsen_path(&p, 2).unwrap(), 3).unwrap();
        let once = coarsen_path(&p, 6).unwrap();
        assert_eq!(twice.steps, once.steps);
        for j in 0..once.steps {
            assert_eq!(twice.increments_row(j), once.increments_row(j));
        }
    }

    #[test]
    fn coarsen_rejects_non_divisor() {
        let p = sample_path(1, 10, 1, 0.1);
        assert!(matches!(
            coarsen_path(&p, 3),
            Err(NoiseError::BadCoarsenFactor { .. })
        ));
    }

    #[test]
    fn coarsened_variance_scales_with_factor() {
        let p = sample_path(5, 4000, 25, 0.01);
        let c = coarsen_path(&p, 4).unwrap();
        let n = (c.steps * c.n_modes) as f64;
        let mut sum_sq = 0.0;
        for j in 0..c.steps {
            for m in 0..c.n_modes {
                sum_sq += c.increment(j, m).powi(2);
            }
        }
        let var = sum_sq / n;
        let expect = 4.0 * 0.01;
        let se = expect * (2.0 / n).sqrt();
        assert!((var - expect).abs() < 4.0 * se, "var {var} vs {expect}");
    }

    #[test]
    fn default_model_passes_hypothesis_sampler() {
        let model = default_model(16, 0.7).unwrap();
        assert!(model.c_f > 0.0);
        assert!(model.check_hypothesis(50).is_ok());
        assert!(!model.divergence_free_modes);
    }

    #[test]
    fn zero_scale_model_is_degenerate() {
        let model = default_model(1, 0.0).unwrap();
        assert_eq!(model.c_f, 0.0);
        let f = model.eval_mode(0, [0.3, 0.4], [1.0, -2.0]);
        assert_eq!(f, [0.0, 0.0]);
    }

    #[test]
    fn model_rejects_bad_parameters() {
        assert!(matches!(
            default_model(0, 1.0),
            Err(NoiseError::InvalidTruncation)
        ));
        assert!(matches!(
            default_model(4, -1.0),
            Err(NoiseError::InvalidScale(_))
        ));
    }

    #[test]
    fn stream_modes_are_divergence_free_against_pressure_tests() {
        // The analytic divergence is identically zero, so its weighted
        // integral against every P2 test function vanishes exactly.
        let space = build_space(&build_unit_square_mesh(2)).unwrap();
        let model = divergence_free_model(6, 0.9, StreamDomain::UnitSquare).unwrap();
        assert!(model.divergence_free_modes);
        let y = [0.4, -1.2];
        for n in 0..model.n_modes {
            let mut load = vec![0.0; space.n_pressure];
            for t in 0..space.mesh.n_triangles() {
                let geo = space.mesh.geometry(t);
                for (q, &[xi, eta]) in space.quad.points.iter().enumerate() {
                    let x = geo.to_physical(xi, eta);
                    let div = model.mode_divergence(n, x, y);
                    let scale = space.quad.weights[q] * geo.det * div;
                    for ln in 0..P2_NODES {
                        load[space.pressure_dofs[t][ln]] += scale * space.p2_vals[q][ln];
                    }
                }
            }
            assert!(load.iter().all(|&v| v == 0.0), "mode {n}");
        }
    }

    #[test]
    fn disk_stream_modes_pass_sampler() {
        let model = divergence_free_model(8, 0.5, StreamDomain::UnitDisk).unwrap();
        assert!(model.check_hypothesis(50).is_ok());
    }

    #[test]
    fn noise_load_zero_increments_gives_zero() {
        let space = build_space(&build_polygon_disk_mesh(8).unwrap()).unwrap();
        let model = default_model(4, 0.8).unwrap();
        let u = crate::spaces::interpolate_velocity(&space, |p| [p[1], -p[0]]);
        let load = noise_load(&space, &model, &u, &[0.0; 4]);
        assert!(load.vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_load_is_linear_in_increments() {
        let space = build_space(&build_unit_square_mesh(2)).unwrap();
        let model = default_model(5, 0.6).unwrap();
        let u = crate::spaces::interpolate_velocity(&space, |p| [(p[0] * 3.0).sin(), p[1] * p[0]]);
        let incr = [0.3, -0.8, 0.1, 0.9, -0.2];
        let combined = noise_load(&space, &model, &u, &incr);
        let mut recombined = vec![0.0; space.n_vel_free];
        for n in 0..5 {
            let mut e = [0.0; 5];
            e[n] = incr[n];
            let part = noise_load(&space, &model, &u, &e);
            for (r, p) in recombined.iter_mut().zip(&part.vals) {
                *r += p;
            }
        }
        let scale: f64 = combined.vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in combined.vals.iter().zip(&recombined) {
            assert!((a - b).abs() <= 1e-13 * (1.0 + scale));
        }
    }

    #[test]
    fn tabulated_load_matches_direct_evaluation() {
        let space = build_space(&build_polygon_disk_mesh(8).unwrap()).unwrap();
        let model = default_model(3, 1.1).unwrap();
        let table = model.tabulate(&space);
        let u = crate::spaces::interpolate_velocity(&space, |p| [p[0] * p[1], -p[1]]);
        let incr = [0.5, -0.25, 0.125];

        // Independent route: quadrature with eval_mode at physical points.
        let mut direct = vec![0.0; space.n_vel_free];
        for t in 0..space.mesh.n_triangles() {
            let el = space.element_velocity(&u, t);
            let geo = space.mesh.geometry(t);
            for (q, &[xi, eta]) in space.quad.points.iter().enumerate() {
                let x = geo.to_physical(xi, eta);
                let mut y = [0.0; 2];
                for ln in 0..P3_NODES {
                    y[0] += el[ln][0] * space.p3_vals[q][ln];
                    y[1] += el[ln][1] * space.p3_vals[q][ln];
                }
                let mut w = [0.0; 2];
                for n in 0..3 {
                    let f = model.eval_mode(n, x, y);
                    w[0] += incr[n] * f[0];
                    w[1] += incr[n] * f[1];
                }
                let scale = space.quad.weights[q] * geo.det;
                for ln in 0..P3_NODES {
                    let dof = space.vel_scalar_dofs[t][ln];
                    let k = space.free_scalar_index[dof];
                    if k != usize::MAX {
                        direct[2 * k] += scale * w[0] * space.p3_vals[q][ln];
                        direct[2 * k + 1] += scale * w[1] * space.p3_vals[q][ln];
                    }
                }
            }
        }
        let tabulated = table.load(&space, &u, &incr);
        for (a, b) in tabulated.vals.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14 + 1e-12 * b.abs());
        }
    }

    #[test]
    fn ito_isometry_on_coefficient_norm() {
        // E|Σ_n Δβ_n L_n|² = τ Σ_n |L_n|² holds in any fixed quadratic norm
        // of the load coefficients; the projected L² version is exercised in
        // the acceptance suite with the full mass geometry.
        let space = build_space(&build_polygon_disk_mesh(8).unwrap()).unwrap();
        let model = default_model(4, 0.9).unwrap();
        let table = model.tabulate(&space);
        let u = crate::spaces::interpolate_velocity(&space, |p| [p[1], -p[0]]);
        let tau = 0.02;

        let mut per_mode = 0.0;
        for n in 0..4 {
            let mut e = [0.0; 4];
            e[n] = 1.0;
            let l = table.load(&space, &u, &e);
            per_mode += l.vals.iter().map(|v| v * v).sum::<f64>();
        }
        let expect = tau * per_mode;

        let m_samples = 400;
        let mut vals = Vec::with_capacity(m_samples);
        for rep in 0..m_samples {
            let incr: Vec<f64> = (0..4)
                .map(|n| tau.sqrt() * counter_gaussian(77, rep as u64, n as u64))
                .collect();
            let l = table.load(&space, &u, &incr);
            vals.push(l.vals.iter().map(|v| v * v).sum::<f64>());
        }
        let mean: f64 = vals.iter().sum::<f64>() / m_samples as f64;
        let var: f64 =
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m_samples as f64 - 1.0);
        let se = (var / m_samples as f64).sqrt();
        assert!(
            (mean - expect).abs() < 5.0 * se,
            "mean {mean:.6e}, expect {expect:.6e}, SE {se:.3e}"
        );
    }

    #[test]
    fn lipschitz_bound_in_l2() {
        // Mirrors the global Lipschitz property of the diffusion operator:
        // Σ_n ||f_n(·,u) - f_n(·,v)||² <= C_F² ||u - v||² with margin.
        let space = build_space(&build_unit_square_mesh(2)).unwrap();
        let model = default_model(8, 0.7).unwrap();
        let u = crate::spaces::interpolate_velocity(&space, |p| {
            [(2.0 * p[0]).sin() * p[1], p[0] - p[1] * p[1]]
        });
        let v = crate::spaces::interpolate_velocity(&space, |p| {
            [-p[1] * p[1], (3.0 * p[1]).cos() * p[0]]
        });

        let mut sum = 0.0;
        for t in 0..space.mesh.n_triangles() {
            let elu = space.element_velocity(&u, t);
            let elv = space.element_velocity(&v, t);
            let geo = space.mesh.geometry(t);
            for (q, &[xi, eta]) in space.quad.points.iter().enumerate() {
                let x = geo.to_physical(xi, eta);
                let mut yu = [0.0; 2];
                let mut yv = [0.0; 2];
                for ln in 0..P3_NODES {
                    yu[0] += elu[ln][0] * space.p3_vals[q][ln];
                    yu[1] += elu[ln][1] * space.p3_vals[q][ln];
                    yv[0] += elv[ln][0] * space.p3_vals[q][ln];
                    yv[1] += elv[ln][1] * space.p3_vals[q][ln];
                }
                let mut diff_sq = 0.0;
                for n in 0..model.n_modes {
                    let fu = model.eval_mode(n, x, yu);
                    let fv = model.eval_mode(n, x, yv);
                    diff_sq += (fu[0] - fv[0]).powi(2) + (fu[1] - fv[1]).powi(2);
                }
                sum += space.quad.weights[q] * geo.det * diff_sq;
            }
        }

        let mut diff = u.clone();
        for (d, w) in diff.coeffs.iter_mut().zip(&v.coeffs) {
            *d -= w;
        }
        let dist = l2_norm(&space, &diff);
        assert!(
            sum <= model.c_f * model.c_f * dist * dist * (1.0 + 1e-6),
            "sum {sum:.6e} vs bound {:.6e}",
            model.c_f * model.c_f * dist * dist
        );
    }
}
