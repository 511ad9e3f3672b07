//! Semi-implicit Euler time stepping: the drift (Stokes plus
//! skew-symmetrized convection) is implicit, the multiplicative noise is
//! explicit at the previous iterate. Each step solves
//!
//! ```text
//!   M(Y⁺ − Y) + τK Y⁺ + τN(Y⁺) + Bᵀq = Σ_n Δβ_n ⟨f_n(·, Y), v⟩
//!   B Y⁺ = 0,   eᵀq = 0
//! ```
//!
//! by damped Newton on the bordered saddle system; the step pressure is
//! φ = −q/τ. One symbolic factorization per space serves the initial
//! projection and every Newton iterate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::assembly::{
    assemble_mass, assemble_stiffness, convection_jacobian_pattern, convection_residual,
    convection_system, velocity_load, SparseOperator,
};
use crate::noise::{sample_path, BrownianPath, NoiseError, NoiseModel};
use crate::spaces::{
    h1_seminorm, l2_norm, DualVector, PressureVector, SpaceId, TaylorHoodSpace, VelocityVector,
};
use crate::stokes::{SaddleSolver, StokesError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("Newton stalled at step {step}: residual {residual:.3e} > {tol:.3e}")]
    NewtonDivergence {
        step: usize,
        residual: f64,
        tol: f64,
    },
    #[error(transparent)]
    Solver(#[from] StokesError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trajectory persistence: {0}")]
    Persistence(String),
}

/// Time discretization and nonlinear-solver policy. The step size is
/// always derived as `t_final / steps`; it is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub t_final: f64,
    pub steps: usize,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub max_halvings: usize,
    /// Test hook: with convection off the step is linear (Stokes only).
    pub convection_enabled: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            steps: 64,
            newton_tol: 1e-10,
            newton_max_iters: 25,
            max_halvings: 8,
            convection_enabled: true,
        }
    }
}

impl SchemeConfig {
    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        if !(self.t_final > 0.0) || self.steps == 0 {
            return Err(SchemeError::Config(format!(
                "need t_final > 0 and steps >= 1, got {} / {}",
                self.t_final, self.steps
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iters == 0 {
            return Err(SchemeError::Config("Newton policy must be positive".into()));
        }
        Ok(())
    }
}

/// Nonlinear-solver record for one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub newton_iters: usize,
    pub final_residual: f64,
    /// 1 + ‖M Y_j + noise‖, the scale the tolerance is relative to.
    pub rhs_scale: f64,
    pub divergence_norm: f64,
    pub halvings: usize,
    /// Matrix factorizations spent on this step; often 0 thanks to
    /// cross-step factor reuse.
    pub factorizations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub report: StepReport,
    pub l2: f64,
    pub h1: f64,
}

/// One realized discrete path: J+1 snapshots (index 0 is the projected
/// initial field) plus per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: SchemeConfig,
    pub space_id: SpaceId,
    pub mesh_hash: [u8; 32],
    pub seed: u64,
    pub snapshots: Vec<VelocityVector>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn final_state(&self) -> &VelocityVector {
        self.snapshots
            .last()
            .expect("at least the initial snapshot")
    }

    pub fn max_l2(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.l2).fold(0.0, f64::max)
    }

    pub fn max_h1(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.h1).fold(0.0, f64::max)
    }
}

fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stepping engine bound to one space: operator values cached in the
/// saddle emission layout [M | τK | τJ_G], one symbolic factorization.
///
/// Numeric factors persist across Newton iterations and across steps: the
/// velocity block M + τK + τJ(u) drifts only O(τ‖Δu‖) between iterates, so
/// stale factors keep converging linearly. They are rebuilt at the current
/// iterate whenever a correction stops cutting the residual by 4x or needs
/// damping, which recovers plain damped Newton.
pub struct Stepper<'a> {
    space: &'a TaylorHoodSpace,
    saddle: SaddleSolver,
    mass: SparseOperator,
    stiffness: SparseOperator,
    mass_values: Vec<f64>,
    stiffness_values: Vec<f64>,
    conv_len: usize,
    /// (τ, convection on) the current saddle factors were built for.
    factored_key: Option<(f64, bool)>,
}

impl<'a> Stepper<'a> {
    pub fn new(space: &'a TaylorHoodSpace) -> Result<Self, SchemeError> {
        let mass = assemble_mass(space);
        let stiffness = assemble_stiffness(space);
        let conv_pattern = convection_jacobian_pattern(space);
        let mut pattern = Vec::with_capacity(mass.nnz() + stiffness.nnz() + conv_pattern.len());
        pattern.extend(mass.entries().map(|(r, c, _)| (r, c)));
        pattern.extend(stiffness.entries().map(|(r, c, _)| (r, c)));
        pattern.extend_from_slice(&conv_pattern);
        let saddle = SaddleSolver::new(space, &pattern)?;
        let mass_values: Vec<f64> = mass.entries().map(|(_, _, v)| v).collect();
        let stiffness_values: Vec<f64> = stiffness.entries().map(|(_, _, v)| v).collect();
        Ok(Self {
            space,
            saddle,
            mass,
            stiffness,
            mass_values,
            stiffness_values,
            conv_len: conv_pattern.len(),
            factored_key: None,
        })
    }

    /// Velocity-block values M + τK + τJ in the fixed emission layout.
    fn velocity_block(&self, tau: f64, jacobian: Option<&[f64]>) -> Vec<f64> {
        let mut vals = Vec::with_capacity(
            self.mass_values.len() + self.stiffness_values.len() + self.conv_len,
        );
        vals.extend_from_slice(&self.mass_values);
        vals.extend(self.stiffness_values.iter().map(|v| tau * v));
        match jacobian {
            Some(j) => {
                debug_assert_eq!(j.len(), self.conv_len);
                vals.extend(j.iter().map(|v| tau * v));
            }
            None => vals.extend(std::iter::repeat(0.0).take(self.conv_len)),
        }
        vals
    }

    /// L² projection onto the divergence-free subspace (V = M).
    pub fn project_dual(&mut self, f: &DualVector) -> Result<VelocityVector, SchemeError> {
        let vals = self.velocity_block(0.0, None);
        self.saddle.factor(&vals)?;
        self.factored_key = None;
        let zeros = vec![0.0; self.space.n_pressure];
        let (coeffs, _, _) = self.saddle.solve(&f.vals, &zeros)?;
        Ok(VelocityVector {
            coeffs,
            space_id: self.space.id(),
        })
    }

    /// Residual blocks of the nonlinear step system at (u, q, λ).
    fn residual(
        &self,
        cfg: &SchemeConfig,
        tau: f64,
        u: &VelocityVector,
        q: &[f64],
        lambda: f64,
        rhs: &[f64],
    ) -> (Vec<f64>, Vec<f64>, f64) {
        let mut r_u: Vec<f64> = rhs.iter().map(|v| -v).collect();
        self.mass.matvec_add(&u.coeffs, &mut r_u, 1.0);
        self.stiffness.matvec_add(&u.coeffs, &mut r_u, tau);
        if cfg.convection_enabled {
            let conv = convection_residual(self.space, u);
            for (r, n) in r_u.iter_mut().zip(&conv.vals) {
                *r += tau * n;
            }
        }
        self.saddle
            .divergence
            .transpose_matvec_add(q, &mut r_u, 1.0);
        let mut r_p = self.saddle.divergence.matvec(&u.coeffs);
        for (r, e) in r_p.iter_mut().zip(&self.saddle.pressure_unit) {
            *r += e * lambda;
        }
        let r_l: f64 = q
            .iter()
            .zip(&self.saddle.pressure_unit)
            .map(|(a, b)| a * b)
            .sum();
        (r_u, r_p, r_l)
    }

    /// One semi-implicit step from `y_prev` under the given noise load.
    pub fn step(
        &mut self,
        cfg: &SchemeConfig,
        y_prev: &VelocityVector,
        noise_load: &DualVector,
    ) -> Result<(VelocityVector, PressureVector, StepReport), SchemeError> {
        let tau = cfg.tau();
        let mut rhs = self.mass.matvec(&y_prev.coeffs);
        for (r, w) in rhs.iter_mut().zip(&noise_load.vals) {
            *r += w;
        }
        let rhs_scale = 1.0 + euclidean(&rhs);
        let tol = cfg.newton_tol * rhs_scale;

        let mut u = y_prev.clone();
        let mut q = vec![0.0; self.space.n_pressure];
        let mut lambda = 0.0;
        let mut halvings = 0usize;
        let mut factorizations = 0usize;
        let key = (tau, cfg.convection_enabled);

        let norm3 = |a: &[f64], b: &[f64], c: f64| {
            (a.iter().map(|x| x * x).sum::<f64>() + b.iter().map(|x| x * x).sum::<f64>() + c * c)
                .sqrt()
        };

        let (mut r_u, mut r_p, mut r_l) = self.residual(cfg, tau, &u, &q, lambda, &rhs);
        let mut res_norm = norm3(&r_u, &r_p, r_l);

        for iter in 0..=cfg.newton_max_iters {
            if res_norm <= tol {
                let divergence_norm = euclidean(&self.saddle.divergence.matvec(&u.coeffs));
                let phi = PressureVector {
                    coeffs: q.iter().map(|v| -v / tau).collect(),
                    space_id: self.space.id(),
                };
                let report = StepReport {
                    newton_iters: iter,
                    final_residual: res_norm,
                    rhs_scale,
                    divergence_norm,
                    halvings,
                    factorizations,
                };
                return Ok((u, phi, report));
            }
            if iter == cfg.newton_max_iters {
                break;
            }

            let fresh = self.factored_key != Some(key);
            if fresh {
                let jacobian = if cfg.convection_enabled {
                    Some(convection_system(self.space, &u).1)
                } else {
                    None
                };
                let vals = self.velocity_block(tau, jacobian.as_deref());
                self.saddle.factor(&vals)?;
                self.factored_key = Some(key);
                factorizations += 1;
            }
            let neg_u: Vec<f64> = r_u.iter().map(|x| -x).collect();
            let neg_p: Vec<f64> = r_p.iter().map(|x| -x).collect();
            let (du, dq, dl) = self.saddle.solve_with_border(&neg_u, &neg_p, -r_l)?;

            // Damped line search: halve until the residual drops; keep the
            // smallest trial if it never does and let the outer loop decide.
            let mut scale = 1.0;
            for h in 0..=cfg.max_halvings {
                let trial_u = VelocityVector {
                    coeffs: u
                        .coeffs
                        .iter()
                        .zip(&du)
                        .map(|(x, d)| x + scale * d)
                        .collect(),
                    space_id: u.space_id,
                };
                let trial_q: Vec<f64> = q.iter().zip(&dq).map(|(x, d)| x + scale * d).collect();
                let trial_lambda = lambda + scale * dl;
                let (t_u, t_p, t_l) =
                    self.residual(cfg, tau, &trial_u, &trial_q, trial_lambda, &rhs);
                let trial_norm = norm3(&t_u, &t_p, t_l);
                if trial_norm < res_norm || h == cfg.max_halvings {
                    // A correction from stale factors must converge well
                    // undamped or finish the step; otherwise discard it and
                    // rebuild the factors at the current iterate.
                    let strong = trial_norm <= tol || (h == 0 && trial_norm <= 0.25 * res_norm);
                    if fresh || strong {
                        u = trial_u;
                        q = trial_q;
                        lambda = trial_lambda;
                        r_u = t_u;
                        r_p = t_p;
                        r_l = t_l;
                        res_norm = trial_norm;
                        halvings += h;
                    } else {
                        self.factored_key = None;
                    }
                    break;
                }
                scale *= 0.5;
            }
        }

        Err(SchemeError::NewtonDivergence {
            step: 0,
            residual: res_norm,
            tol,
        })
    }
}

/// Run the scheme from scratch: project y0, sample the path for this
/// (seed, steps, modes), step J times.
pub fn run_trajectory(
    space: &TaylorHoodSpace,
    cfg: &SchemeConfig,
    model: &NoiseModel,
    seed: u64,
    y0: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<Trajectory, SchemeError> {
    cfg.validate()?;
    let path = sample_path(seed, cfg.steps, model.n_modes, cfg.tau());
    run_trajectory_with_path(space, cfg, model, seed, &path, y0)
}

/// Run the scheme under an externally supplied (possibly coarsened) path.
/// This is the coupling entry point for refinement studies.
pub fn run_trajectory_with_path(
    space: &TaylorHoodSpace,
    cfg: &SchemeConfig,
    model: &NoiseModel,
    seed: u64,
    path: &BrownianPath,
    y0: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<Trajectory, SchemeError> {
    cfg.validate()?;
    if path.steps != cfg.steps || path.n_modes != model.n_modes {
        return Err(SchemeError::Config(format!(
            "path shape {}x{} does not match config {} steps x {} modes",
            path.steps, path.n_modes, cfg.steps, model.n_modes
        )));
    }
    if (path.tau() - cfg.tau()).abs() > 1e-12 * cfg.tau() {
        return Err(SchemeError::Config(format!(
            "path step {} vs config step {}",
            path.tau(),
            cfg.tau()
        )));
    }

    let table = model.tabulate(space);
    let mut stepper = Stepper::new(space)?;
    let initial = stepper.project_dual(&velocity_load(space, y0))?;

    let mut snapshots = Vec::with_capacity(cfg.steps + 1);
    let mut diagnostics = Vec::with_capacity(cfg.steps);
    snapshots.push(initial);
    for j in 0..cfg.steps {
        let y_prev = snapshots.last().expect("initial snapshot present");
        let load = table.load(space, y_prev, &path.increments_row(j));
        let (y_next, _phi, report) = match stepper.step(cfg, y_prev, &load) {
            Ok(out) => out,
            Err(SchemeError::NewtonDivergence { residual, tol, .. }) => {
                return Err(SchemeError::NewtonDivergence {
                    step: j,
                    residual,
                    tol,
                })
            }
            Err(other) => return Err(other),
        };
        diagnostics.push(StepDiagnostics {
            l2: l2_norm(space, &y_next),
            h1: h1_seminorm(space, &y_next),
            report,
        });
        snapshots.push(y_next);
    }
    Ok(Trajectory {
        config: cfg.clone(),
        space_id: space.id(),
        mesh_hash: space.mesh.content_hash(),
        seed,
        snapshots,
        diagnostics,
    })
}

/// Reference run at `k`-times finer step on the same mesh and the same
/// underlying Brownian motion: coarsening its path by `k` reproduces the
/// path a `cfg`-resolution run would be coupled to.
pub fn run_reference_temporal(
    space: &TaylorHoodSpace,
    cfg: &SchemeConfig,
    model: &NoiseModel,
    seed: u64,
    y0: impl Fn([f64; 2]) -> [f64; 2],
    k: usize,
) -> Result<Trajectory, SchemeError> {
    if k < 2 {
        return Err(SchemeError::Config(format!("refinement factor {k} < 2")));
    }
    let fine = SchemeConfig {
        steps: cfg.steps * k,
        ..cfg.clone()
    };
    run_trajectory(space, &fine, model, seed, y0)
}

const TRAJECTORY_MAGIC: &[u8; 8] = b"SNSETRAJ";
const TRAJECTORY_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> SchemeError {
    SchemeError::Persistence(e.to_string())
}

/// Write a trajectory container: header (mesh hash, config, seed) plus
/// flat little-endian coefficient and diagnostic arrays.
pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<(), SchemeError> {
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let wu64 = |w: &mut BufWriter<File>, v: u64| w.write_all(&v.to_le_bytes()).map_err(io_err);
    let wf64 = |w: &mut BufWriter<File>, v: f64| w.write_all(&v.to_le_bytes()).map_err(io_err);

    w.write_all(TRAJECTORY_MAGIC).map_err(io_err)?;
    w.write_all(&TRAJECTORY_VERSION.to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&traj.mesh_hash).map_err(io_err)?;
    wu64(&mut w, traj.seed)?;
    wf64(&mut w, traj.config.t_final)?;
    wu64(&mut w, traj.config.steps as u64)?;
    wf64(&mut w, traj.config.newton_tol)?;
    wu64(&mut w, traj.config.newton_max_iters as u64)?;
    wu64(&mut w, traj.config.max_halvings as u64)?;
    wu64(&mut w, traj.config.convection_enabled as u64)?;

    let n_coeffs = traj.snapshots.first().map_or(0, |s| s.coeffs.len());
    wu64(&mut w, traj.snapshots.len() as u64)?;
    wu64(&mut w, n_coeffs as u64)?;
    for snap in &traj.snapshots {
        for &c in &snap.coeffs {
            wf64(&mut w, c)?;
        }
    }
    wu64(&mut w, traj.diagnostics.len() as u64)?;
    for d in &traj.diagnostics {
        wu64(&mut w, d.report.newton_iters as u64)?;
        wf64(&mut w, d.report.final_residual)?;
        wf64(&mut w, d.report.rhs_scale)?;
        wf64(&mut w, d.report.divergence_norm)?;
        wu64(&mut w, d.report.halvings as u64)?;
        wu64(&mut w, d.report.factorizations as u64)?;
        wf64(&mut w, d.l2)?;
        wf64(&mut w, d.h1)?;
    }
    w.flush().map_err(io_err)
}

/// Reload a trajectory; the mesh hash must match the supplied space.
/// Coefficients round-trip bit-exactly.
pub fn load_trajectory(path: &Path, space: &TaylorHoodSpace) -> Result<Trajectory, SchemeError> {
    let file = File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(SchemeError::Persistence("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    if u32::from_le_bytes(b4) != TRAJECTORY_VERSION {
        return Err(SchemeError::Persistence("unsupported version".into()));
    }
    let mut mesh_hash = [0u8; 32];
    r.read_exact(&mut mesh_hash).map_err(io_err)?;
    if mesh_hash != space.mesh.content_hash() {
        return Err(SchemeError::Persistence(
            "mesh hash does not match the supplied space".into(),
        ));
    }
    let mut b8 = [0u8; 8];
    let mut ru64 = |r: &mut BufReader<File>| -> Result<u64, SchemeError> {
        r.read_exact(&mut b8).map_err(io_err)?;
        Ok(u64::from_le_bytes(b8))
    };
    let seed = ru64(&mut r)?;
    let t_final = f64::from_bits(ru64(&mut r)?);
    let steps = ru64(&mut r)? as usize;
    let newton_tol = f64::from_bits(ru64(&mut r)?);
    let newton_max_iters = ru64(&mut r)? as usize;
    let max_halvings = ru64(&mut r)? as usize;
    let convection_enabled = ru64(&mut r)? != 0;
    let config = SchemeConfig {
        t_final,
        steps,
        newton_tol,
        newton_max_iters,
        max_halvings,
        convection_enabled,
    };

    let n_snapshots = ru64(&mut r)? as usize;
    let n_coeffs = ru64(&mut r)? as usize;
    if n_coeffs != space.n_vel_free {
        return Err(SchemeError::Persistence(format!(
            "{n_coeffs} coefficients per snapshot, space has {}",
            space.n_vel_free
        )));
    }
    let mut snapshots = Vec::with_capacity(n_snapshots);
    for _ in 0..n_snapshots {
        let mut coeffs = Vec::with_capacity(n_coeffs);
        for _ in 0..n_coeffs {
            coeffs.push(f64::from_bits(ru64(&mut r)?));
        }
        snapshots.push(VelocityVector {
            coeffs,
            space_id: space.id(),
        });
    }
    let n_diag = ru64(&mut r)? as usize;
    let mut diagnostics = Vec::with_capacity(n_diag);
    for _ in 0..n_diag {
        let newton_iters = ru64(&mut r)? as usize;
        let final_residual = f64::from_bits(ru64(&mut r)?);
        let rhs_scale = f64::from_bits(ru64(&mut r)?);
        let divergence_norm = f64::from_bits(ru64(&mut r)?);
        let halvings = ru64(&mut r)? as usize;
        let factorizations = ru64(&mut r)? as usize;
        let l2 = f64::from_bits(ru64(&mut r)?);
        let h1 = f64::from_bits(ru64(&mut r)?);
        diagnostics.push(StepDiagnostics {
            report: StepReport {
                newton_iters,
                final_residual,
                rhs_scale,
                divergence_norm,
                halvings,
                factorizations,
            },
            l2,
            h1,
        });
    }
    Ok(Trajectory {
        config,
        space_id: space.id(),
        mesh_hash,
        seed,
        snapshots,
        diagnostics,
    })
}
