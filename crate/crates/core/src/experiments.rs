//! Monte Carlo convergence laboratory: pathwise-uniform errors on one mesh
//! or across nested meshes, coupled temporal and spatial refinement
//! studies, local-set filters, slope fits, exceedance curves, and
//! deterministic tabular output.
//!
//! Coupling discipline: every study derives all of a sample's runs from a
//! single counter-based Brownian path, so refinement levels see the same
//! realization. Parallel aggregation is order-preserving (indexed rayon
//! collect, then sequential reduction), so results are byte-identical for
//! any worker count.

use std::io;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::elements::{p3_eval, P3_NODES};
use crate::manufactured::{disk_vortex, stream_velocity};
use crate::mesh::{refine_uniform, Mesh};
use crate::noise::{coarsen_path, sample_path, NoiseError, NoiseModel};
use crate::scheme::{run_trajectory_with_path, SchemeConfig, SchemeError, Trajectory};
use crate::spaces::{build_space, l2_norm, SpaceError, TaylorHoodSpace, VelocityVector};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("study configuration: {0}")]
    Config(String),
    #[error("trajectory grids misaligned: {0}")]
    Misaligned(String),
}

/// Initial velocity fields the studies accept; plain function pointers so
/// samples can be dispatched across workers without captures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialData {
    /// Quartic stream-function vortex on the unit square.
    SquareStream,
    /// Solid-body-like vortex vanishing on the unit circle.
    DiskVortex,
    Zero,
}

impl InitialData {
    pub fn eval(self) -> fn([f64; 2]) -> [f64; 2] {
        match self {
            InitialData::SquareStream => stream_velocity,
            InitialData::DiskVortex => disk_vortex,
            InitialData::Zero => |_| [0.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitialData::SquareStream => "square-stream",
            InitialData::DiskVortex => "disk-vortex",
            InitialData::Zero => "zero",
        }
    }
}

/// Stride aligning `b`'s time grid onto `a`'s; `b` must refine `a`.
fn alignment(a: &Trajectory, b: &Trajectory) -> Result<usize, ExperimentError> {
    if a.config.steps == 0 || b.config.steps % a.config.steps != 0 {
        return Err(ExperimentError::Misaligned(format!(
            "{} steps do not divide {}",
            a.config.steps, b.config.steps
        )));
    }
    if (a.config.t_final - b.config.t_final).abs() > 1e-12 * a.config.t_final.abs() {
        return Err(ExperimentError::Misaligned(format!(
            "final times {} vs {}",
            a.config.t_final, b.config.t_final
        )));
    }
    Ok(b.config.steps / a.config.steps)
}

/// max over shared times j = 1..J of ‖a_j − b_{j·stride}‖_{𝕃²}, both
/// trajectories living on the same space.
pub fn pathwise_uniform_error(
    space: &TaylorHoodSpace,
    a: &Trajectory,
    b: &Trajectory,
) -> Result<f64, ExperimentError> {
    if a.space_id != space.id() || b.space_id != space.id() {
        return Err(ExperimentError::Misaligned(
            "trajectories from another space".into(),
        ));
    }
    let stride = alignment(a, b)?;
    let mut diff = VelocityVector::zero(space);
    let mut worst = 0.0f64;
    for j in 1..=a.config.steps {
        let fine = &b.snapshots[j * stride].coeffs;
        for (d, (x, y)) in diff
            .coeffs
            .iter_mut()
            .zip(a.snapshots[j].coeffs.iter().zip(fine))
        {
            *d = x - y;
        }
        worst = worst.max(l2_norm(space, &diff));
    }
    Ok(worst)
}

/// L² distance between fields on nested meshes, integrated with the fine
/// space's quadrature. `ancestors[t]` is the coarse triangle containing
/// fine triangle `t`; on nested refinements the coarse field restricted to
/// a fine element is still cubic, so the rule is exact for the difference.
pub fn cross_mesh_l2_error(
    coarse_space: &TaylorHoodSpace,
    coarse: &VelocityVector,
    fine_space: &TaylorHoodSpace,
    fine: &VelocityVector,
    ancestors: &[usize],
) -> f64 {
    assert_eq!(
        ancestors.len(),
        fine_space.mesh.n_triangles(),
        "ancestor map length"
    );
    let nq = fine_space.quad.len();
    let mut total = 0.0;
    for t in 0..fine_space.mesh.n_triangles() {
        let tc = ancestors[t];
        let geo_f = fine_space.mesh.geometry(t);
        let geo_c = coarse_space.mesh.geometry(tc);
        let el_f = fine_space.element_velocity(fine, t);
        let el_c = coarse_space.element_velocity(coarse, tc);
        for q in 0..nq {
            let vals_f = &fine_space.p3_vals[q];
            let mut vf = [0.0; 2];
            for ln in 0..P3_NODES {
                vf[0] += el_f[ln][0] * vals_f[ln];
                vf[1] += el_f[ln][1] * vals_f[ln];
            }
            let [xi, eta] = fine_space.quad.points[q];
            let p = geo_f.to_physical(xi, eta);
            let bc = geo_c.barycentric(p);
            debug_assert!(
                bc.iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c)),
                "fine point left its ancestor: {bc:?}"
            );
            let (vals_c, _) = p3_eval(bc[1], bc[2]);
            let mut vc = [0.0; 2];
            for ln in 0..P3_NODES {
                vc[0] += el_c[ln][0] * vals_c[ln];
                vc[1] += el_c[ln][1] * vals_c[ln];
            }
            let dx = vf[0] - vc[0];
            let dy = vf[1] - vc[1];
            total += fine_space.quad.weights[q] * geo_f.det * (dx * dx + dy * dy);
        }
    }
    total.sqrt()
}

/// Cross-mesh pathwise-uniform error: `a` on the coarse space, `b` on the
/// fine space, grids aligned by step-count ratio.
pub fn pathwise_uniform_error_cross(
    coarse_space: &TaylorHoodSpace,
    a: &Trajectory,
    fine_space: &TaylorHoodSpace,
    b: &Trajectory,
    ancestors: &[usize],
) -> Result<f64, ExperimentError> {
    if a.space_id != coarse_space.id() || b.space_id != fine_space.id() {
        return Err(ExperimentError::Misaligned(
            "trajectories from other spaces".into(),
        ));
    }
    let stride = alignment(a, b)?;
    let mut worst = 0.0f64;
    for j in 1..=a.config.steps {
        let err = cross_mesh_l2_error(
            coarse_space,
            &a.snapshots[j],
            fine_space,
            &b.snapshots[j * stride],
            ancestors,
        );
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Nested mesh hierarchy with ancestor maps from the finest (reference)
/// level down to every coarser level.
pub struct RefinementLadder {
    spaces: Vec<TaylorHoodSpace>,
    /// to_level[l][t] = level-l ancestor of reference triangle t.
    to_level: Vec<Vec<usize>>,
}

/// Build `extra_levels` uniform refinements above the base mesh; the last
/// level is the reference.
pub fn build_ladder(base: &Mesh, extra_levels: usize) -> Result<RefinementLadder, ExperimentError> {
    let mut meshes = vec![base.clone()];
    for _ in 0..extra_levels {
        meshes.push(refine_uniform(meshes.last().expect("nonempty ladder")));
    }
    let top = meshes.len() - 1;
    let n_top = meshes[top].n_triangles();
    let mut to_level = Vec::with_capacity(top + 1);
    for l in 0..=top {
        let mut map: Vec<usize> = (0..n_top).collect();
        for k in ((l + 1)..=top).rev() {
            let parent = meshes[k]
                .parent
                .as_ref()
                .expect("refined mesh carries parents");
            for m in map.iter_mut() {
                *m = parent[*m];
            }
        }
        to_level.push(map);
    }
    let spaces = meshes
        .iter()
        .map(build_space)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RefinementLadder { spaces, to_level })
}

impl RefinementLadder {
    /// Total level count, reference included.
    pub fn n_levels(&self) -> usize {
        self.spaces.len()
    }

    pub fn space(&self, level: usize) -> &TaylorHoodSpace {
        &self.spaces[level]
    }

    pub fn reference(&self) -> &TaylorHoodSpace {
        self.spaces.last().expect("nonempty ladder")
    }

    /// Ancestor map from reference triangles to level `level`.
    pub fn ancestors(&self, level: usize) -> &[usize] {
        &self.to_level[level]
    }

    pub fn h(&self, level: usize) -> f64 {
        self.spaces[level].mesh.h
    }
}

/// Ordinary least squares of log₂(error) on log₂(parameter). The slope is
/// the observed order when the parameter is h or τ. Requires three levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest |fit − data| in log₂ units.
    pub max_residual: f64,
}

pub fn fit_log2_slope(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    if xs
        .iter()
        .chain(ys.iter())
        .any(|&v| !(v > 0.0) || !v.is_finite())
    {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.log2()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - (slope * x + intercept)).abs())
        .fold(0.0, f64::max);
    Some(SlopeFit {
        slope,
        intercept,
        max_residual,
    })
}

/// One sample's outcome at one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub seed: u64,
    /// Pathwise-uniform error against the coupled reference.
    pub error: f64,
    /// max_j ‖Y_j‖_{𝕃²} along this level's run.
    pub max_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: usize,
    pub steps: usize,
    pub tau: f64,
    pub h: f64,
    /// RMS over successful samples (NaN when none succeeded).
    pub rms_error: f64,
    pub samples: Vec<SampleRecord>,
    pub failures: Vec<(u64, String)>,
}

impl LevelResult {
    fn finish(mut self) -> Self {
        let n = self.samples.len();
        self.rms_error = if n == 0 {
            f64::NAN
        } else {
            (self.samples.iter().map(|r| r.error * r.error).sum::<f64>() / n as f64).sqrt()
        };
        self
    }
}

/// Norm record of one sample's reference run, for local-set filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceNorms {
    pub seed: u64,
    pub max_l2: f64,
    /// max_j ‖∇Y_j‖, the gradient surrogate for the regularity bound.
    pub max_h1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub levels: Vec<LevelResult>,
    pub reference_norms: Vec<ReferenceNorms>,
    pub fit: Option<SlopeFit>,
    /// Which parameter the fit ran against: "tau" or "h".
    pub fit_parameter: &'static str,
}

impl ErrorStats {
    fn fit_levels(levels: &[LevelResult], parameter: &'static str) -> Option<SlopeFit> {
        let usable: Vec<&LevelResult> = levels
            .iter()
            .filter(|l| l.rms_error.is_finite() && l.rms_error > 0.0)
            .collect();
        let xs: Vec<f64> = usable
            .iter()
            .map(|l| if parameter == "tau" { l.tau } else { l.h })
            .collect();
        let ys: Vec<f64> = usable.iter().map(|l| l.rms_error).collect();
        fit_log2_slope(&xs, &ys)
    }

    pub fn total_failures(&self) -> usize {
        self.levels.iter().map(|l| l.failures.len()).sum()
    }
}

/// Temporal refinement study on one mesh: per sample, one fine reference
/// path drives the reference run and, coarsened, every level run.
#[derive(Debug, Clone)]
pub struct TemporalStudy {
    /// Shared scheme policy; `steps` is taken from the levels instead.
    pub scheme: SchemeConfig,
    /// Step counts of the studied levels, ascending.
    pub level_steps: Vec<usize>,
    pub reference_steps: usize,
    pub samples: usize,
    pub first_seed: u64,
}

impl TemporalStudy {
    fn validate(&self) -> Result<(), ExperimentError> {
        if self.level_steps.is_empty() || self.samples == 0 {
            return Err(ExperimentError::Config(
                "need at least one level and one sample".into(),
            ));
        }
        if self.level_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::Config("level steps must ascend".into()));
        }
        let finest = *self.level_steps.last().expect("nonempty");
        if self.reference_steps < 4 * finest {
            return Err(ExperimentError::Config(format!(
                "reference {} steps is not >= 4x the finest level {}",
                self.reference_steps, finest
            )));
        }
        for &steps in &self.level_steps {
            if self.reference_steps % steps != 0 {
                return Err(ExperimentError::Config(format!(
                    "level {steps} does not divide reference {}",
                    self.reference_steps
                )));
            }
        }
        Ok(())
    }
}

struct SeedOutcome {
    seed: u64,
    reference: Result<ReferenceNorms, String>,
    levels: Vec<Result<SampleRecord, String>>,
}

fn temporal_sample(
    space: &TaylorHoodSpace,
    study: &TemporalStudy,
    model: &NoiseModel,
    y0: InitialData,
    seed: u64,
) -> SeedOutcome {
    let ref_cfg = SchemeConfig {
        steps: study.reference_steps,
        ..study.scheme.clone()
    };
    let path = sample_path(seed, study.reference_steps, model.n_modes, ref_cfg.tau());
    let reference = match run_trajectory_with_path(space, &ref_cfg, model, seed, &path, y0.eval()) {
        Ok(t) => t,
        Err(e) => {
            let msg = format!("reference: {e}");
            return SeedOutcome {
                seed,
                reference: Err(msg.clone()),
                levels: vec![Err(msg); study.level_steps.len()],
            };
        }
    };
    let norms = ReferenceNorms {
        seed,
        max_l2: reference.max_l2(),
        max_h1: reference.max_h1(),
    };
    let levels = study
        .level_steps
        .iter()
        .map(|&steps| {
            let coarse_path =
                coarsen_path(&path, study.reference_steps / steps).map_err(|e| e.to_string())?;
            let cfg = SchemeConfig {
                steps,
                ..study.scheme.clone()
            };
            let traj = run_trajectory_with_path(space, &cfg, model, seed, &coarse_path, y0.eval())
                .map_err(|e| e.to_string())?;
            let error =
                pathwise_uniform_error(space, &traj, &reference).map_err(|e| e.to_string())?;
            Ok(SampleRecord {
                seed,
                error,
                max_l2: traj.max_l2(),
            })
        })
        .collect();
    SeedOutcome {
        seed,
        reference: Ok(norms),
        levels,
    }
}

pub fn temporal_study(
    space: &TaylorHoodSpace,
    study: &TemporalStudy,
    model: &NoiseModel,
    y0: InitialData,
) -> Result<ErrorStats, ExperimentError> {
    study.validate()?;
    let seeds: Vec<u64> = (0..study.samples as u64)
        .map(|i| study.first_seed + i)
        .collect();
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| temporal_sample(space, study, model, y0, seed))
        .collect();
    Ok(aggregate(
        &outcomes,
        study
            .level_steps
            .iter()
            .enumerate()
            .map(|(li, &steps)| LevelResult {
                level: li,
                steps,
                tau: study.scheme.t_final / steps as f64,
                h: space.mesh.h,
                rms_error: f64::NAN,
                samples: Vec::new(),
                failures: Vec::new(),
            }),
        "tau",
    ))
}

fn aggregate(
    outcomes: &[SeedOutcome],
    shells: impl Iterator<Item = LevelResult>,
    fit_parameter: &'static str,
) -> ErrorStats {
    let mut levels: Vec<LevelResult> = shells.collect();
    for outcome in outcomes {
        for (li, result) in outcome.levels.iter().enumerate() {
            match result {
                Ok(rec) => levels[li].samples.push(rec.clone()),
                Err(msg) => levels[li].failures.push((outcome.seed, msg.clone())),
            }
        }
    }
    let levels: Vec<LevelResult> = levels.into_iter().map(LevelResult::finish).collect();
    let reference_norms: Vec<ReferenceNorms> = outcomes
        .iter()
        .filter_map(|o| o.reference.clone().ok())
        .collect();
    let fit = ErrorStats::fit_levels(&levels, fit_parameter);
    ErrorStats {
        levels,
        reference_norms,
        fit,
        fit_parameter,
    }
}

/// Spatial refinement study on a ladder: per sample, one Brownian path at
/// the shared τ drives the reference (finest) run and every studied level.
#[derive(Debug, Clone)]
pub struct SpatialStudy {
    /// Scheme policy; `steps` is the fixed step count on every level.
    pub scheme: SchemeConfig,
    /// Number of studied levels, starting at ladder level 0; the ladder's
    /// last level is the reference and must lie strictly above them.
    pub studied_levels: usize,
    pub samples: usize,
    pub first_seed: u64,
}

fn spatial_sample(
    ladder: &RefinementLadder,
    study: &SpatialStudy,
    model: &NoiseModel,
    y0: InitialData,
    seed: u64,
) -> SeedOutcome {
    let cfg = study.scheme.clone();
    let path = sample_path(seed, cfg.steps, model.n_modes, cfg.tau());
    let reference_space = ladder.reference();
    let reference =
        match run_trajectory_with_path(reference_space, &cfg, model, seed, &path, y0.eval()) {
            Ok(t) => t,
            Err(e) => {
                let msg = format!("reference: {e}");
                return SeedOutcome {
                    seed,
                    reference: Err(msg.clone()),
                    levels: vec![Err(msg); study.studied_levels],
                };
            }
        };
    let norms = ReferenceNorms {
        seed,
        max_l2: reference.max_l2(),
        max_h1: reference.max_h1(),
    };
    let levels = (0..study.studied_levels)
        .map(|l| {
            let space = ladder.space(l);
            let traj = run_trajectory_with_path(space, &cfg, model, seed, &path, y0.eval())
                .map_err(|e| e.to_string())?;
            let error = pathwise_uniform_error_cross(
                space,
                &traj,
                reference_space,
                &reference,
                ladder.ancestors(l),
            )
            .map_err(|e| e.to_string())?;
            Ok(SampleRecord {
                seed,
                error,
                max_l2: traj.max_l2(),
            })
        })
        .collect();
    SeedOutcome {
        seed,
        reference: Ok(norms),
        levels,
    }
}

pub fn spatial_study(
    ladder: &RefinementLadder,
    study: &SpatialStudy,
    model: &NoiseModel,
    y0: InitialData,
) -> Result<ErrorStats, ExperimentError> {
    if study.studied_levels == 0 || study.samples == 0 {
        return Err(ExperimentError::Config(
            "need at least one level and one sample".into(),
        ));
    }
    if study.studied_levels >= ladder.n_levels() {
        return Err(ExperimentError::Config(format!(
            "{} studied levels need a ladder with a strictly finer reference ({} levels present)",
            study.studied_levels,
            ladder.n_levels()
        )));
    }
    study.scheme.validate().map_err(ExperimentError::from)?;
    let seeds: Vec<u64> = (0..study.samples as u64)
        .map(|i| study.first_seed + i)
        .collect();
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| spatial_sample(ladder, study, model, y0, seed))
        .collect();
    Ok(aggregate(
        &outcomes,
        (0..study.studied_levels).map(|l| LevelResult {
            level: l,
            steps: study.scheme.steps,
            tau: study.scheme.tau(),
            h: ladder.h(l),
            rms_error: f64::NAN,
            samples: Vec::new(),
            failures: Vec::new(),
        }),
        "h",
    ))
}

/// Empirical local set: samples whose reference gradient surrogate stays
/// within `r_h` and whose level run stays within `r_h_tau` in 𝕃².
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSetFilter {
    pub r_h: f64,
    pub r_h_tau: f64,
    /// (seed, pass) aligned with the level samples it was built from.
    pub pass: Vec<(u64, bool)>,
}

pub fn local_set_filter(
    reference_norms: &[ReferenceNorms],
    level: &LevelResult,
    r_h: f64,
    r_h_tau: f64,
) -> LocalSetFilter {
    let pass = level
        .samples
        .iter()
        .map(|rec| {
            let reference_ok = reference_norms
                .iter()
                .find(|r| r.seed == rec.seed)
                .is_some_and(|r| r.max_h1 <= r_h);
            (rec.seed, reference_ok && rec.max_l2 <= r_h_tau)
        })
        .collect();
    LocalSetFilter { r_h, r_h_tau, pass }
}

impl LocalSetFilter {
    pub fn n_pass(&self) -> usize {
        self.pass.iter().filter(|(_, ok)| *ok).count()
    }
}

/// RMS error over passing samples; None when nothing passes.
pub fn filtered_rms(level: &LevelResult, filter: &LocalSetFilter) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (rec, (seed, ok)) in level.samples.iter().zip(&filter.pass) {
        debug_assert_eq!(rec.seed, *seed, "filter built from another level");
        if *ok {
            sum += rec.error * rec.error;
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Empirical tail P[error² / (h^α + τ^β) ≥ ε] on an ε grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceCurve {
    pub alpha: f64,
    pub beta: f64,
    pub h: f64,
    pub tau: f64,
    /// Ascending ε grid.
    pub epsilons: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub sample_count: usize,
}

pub fn exceedance_curve(
    errors: &[f64],
    h: f64,
    tau: f64,
    alpha: f64,
    beta: f64,
    epsilons: &[f64],
) -> Result<ExceedanceCurve, ExperimentError> {
    if !(2.0 < alpha && alpha < 3.0) || !(0.0 < beta && beta < 1.0) {
        return Err(ExperimentError::Config(format!(
            "need alpha in (2,3) and beta in (0,1), got {alpha} / {beta}"
        )));
    }
    if errors.is_empty() || epsilons.is_empty() {
        return Err(ExperimentError::Config(
            "need samples and an epsilon grid".into(),
        ));
    }
    if !(h > 0.0) || !(tau > 0.0) {
        return Err(ExperimentError::Config("need positive h and tau".into()));
    }
    let denom = h.powf(alpha) + tau.powf(beta);
    let stats: Vec<f64> = errors.iter().map(|e| e * e / denom).collect();
    let mut eps = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let probabilities: Vec<f64> = eps
        .iter()
        .map(|&threshold| stats.iter().filter(|&&s| s >= threshold).count() as f64 / n)
        .collect();
    debug_assert!(probabilities.windows(2).all(|w| w[0] >= w[1]));
    Ok(ExceedanceCurve {
        alpha,
        beta,
        h,
        tau,
        epsilons: eps,
        probabilities,
        sample_count: errors.len(),
    })
}

/// Wilson 95% confidence interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    const Z: f64 = 1.959963984540054;
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = (Z / denom) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Tab-separated sample table: one row per (level, seed), failures included
/// with a status column. When local-set thresholds (r_h, r_h_tau) are given
/// the pass flag is emitted per row, else "-". Rows are emitted level-major,
/// seed-ascending, so reruns are byte-identical.
pub fn write_samples_table(
    path: &Path,
    stats: &ErrorStats,
    thresholds: Option<(f64, f64)>,
) -> io::Result<()> {
    let mut out = String::from("level\tseed\th\ttau\tstatus\terror\tmax_l2\tlocal_set\tnote\n");
    for level in &stats.levels {
        let filter = thresholds
            .map(|(r_h, r_h_tau)| local_set_filter(&stats.reference_norms, level, r_h, r_h_tau));
        for (i, rec) in level.samples.iter().enumerate() {
            let flag = match &filter {
                Some(f) => {
                    if f.pass[i].1 {
                        "pass"
                    } else {
                        "fail"
                    }
                }
                None => "-",
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\tok\t{}\t{}\t{}\t-\n",
                level.level,
                rec.seed,
                fmt_f64(level.h),
                fmt_f64(level.tau),
                fmt_f64(rec.error),
                fmt_f64(rec.max_l2),
                flag,
            ));
        }
        for (seed, msg) in &level.failures {
            let note: String = msg
                .chars()
                .map(|c| if c == '\t' || c == '\n' { ' ' } else { c })
                .collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\tfailed\tnan\tnan\t-\t{}\n",
                level.level,
                seed,
                fmt_f64(level.h),
                fmt_f64(level.tau),
                note,
            ));
        }
    }
    std::fs::write(path, out)
}

/// Key-value summary: per-level RMS and counts plus the fitted slope.
pub fn write_summary(path: &Path, stats: &ErrorStats) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("fit_parameter\t{}\n", stats.fit_parameter));
    out.push_str(&format!("levels\t{}\n", stats.levels.len()));
    for level in &stats.levels {
        out.push_str(&format!(
            "level\t{}\tsteps\t{}\th\t{}\ttau\t{}\trms\t{}\tok\t{}\tfailed\t{}\n",
            level.level,
            level.steps,
            fmt_f64(level.h),
            fmt_f64(level.tau),
            fmt_f64(level.rms_error),
            level.samples.len(),
            level.failures.len(),
        ));
    }
    match &stats.fit {
        Some(fit) => {
            out.push_str(&format!("slope\t{}\n", fmt_f64(fit.slope)));
            out.push_str(&format!("intercept\t{}\n", fmt_f64(fit.intercept)));
            out.push_str(&format!("max_residual\t{}\n", fmt_f64(fit.max_residual)));
        }
        None => out.push_str("slope\tnone\n"),
    }
    std::fs::write(path, out)
}
