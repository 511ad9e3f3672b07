//! Declarative experiment manifest: one flat TOML file, unknown keys
//! rejected, command-line flags override single fields. Everything random
//! flows from the seeds recorded here; nothing reads clocks or entropy.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snse2d::experiments::InitialData;
use snse2d::mesh::{build_polygon_disk_mesh, build_unit_square_mesh, refine_uniform, Mesh};
use snse2d::noise::{default_model, divergence_free_model, NoiseModel, StreamDomain};
use snse2d::scheme::SchemeConfig;

use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Square,
    PolygonDisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyChoice {
    /// Trigonometric additive modes.
    Trig,
    /// Divergence-free stream-function modes adapted to the domain.
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartChoice {
    /// Vortex vanishing on the unit circle.
    Vortex,
    /// Quartic stream-function field on the unit square.
    Stream,
    /// Start from rest.
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Single,
    Temporal,
    Spatial,
    Exceedance,
}

fn default_seed_first() -> u64 {
    1
}
fn default_one() -> usize {
    1
}
fn default_pairs() -> usize {
    2
}
fn default_alpha() -> f64 {
    2.5
}
fn default_beta() -> f64 {
    0.5
}
fn default_start() -> StartChoice {
    StartChoice::Rest
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// The experiment manifest. Field names are the TOML keys.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Domain: "square" or "polygon-disk".
    pub domain: Domain,
    /// Square: subdivisions per side. Disk: boundary segment count (>= 8).
    pub mesh_level: usize,
    /// Uniform refinements applied on top of the base mesh.
    #[serde(default)]
    pub refinements: usize,
    pub t_final: f64,
    /// Step count J of the base run.
    pub steps: usize,
    /// Diffusion family: "trig" or "stream".
    pub noise_family: FamilyChoice,
    /// Truncation N of the noise expansion.
    pub n_modes: usize,
    pub c_scale: f64,
    #[serde(default = "default_start")]
    pub initial_data: StartChoice,
    #[serde(default = "default_seed_first")]
    pub seed_first: u64,
    /// Number of consecutive seeds (Monte Carlo sample count).
    #[serde(default = "default_one")]
    pub seed_count: usize,
    /// Optional study tag; when present it must match the subcommand.
    #[serde(default)]
    pub study: Option<StudyKind>,
    /// Temporal study: studied step counts, ascending. Defaults to
    /// {J, 2J, 4J}.
    #[serde(default)]
    pub level_steps: Option<Vec<usize>>,
    /// Temporal study: reference step count. Defaults to 16x the finest
    /// studied level.
    #[serde(default)]
    pub reference_steps: Option<usize>,
    /// Spatial study: refinements past the base mesh; the last level is the
    /// reference.
    #[serde(default = "default_one")]
    pub extra_levels: usize,
    /// Spatial study: number of studied levels below the reference.
    #[serde(default = "default_one")]
    pub studied_levels: usize,
    /// Exceedance normalization exponents.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Exceedance threshold grid; derived from the data when omitted.
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    /// Exceedance: number of nested (h, tau) pairs.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_one")]
    pub workers: usize,
}

/// Flag overrides; flags win over file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Half-open seed range A..B.
    pub seeds: Option<(u64, u64)>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub level: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed_first = seed;
            self.seed_count = 1;
        }
        if let Some((a, b)) = o.seeds {
            self.seed_first = a;
            self.seed_count = (b - a) as usize;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(l) = o.level {
            self.mesh_level = l;
        }
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let fail = |m: String| Err(AppError::Config(m));
        match self.domain {
            Domain::Square if self.mesh_level < 1 => {
                return fail("square mesh-level must be at least 1".into())
            }
            Domain::PolygonDisk if self.mesh_level < 8 => {
                return fail("polygon-disk mesh-level must be at least 8".into())
            }
            _ => {}
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return fail(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.steps == 0 {
            return fail("steps must be at least 1".into());
        }
        if self.n_modes == 0 {
            return fail("n_modes must be at least 1".into());
        }
        if !(self.c_scale >= 0.0 && self.c_scale.is_finite()) {
            return fail(format!(
                "c_scale must be finite and nonnegative, got {}",
                self.c_scale
            ));
        }
        if self.seed_count == 0 {
            return fail("seed_count must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if let Some(steps) = &self.level_steps {
            if steps.is_empty() || steps.windows(2).any(|w| w[1] <= w[0]) {
                return fail("level_steps must be nonempty and strictly ascending".into());
            }
        }
        if self.studied_levels == 0 || self.studied_levels > self.extra_levels {
            return fail(format!(
                "studied_levels must lie in 1..={} (extra_levels)",
                self.extra_levels
            ));
        }
        if !(2.0 < self.alpha && self.alpha < 3.0) {
            return fail(format!("alpha must lie in (2, 3), got {}", self.alpha));
        }
        if !(0.0 < self.beta && self.beta < 1.0) {
            return fail(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if let Some(eps) = &self.epsilons {
            if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
                return fail("epsilons must be positive and nonempty".into());
            }
        }
        if self.pairs == 0 || self.pairs > 8 {
            return fail("pairs must lie in 1..=8".into());
        }
        Ok(())
    }

    /// Check the optional study tag against the subcommand actually run.
    pub fn check_study(&self, kind: StudyKind) -> Result<(), AppError> {
        match self.study {
            Some(tag) if tag != kind => Err(AppError::Config(format!(
                "config is tagged for the {tag:?} study but the {kind:?} command was invoked"
            ))),
            _ => Ok(()),
        }
    }

    /// Base mesh plus the configured uniform refinements.
    pub fn build_mesh(&self) -> Result<Mesh, AppError> {
        let mut mesh = match self.domain {
            Domain::Square => build_unit_square_mesh(self.mesh_level),
            Domain::PolygonDisk => build_polygon_disk_mesh(self.mesh_level)
                .map_err(|e| AppError::Config(e.to_string()))?,
        };
        for _ in 0..self.refinements {
            mesh = refine_uniform(&mesh);
        }
        Ok(mesh)
    }

    pub fn noise(&self) -> Result<NoiseModel, AppError> {
        let model = match self.noise_family {
            FamilyChoice::Trig => default_model(self.n_modes, self.c_scale)?,
            FamilyChoice::Stream => {
                let domain = match self.domain {
                    Domain::Square => StreamDomain::UnitSquare,
                    Domain::PolygonDisk => StreamDomain::UnitDisk,
                };
                divergence_free_model(self.n_modes, self.c_scale, domain)?
            }
        };
        Ok(model)
    }

    pub fn initial(&self) -> InitialData {
        match self.initial_data {
            StartChoice::Vortex => InitialData::DiskVortex,
            StartChoice::Stream => InitialData::SquareStream,
            StartChoice::Rest => InitialData::Zero,
        }
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            t_final: self.t_final,
            steps: self.steps,
            ..Default::default()
        }
    }

    /// Temporal study shape with the documented defaults filled in.
    pub fn temporal_shape(&self) -> (Vec<usize>, usize) {
        let levels = self
            .level_steps
            .clone()
            .unwrap_or_else(|| vec![self.steps, 2 * self.steps, 4 * self.steps]);
        let finest = *levels.last().expect("validated nonempty");
        (levels, self.reference_steps.unwrap_or(16 * finest))
    }
}
