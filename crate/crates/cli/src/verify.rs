//! Integrity checks behind the `verify` command: the exact discrete
//! identities, the manufactured-solution order, and the noise hypothesis
//! sampler. Each check reports a measured value next to its threshold so
//! the report stands alone as a record of the run.

use std::path::Path;

use snse2d::assembly::{
    assemble_divergence, assemble_stiffness, convection_residual, convection_residual_sign_error,
};
use snse2d::experiments::fit_log2_slope;
use snse2d::manufactured::{stokes_body_force, stream_velocity};
use snse2d::mesh::{build_polygon_disk_mesh, build_unit_square_mesh};
use snse2d::noise::{counter_uniform, NoiseModel};
use snse2d::spaces::{build_space, l2_error_against, DualVector, TaylorHoodSpace, VelocityVector};
use snse2d::stokes::{solve_steady_stokes, ProjectionSolver};

use crate::AppError;

/// Deliberate defect injected into one check, so tests can prove the suite
/// catches it. Never reachable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Flip the stabilization sign inside the convection term.
    ConvectionSignError,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Measured value, formatted.
    pub value: String,
    /// Acceptance threshold, formatted.
    pub threshold: String,
}

fn random_field(space: &TaylorHoodSpace, seed: u64) -> VelocityVector {
    let mut v = VelocityVector::zero(space);
    for (i, c) in v.coeffs.iter_mut().enumerate() {
        *c = 2.0 * counter_uniform(seed, i as u64, 0) - 1.0;
    }
    v
}

fn random_dual(space: &TaylorHoodSpace, seed: u64) -> DualVector {
    let mut f = DualVector::zero(space);
    for (i, v) in f.vals.iter_mut().enumerate() {
        *v = 2.0 * counter_uniform(seed, i as u64, 1) - 1.0;
    }
    f
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Run the full suite. The checks are pure functions of fixed seeds, so
/// two runs produce identical reports.
pub fn run_checks(model: &NoiseModel, mutation: Mutation) -> Result<Vec<CheckResult>, AppError> {
    let spaces = [
        build_space(&build_unit_square_mesh(3))?,
        build_space(&build_polygon_disk_mesh(8).map_err(|e| AppError::Config(e.to_string()))?)?,
    ];

    let convection = |space: &TaylorHoodSpace, u: &VelocityVector| match mutation {
        Mutation::None => convection_residual(space, u),
        Mutation::ConvectionSignError => convection_residual_sign_error(space, u),
    };

    let mut worst_skew = 0.0f64;
    let mut worst_idem = 0.0f64;
    let mut worst_div = 0.0f64;
    let mut worst_sym = 0.0f64;
    for (li, space) in spaces.iter().enumerate() {
        let projector = ProjectionSolver::new(space)?;
        let stiffness = assemble_stiffness(space);
        let divergence = assemble_divergence(space);
        for k in 0..25u64 {
            let u = random_field(space, 40_000 + 100 * li as u64 + k);
            let g = convection(space, &u);
            worst_skew = worst_skew.max(
                dot(&g.vals, &u.coeffs).abs()
                    / (euclid(&g.vals) * euclid(&u.coeffs) + f64::MIN_POSITIVE),
            );

            let v = random_field(space, 41_000 + 100 * li as u64 + k);
            let ku = stiffness.matvec(&u.coeffs);
            let kv = stiffness.matvec(&v.coeffs);
            worst_sym = worst_sym.max(
                (dot(&ku, &v.coeffs) - dot(&u.coeffs, &kv)).abs()
                    / (euclid(&ku) * euclid(&v.coeffs) + f64::MIN_POSITIVE),
            );

            if k < 10 {
                let f = random_dual(space, 42_000 + 100 * li as u64 + k);
                let p = projector.project_dual(space, &f)?;
                let pp = projector.project(space, &p)?;
                let scale = 1.0 + euclid(&p.coeffs);
                let idem: f64 = p
                    .coeffs
                    .iter()
                    .zip(&pp.coeffs)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                worst_idem = worst_idem.max(idem / scale);
                worst_div = worst_div.max(euclid(&divergence.matvec(&p.coeffs)) / scale);
            }
        }
    }

    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [2usize, 4, 8] {
        let space = build_space(&build_unit_square_mesh(n))?;
        let (u, _) = solve_steady_stokes(&space, stokes_body_force)?;
        hs.push(space.mesh.h);
        errs.push(l2_error_against(&space, &u, stream_velocity));
    }
    let order = fit_log2_slope(&hs, &errs)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN);

    let hypothesis = model.check_hypothesis(80);

    Ok(vec![
        CheckResult {
            name: "convection_skew_symmetry",
            passed: worst_skew <= 1e-11,
            value: format!("{worst_skew:.3e}"),
            threshold: "1e-11".into(),
        },
        CheckResult {
            name: "projection_idempotence",
            passed: worst_idem <= 1e-10,
            value: format!("{worst_idem:.3e}"),
            threshold: "1e-10".into(),
        },
        CheckResult {
            name: "projection_divergence",
            passed: worst_div <= 1e-10,
            value: format!("{worst_div:.3e}"),
            threshold: "1e-10".into(),
        },
        CheckResult {
            name: "stiffness_symmetry",
            passed: worst_sym <= 1e-11,
            value: format!("{worst_sym:.3e}"),
            threshold: "1e-11".into(),
        },
        CheckResult {
            name: "manufactured_stokes_order",
            passed: order >= 3.5,
            value: format!("{order:.3}"),
            threshold: ">=3.5".into(),
        },
        CheckResult {
            name: "noise_hypothesis_sampler",
            passed: hypothesis.is_ok(),
            value: match &hypothesis {
                Ok(()) => "80x80 grid clean".into(),
                Err(e) => e.to_string(),
            },
            threshold: "bounded sums".into(),
        },
    ])
}

/// Tab-separated report, one row per check.
pub fn write_report(path: &Path, checks: &[CheckResult]) -> std::io::Result<()> {
    let mut out = String::from("check\tstatus\tvalue\tthreshold\n");
    for c in checks {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            c.name,
            if c.passed { "pass" } else { "fail" },
            c.value,
            c.threshold
        ));
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use snse2d::noise::default_model;

    #[test]
    fn clean_build_passes_every_check() {
        let model = default_model(3, 0.5).unwrap();
        let checks = run_checks(&model, Mutation::None).unwrap();
        assert_eq!(checks.len(), 6);
        for c in &checks {
            assert!(c.passed, "{} failed with value {}", c.name, c.value);
        }
    }

    #[test]
    fn convection_sign_error_is_caught() {
        let model = default_model(3, 0.5).unwrap();
        let checks = run_checks(&model, Mutation::ConvectionSignError).unwrap();
        let skew = checks
            .iter()
            .find(|c| c.name == "convection_skew_symmetry")
            .unwrap();
        assert!(!skew.passed, "mutated convection must fail the skew check");
        for c in checks
            .iter()
            .filter(|c| c.name != "convection_skew_symmetry")
        {
            assert!(
                c.passed,
                "{} must not be affected by the convection mutation",
                c.name
            );
        }
    }

    #[test]
    fn report_lists_every_check_with_values() {
        let model = default_model(3, 0.5).unwrap();
        let checks = run_checks(&model, Mutation::None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.tsv");
        write_report(&path, &checks).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("check\tstatus\tvalue\tthreshold\n"));
        assert_eq!(text.lines().count(), 1 + checks.len());
        for c in &checks {
            assert!(text.contains(c.name));
        }
        assert_eq!(text.matches("\tpass\t").count(), 6);
    }
}
