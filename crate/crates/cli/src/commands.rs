//! Command implementations. Every command writes machine-readable tables
//! under the configured output directory and prints a short summary; all
//! randomness flows from the configured seeds, so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use snse2d::experiments::{
    build_ladder, exceedance_curve, pathwise_uniform_error_cross, wilson_interval,
    write_samples_table, write_summary, ErrorStats, ExceedanceCurve, SpatialStudy, TemporalStudy,
};
use snse2d::mesh::refine_uniform;
use snse2d::noise::{coarsen_path, sample_path};
use snse2d::scheme::{run_trajectory, run_trajectory_with_path, save_trajectory, SchemeConfig};
use snse2d::spaces::build_space;

use crate::config::{RunConfig, StudyKind};
use crate::plot::{exceedance_plot, log_log_plot, ExceedanceSeries, Series};
use crate::verify::{run_checks, write_report, Mutation};
use crate::AppError;

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf, AppError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

/// (parameter, rms) pairs usable on a log-log plot.
fn plot_points(stats: &ErrorStats, use_h: bool) -> Vec<(f64, f64)> {
    stats
        .levels
        .iter()
        .map(|l| (if use_h { l.h } else { l.tau }, l.rms_error))
        .filter(|&(x, y)| x > 0.0 && y > 0.0 && y.is_finite())
        .collect()
}

/// Tables are already on disk; a nonzero failure count still ends the run
/// with a numerical error so scripts notice.
fn fail_on_failures(stats: &ErrorStats, table: &str) -> Result<(), AppError> {
    let n = stats.total_failures();
    if n > 0 {
        return Err(AppError::Numerical(format!(
            "{n} sample run(s) failed; per-sample detail in {table}"
        )));
    }
    Ok(())
}

fn print_study(stats: &ErrorStats) {
    for l in &stats.levels {
        println!(
            "level {}  steps {}  h {:.4e}  tau {:.4e}  rms {:.6e}  ok {}  failed {}",
            l.level,
            l.steps,
            l.h,
            l.tau,
            l.rms_error,
            l.samples.len(),
            l.failures.len()
        );
    }
    match &stats.fit {
        Some(f) => println!(
            "fitted order in {}: {:.3} (max log2 residual {:.3})",
            stats.fit_parameter, f.slope, f.max_residual
        ),
        None => println!("no slope fit (need three positive levels)"),
    }
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<(), AppError> {
    let model = cfg.noise()?;
    let checks = run_checks(&model, Mutation::None)?;
    let out = ensure_out(cfg)?;
    let report = out.join("verify_report.tsv");
    write_report(&report, &checks)?;

    println!("check\tstatus\tvalue\tthreshold");
    for c in &checks {
        println!(
            "{}\t{}\t{}\t{}",
            c.name,
            if c.passed { "pass" } else { "fail" },
            c.value,
            c.threshold
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(AppError::Numerical(format!(
            "{failed} of {} checks failed; report in {}",
            checks.len(),
            report.display()
        )));
    }
    println!(
        "all {} checks passed; report in {}",
        checks.len(),
        report.display()
    );
    Ok(())
}

pub fn cmd_run(cfg: &RunConfig) -> Result<(), AppError> {
    cfg.check_study(StudyKind::Single)?;
    let space = build_space(&cfg.build_mesh()?)?;
    let model = cfg.noise()?;
    let scheme = cfg.scheme();
    let out = ensure_out(cfg)?;

    for s in 0..cfg.seed_count as u64 {
        let seed = cfg.seed_first + s;
        let traj = run_trajectory(&space, &scheme, &model, seed, cfg.initial().eval())?;
        save_trajectory(&out.join(format!("trajectory_seed{seed}.bin")), &traj)?;

        let mut table = String::from(
            "step\tl2\th1\tnewton_iters\tfinal_residual\tdivergence\thalvings\tfactorizations\n",
        );
        for (j, d) in traj.diagnostics.iter().enumerate() {
            writeln!(
                table,
                "{}\t{:?}\t{:?}\t{}\t{:?}\t{:?}\t{}\t{}",
                j + 1,
                d.l2,
                d.h1,
                d.report.newton_iters,
                d.report.final_residual,
                d.report.divergence_norm,
                d.report.halvings,
                d.report.factorizations
            )
            .expect("write to string");
        }
        std::fs::write(out.join(format!("diagnostics_seed{seed}.tsv")), table)?;

        let max_l2 = traj
            .diagnostics
            .iter()
            .map(|d| d.l2)
            .fold(0.0_f64, f64::max);
        let factorizations: usize = traj
            .diagnostics
            .iter()
            .map(|d| d.report.factorizations)
            .sum();
        let last = traj.diagnostics.last();
        println!(
            "seed {seed}: {} steps, final l2 {:.6e}, max l2 {:.6e}, {} factorization(s)",
            scheme.steps,
            last.map_or(0.0, |d| d.l2),
            max_l2,
            factorizations
        );
    }
    println!("trajectories and diagnostics in {}", out.display());
    Ok(())
}

pub fn cmd_converge_time(cfg: &RunConfig) -> Result<(), AppError> {
    cfg.check_study(StudyKind::Temporal)?;
    let space = build_space(&cfg.build_mesh()?)?;
    let model = cfg.noise()?;
    let (level_steps, reference_steps) = cfg.temporal_shape();
    let study = TemporalStudy {
        scheme: cfg.scheme(),
        level_steps,
        reference_steps,
        samples: cfg.seed_count,
        first_seed: cfg.seed_first,
    };
    let stats = snse2d::experiments::temporal_study(&space, &study, &model, cfg.initial())?;

    let out = ensure_out(cfg)?;
    let table = out.join("temporal_samples.tsv");
    write_samples_table(&table, &stats, None)?;
    write_summary(&out.join("temporal_summary.txt"), &stats)?;
    let points = plot_points(&stats, false);
    if points.len() >= 2 {
        log_log_plot(
            &out.join("temporal.svg"),
            "pathwise-uniform RMS error under step refinement",
            "tau",
            &[Series {
                label: "measured RMS",
                points: &points,
            }],
            stats.fit.as_ref().map(|f| (f.slope, f.intercept)),
        )?;
    }
    print_study(&stats);
    println!("tables in {}", out.display());
    fail_on_failures(&stats, &table.display().to_string())
}

pub fn cmd_converge_space(cfg: &RunConfig) -> Result<(), AppError> {
    cfg.check_study(StudyKind::Spatial)?;
    let ladder = build_ladder(&cfg.build_mesh()?, cfg.extra_levels)?;
    let model = cfg.noise()?;
    let study = SpatialStudy {
        scheme: cfg.scheme(),
        studied_levels: cfg.studied_levels,
        samples: cfg.seed_count,
        first_seed: cfg.seed_first,
    };
    let stats = snse2d::experiments::spatial_study(&ladder, &study, &model, cfg.initial())?;

    let out = ensure_out(cfg)?;
    let table = out.join("spatial_samples.tsv");
    write_samples_table(&table, &stats, None)?;
    write_summary(&out.join("spatial_summary.txt"), &stats)?;
    let points = plot_points(&stats, true);
    if points.len() >= 2 {
        log_log_plot(
            &out.join("spatial.svg"),
            "pathwise-uniform RMS error under mesh refinement",
            "h",
            &[Series {
                label: "measured RMS",
                points: &points,
            }],
            stats.fit.as_ref().map(|f| (f.slope, f.intercept)),
        )?;
    }
    print_study(&stats);
    println!("tables in {}", out.display());
    fail_on_failures(&stats, &table.display().to_string())
}

/// One nested (h, tau) pair: the base mesh refined `pair` times at
/// steps·2^pair, compared against one more refinement at twice the steps
/// under the same Brownian path.
fn exceedance_pair(cfg: &RunConfig, pair: usize) -> Result<(f64, f64, Vec<f64>), AppError> {
    let mut mesh = cfg.build_mesh()?;
    for _ in 0..pair {
        mesh = refine_uniform(&mesh);
    }
    let ladder = build_ladder(&mesh, 1)?;
    let coarse_space = ladder.space(0);
    let fine_space = ladder.reference();

    let steps = cfg
        .steps
        .checked_mul(1usize << pair)
        .ok_or_else(|| AppError::Config("steps overflow across pairs".into()))?;
    let coarse_cfg = SchemeConfig {
        t_final: cfg.t_final,
        steps,
        ..Default::default()
    };
    let fine_cfg = SchemeConfig {
        t_final: cfg.t_final,
        steps: 2 * steps,
        ..Default::default()
    };
    let model = cfg.noise()?;
    let y0 = cfg.initial();

    let errors: Result<Vec<f64>, AppError> = (0..cfg.seed_count as u64)
        .into_par_iter()
        .map(|s| {
            let seed = cfg.seed_first + s;
            let tag = |e: String| AppError::Numerical(format!("pair {pair} seed {seed}: {e}"));
            let fine_path = sample_path(seed, 2 * steps, model.n_modes, fine_cfg.tau());
            let fine = run_trajectory_with_path(
                fine_space,
                &fine_cfg,
                &model,
                seed,
                &fine_path,
                y0.eval(),
            )
            .map_err(|e| tag(e.to_string()))?;
            let coarse_path = coarsen_path(&fine_path, 2).map_err(|e| tag(e.to_string()))?;
            let coarse = run_trajectory_with_path(
                coarse_space,
                &coarse_cfg,
                &model,
                seed,
                &coarse_path,
                y0.eval(),
            )
            .map_err(|e| tag(e.to_string()))?;
            pathwise_uniform_error_cross(
                coarse_space,
                &coarse,
                fine_space,
                &fine,
                ladder.ancestors(0),
            )
            .map_err(|e| tag(e.to_string()))
        })
        .collect();
    Ok((ladder.h(0), coarse_cfg.tau(), errors?))
}

/// Log-spaced grid spanning the observed normalized statistics; fixed
/// fallback when every error is zero. Deterministic given the data.
fn derive_epsilons(pairs: &[(f64, f64, Vec<f64>)], alpha: f64, beta: f64) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for (h, tau, errors) in pairs {
        let denom = h.powf(alpha) + tau.powf(beta);
        for e in errors {
            let stat = e * e / denom;
            if stat > 0.0 {
                lo = lo.min(stat);
                hi = hi.max(stat);
            }
        }
    }
    if !(hi > 0.0) {
        return vec![1e-12, 1e-10, 1e-8, 1e-6, 1e-4];
    }
    let (a, b) = ((lo / 4.0).ln(), (hi * 4.0).ln());
    (0..9)
        .map(|i| (a + (b - a) * i as f64 / 8.0).exp())
        .collect()
}

pub fn cmd_exceedance(cfg: &RunConfig) -> Result<(), AppError> {
    cfg.check_study(StudyKind::Exceedance)?;
    let mut pair_data = Vec::with_capacity(cfg.pairs);
    for p in 0..cfg.pairs {
        pair_data.push(exceedance_pair(cfg, p)?);
    }
    let epsilons = match &cfg.epsilons {
        Some(eps) => {
            let mut eps = eps.clone();
            eps.sort_by(f64::total_cmp);
            eps
        }
        None => derive_epsilons(&pair_data, cfg.alpha, cfg.beta),
    };

    let curves: Vec<ExceedanceCurve> = pair_data
        .iter()
        .map(|(h, tau, errors)| exceedance_curve(errors, *h, *tau, cfg.alpha, cfg.beta, &epsilons))
        .collect::<Result<_, _>>()?;

    let out = ensure_out(cfg)?;
    let mut table =
        String::from("pair\th\ttau\tepsilon\tprobability\twilson_low\twilson_high\tsamples\n");
    let mut intervals: Vec<Vec<(f64, f64)>> = Vec::with_capacity(curves.len());
    for (p, curve) in curves.iter().enumerate() {
        let n = curve.sample_count;
        let mut rows = Vec::with_capacity(curve.epsilons.len());
        for (eps, prob) in curve.epsilons.iter().zip(&curve.probabilities) {
            let successes = (prob * n as f64).round() as usize;
            let (low, high) = wilson_interval(successes, n);
            writeln!(
                table,
                "{p}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{n}",
                curve.h, curve.tau, eps, prob, low, high
            )
            .expect("write to string");
            rows.push((low, high));
        }
        intervals.push(rows);
    }
    std::fs::write(out.join("exceedance.tsv"), table)?;

    let labels: Vec<String> = curves
        .iter()
        .map(|c| format!("h {:.3e}, tau {:.3e}", c.h, c.tau))
        .collect();
    let series: Vec<ExceedanceSeries<'_>> = curves
        .iter()
        .zip(&labels)
        .zip(&intervals)
        .map(|((c, label), ivals)| ExceedanceSeries {
            label,
            epsilons: &c.epsilons,
            probabilities: &c.probabilities,
            intervals: ivals,
        })
        .collect();
    exceedance_plot(
        &out.join("exceedance.svg"),
        "normalized exceedance under nested refinement",
        &series,
    )?;

    for (p, curve) in curves.iter().enumerate() {
        println!(
            "pair {p}: h {:.4e}  tau {:.4e}  samples {}  P(stat >= {:.3e}) = {:.3}",
            curve.h, curve.tau, curve.sample_count, curve.epsilons[0], curve.probabilities[0]
        );
    }
    // Non-increase consistency across adjacent pairs: the refined pair's
    // Wilson lower bound staying at or below the coarse pair's upper bound.
    let mut violations = 0usize;
    let mut compared = 0usize;
    for p in 1..curves.len() {
        for (i, _) in epsilons.iter().enumerate() {
            compared += 1;
            if intervals[p][i].0 > intervals[p - 1][i].1 {
                violations += 1;
            }
        }
    }
    if compared > 0 {
        println!(
            "refinement consistency: {violations} of {compared} interval comparisons violate non-increase"
        );
    }
    println!("tables in {}", out.display());
    Ok(())
}
