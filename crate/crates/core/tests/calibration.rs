//! Cost probes for sizing the long-running studies. Ignored by default:
//! run `cargo test -p snse2d --test calibration -- --ignored --nocapture`
//! and read the per-step costs before adjusting study constants.

use std::time::Instant;

use snse2d::manufactured::disk_vortex;
use snse2d::mesh::{build_polygon_disk_mesh, build_unit_square_mesh, refine_uniform, Mesh};
use snse2d::noise::{divergence_free_model, StreamDomain};
use snse2d::scheme::{run_trajectory, SchemeConfig};
use snse2d::spaces::build_space;

fn probe(label: &str, mesh: &Mesh) {
    let space = build_space(mesh).expect("valid mesh");
    let model = divergence_free_model(4, 0.5, StreamDomain::UnitDisk).expect("model");
    for (tag, t_final) in [("coarse-tau", 0.25), ("fine-tau", 0.016)] {
        let cfg = SchemeConfig {
            t_final,
            steps: 16,
            ..Default::default()
        };
        let start = Instant::now();
        let traj = run_trajectory(&space, &cfg, &model, 1, disk_vortex).expect("run");
        let per_step = start.elapsed().as_secs_f64() / cfg.steps as f64;
        let iters: usize = traj.diagnostics.iter().map(|d| d.report.newton_iters).sum();
        println!(
            "{label}: tris {} vel_free {} pressure {} | {tag} {:.2} ms/step, {:.1} newton iters/step",
            mesh.n_triangles(),
            space.n_vel_free,
            space.n_pressure,
            per_step * 1e3,
            iters as f64 / cfg.steps as f64,
        );
    }
}

#[test]
#[ignore = "timing probe, run explicitly"]
fn disk_mesh_step_costs() {
    for n in [8usize, 12, 16] {
        let base = build_polygon_disk_mesh(n).expect("disk mesh");
        probe(&format!("disk({n})"), &base);
        let r1 = refine_uniform(&base);
        probe(&format!("disk({n})+1"), &r1);
        let r2 = refine_uniform(&r1);
        probe(&format!("disk({n})+2"), &r2);
    }
}

#[test]
#[ignore = "timing probe, run explicitly"]
fn deep_disk_refinement_step_costs() {
    for n in [8usize, 12] {
        let base = build_polygon_disk_mesh(n).expect("disk mesh");
        let r3 = refine_uniform(&refine_uniform(&refine_uniform(&base)));
        probe(&format!("disk({n})+3"), &r3);
    }
}

#[test]
#[ignore = "timing probe, run explicitly"]
fn square_mesh_step_costs() {
    probe("square(8)", &build_unit_square_mesh(8));
}

#[test]
#[ignore = "pilot study, run explicitly"]
fn stochastic_temporal_pilot() {
    use snse2d::experiments::{temporal_study, InitialData, TemporalStudy};

    let space = build_space(&build_polygon_disk_mesh(12).unwrap()).unwrap();
    for (c_scale, y0, label) in [
        (0.5, InitialData::DiskVortex, "weak noise, vortex start"),
        (2.5, InitialData::DiskVortex, "strong noise, vortex start"),
        (2.5, InitialData::Zero, "strong noise, rest start"),
    ] {
        let model = divergence_free_model(4, c_scale, StreamDomain::UnitDisk).unwrap();
        let study = TemporalStudy {
            scheme: SchemeConfig {
                t_final: 0.25,
                ..Default::default()
            },
            level_steps: vec![64, 128, 256, 512, 1024],
            reference_steps: 4096,
            samples: 6,
            first_seed: 1,
        };
        let start = Instant::now();
        let stats = temporal_study(&space, &study, &model, y0).unwrap();
        println!(
            "temporal pilot [{label}]: {:?} elapsed, {} failures",
            start.elapsed(),
            stats.total_failures()
        );
        for l in &stats.levels {
            println!(
                "  steps {:5} tau {:.6} rms {:.4e}",
                l.steps, l.tau, l.rms_error
            );
        }
        println!("  fitted slope {:?}", stats.fit);
    }
}

#[test]
#[ignore = "pilot study, run explicitly"]
fn deterministic_temporal_acceptance_pilot() {
    use snse2d::experiments::{temporal_study, InitialData, TemporalStudy};
    use snse2d::noise::default_model;

    let space = build_space(&build_unit_square_mesh(8)).unwrap();
    let silent = default_model(1, 0.0).unwrap();
    let study = TemporalStudy {
        scheme: SchemeConfig {
            t_final: 0.1,
            ..Default::default()
        },
        level_steps: vec![64, 128, 256, 512],
        reference_steps: 4096,
        samples: 1,
        first_seed: 7,
    };
    let start = Instant::now();
    let stats = temporal_study(&space, &study, &silent, InitialData::SquareStream).unwrap();
    println!("deterministic pilot: {:?} elapsed", start.elapsed());
    for l in &stats.levels {
        println!(
            "  steps {:5} tau {:.6} rms {:.4e}",
            l.steps, l.tau, l.rms_error
        );
    }
    println!("  fitted slope {:?}", stats.fit);
}

#[test]
#[ignore = "pilot study, run explicitly"]
fn stochastic_spatial_pilot() {
    use snse2d::experiments::{build_ladder, spatial_study, InitialData, SpatialStudy};

    let ladder = build_ladder(&build_polygon_disk_mesh(12).unwrap(), 3).unwrap();
    let model = divergence_free_model(4, 0.5, StreamDomain::UnitDisk).unwrap();
    let study = SpatialStudy {
        scheme: SchemeConfig {
            t_final: 0.25,
            steps: 32,
            ..Default::default()
        },
        studied_levels: 3,
        samples: 6,
        first_seed: 1,
    };
    let start = Instant::now();
    let stats = spatial_study(&ladder, &study, &model, InitialData::DiskVortex).unwrap();
    println!(
        "spatial pilot: {:?} elapsed, {} failures",
        start.elapsed(),
        stats.total_failures()
    );
    for l in &stats.levels {
        println!("  h {:.4} rms {:.4e}", l.h, l.rms_error);
    }
    println!("  fitted slope {:?}", stats.fit);
}

#[test]
#[ignore = "timing probe, run explicitly"]
fn step_cost_split() {
    use snse2d::assembly::{
        assemble_mass, assemble_stiffness, convection_jacobian_pattern, convection_residual,
        convection_system,
    };
    use snse2d::spaces::{h1_seminorm, interpolate_velocity, l2_norm};
    use snse2d::stokes::SaddleSolver;

    for (label, mesh) in [
        ("square(8)", build_unit_square_mesh(8)),
        ("disk(8)+2", {
            let base = build_polygon_disk_mesh(8).unwrap();
            refine_uniform(&refine_uniform(&base))
        }),
    ] {
        let space = build_space(&mesh).unwrap();
        let u = interpolate_velocity(&space, disk_vortex);
        let mass = assemble_mass(&space);
        let stiffness = assemble_stiffness(&space);
        let conv_pattern = convection_jacobian_pattern(&space);
        let mut pattern = Vec::new();
        pattern.extend(mass.entries().map(|(r, c, _)| (r, c)));
        pattern.extend(stiffness.entries().map(|(r, c, _)| (r, c)));
        pattern.extend_from_slice(&conv_pattern);
        let mut saddle = SaddleSolver::new(&space, &pattern).unwrap();

        let reps = 20;
        let time = |f: &mut dyn FnMut()| {
            let start = Instant::now();
            for _ in 0..reps {
                f();
            }
            start.elapsed().as_secs_f64() / reps as f64 * 1e3
        };

        let tau = 1e-3;
        let (_, jac) = convection_system(&space, &u);
        let mut vals = Vec::new();
        vals.extend(mass.entries().map(|(_, _, v)| v));
        vals.extend(stiffness.entries().map(|(_, _, v)| tau * v));
        vals.extend(jac.iter().map(|v| tau * v));

        let t_sys = time(&mut || {
            let _ = convection_system(&space, &u);
        });
        let t_res = time(&mut || {
            let _ = convection_residual(&space, &u);
        });
        let t_factor = time(&mut || {
            saddle.factor(&vals).unwrap();
        });
        let zeros_p = vec![0.0; space.n_pressure];
        let f = vec![1.0; space.n_vel_free];
        let t_solve = time(&mut || {
            let _ = saddle.solve(&f, &zeros_p).unwrap();
        });
        let t_norms = time(&mut || {
            let _ = l2_norm(&space, &u) + h1_seminorm(&space, &u);
        });
        println!(
            "{label}: conv_system {t_sys:.2} ms | lean residual {t_res:.2} ms | factor {t_factor:.2} ms | solve {t_solve:.2} ms | norms {t_norms:.2} ms"
        );
    }
}
