//! End-to-end driver tests: exit codes, report artifacts, the documented
//! deterministic temporal order, and byte-identical reruns. Each test spawns
//! the real binary in a scratch directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_snse2d"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).expect("write config");
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_config_exits_with_configuration_error() {
    let out = bin()
        .args(["--config", "/nonexistent/nowhere.toml", "run"])
        .output()
        .expect("spawn binary");
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("cannot read config"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn study_tag_mismatch_exits_with_configuration_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(
        dir.path(),
        "domain = \"square\"\nmesh_level = 3\nt_final = 0.05\nsteps = 4\n\
         noise_family = \"trig\"\nn_modes = 2\nc_scale = 0.3\nstudy = \"temporal\"\n",
    );
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("converge-space")
        .output()
        .expect("spawn binary");
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("tagged"), "stderr: {}", stderr(&out));
}

#[test]
fn verify_with_repo_default_config_passes_and_writes_report() {
    let repo_config = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../snse2d.toml")
        .canonicalize()
        .unwrap();
    let dir = tempfile::tempdir().expect("tempdir");
    let out = bin()
        .arg("--config")
        .arg(&repo_config)
        .arg("--out")
        .arg(dir.path())
        .arg("verify")
        .output()
        .expect("spawn binary");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("all 6 checks passed"), "stdout: {text}");

    let report = std::fs::read_to_string(dir.path().join("verify_report.tsv")).expect("report");
    assert!(report.starts_with("check\tstatus\tvalue\tthreshold\n"));
    assert_eq!(report.matches("\tpass\t").count(), 6, "report: {report}");
    assert_eq!(report.matches("\tfail\t").count(), 0, "report: {report}");
}

#[test]
fn run_command_saves_trajectories_and_diagnostics() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(
        dir.path(),
        "domain = \"square\"\nmesh_level = 3\nt_final = 0.05\nsteps = 4\n\
         noise_family = \"trig\"\nn_modes = 2\nc_scale = 0.3\ninitial_data = \"stream\"\n\
         seed_first = 5\nseed_count = 2\n",
    );
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("run")
        .output()
        .expect("spawn binary");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    for seed in [5u64, 6] {
        assert!(dir
            .path()
            .join(format!("trajectory_seed{seed}.bin"))
            .is_file());
        let diag = std::fs::read_to_string(dir.path().join(format!("diagnostics_seed{seed}.tsv")))
            .expect("diagnostics");
        assert!(diag.starts_with("step\tl2\th1\t"), "diagnostics: {diag}");
        assert_eq!(diag.lines().count(), 1 + 4, "one row per step: {diag}");
    }
}

/// Noise off, smooth start, fixed mesh: the driver reproduces first order
/// in tau and prints the fitted slope.
#[test]
fn deterministic_temporal_study_reports_first_order() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(
        dir.path(),
        "domain = \"square\"\nmesh_level = 8\nt_final = 0.1\nsteps = 64\n\
         noise_family = \"trig\"\nn_modes = 1\nc_scale = 0.0\ninitial_data = \"stream\"\n\
         seed_first = 7\nseed_count = 1\nstudy = \"temporal\"\n\
         level_steps = [64, 128, 256, 512]\nreference_steps = 4096\n",
    );
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("converge-time")
        .output()
        .expect("spawn binary");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let text = stdout(&out);
    let slope_line = text
        .lines()
        .find(|l| l.starts_with("fitted order in tau:"))
        .unwrap_or_else(|| panic!("no fit line in: {text}"));
    let slope: f64 = slope_line
        .split_whitespace()
        .nth(4)
        .and_then(|w| w.parse().ok())
        .unwrap_or_else(|| panic!("unparsable fit line: {slope_line}"));
    assert!(
        (0.9..=1.1).contains(&slope),
        "deterministic temporal order {slope} outside [0.9, 1.1]"
    );
    assert!(dir.path().join("temporal_samples.tsv").is_file());
    assert!(dir.path().join("temporal_summary.txt").is_file());
    let svg = std::fs::read_to_string(dir.path().join("temporal.svg")).expect("plot");
    assert!(svg.starts_with("<svg "), "plot must be a standalone svg");
}

/// The same manifest rerun with a different worker count produces
/// byte-identical tables and plots.
#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(
        dir.path(),
        "domain = \"square\"\nmesh_level = 4\nt_final = 0.05\nsteps = 8\n\
         noise_family = \"trig\"\nn_modes = 3\nc_scale = 0.4\ninitial_data = \"stream\"\n\
         seed_first = 1000\nseed_count = 4\nstudy = \"temporal\"\n\
         level_steps = [8, 16, 32]\nreference_steps = 128\n",
    );
    let mut outputs = Vec::new();
    for workers in ["1", "2"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let out = bin()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .args(["--workers", workers, "converge-time"])
            .output()
            .expect("spawn binary");
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        outputs.push(out_dir);
    }
    for name in [
        "temporal_samples.tsv",
        "temporal_summary.txt",
        "temporal.svg",
    ] {
        let a = std::fs::read(outputs[0].join(name)).expect(name);
        let b = std::fs::read(outputs[1].join(name)).expect(name);
        assert_eq!(a, b, "{name} differs between worker counts");
    }
}

#[test]
fn exceedance_command_writes_curves_and_plot() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(
        dir.path(),
        "domain = \"polygon-disk\"\nmesh_level = 8\nt_final = 0.05\nsteps = 8\n\
         noise_family = \"stream\"\nn_modes = 2\nc_scale = 0.5\ninitial_data = \"vortex\"\n\
         seed_first = 40\nseed_count = 4\nstudy = \"exceedance\"\npairs = 2\n",
    );
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("exceedance")
        .output()
        .expect("spawn binary");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let table = std::fs::read_to_string(dir.path().join("exceedance.tsv")).expect("table");
    assert!(
        table.starts_with("pair\th\ttau\tepsilon\tprobability\twilson_low\twilson_high\tsamples\n")
    );
    // Two pairs, nine derived thresholds each.
    assert_eq!(table.lines().count(), 1 + 2 * 9, "table: {table}");
    let svg = std::fs::read_to_string(dir.path().join("exceedance.svg")).expect("plot");
    assert!(svg.starts_with("<svg "));
    assert!(
        stdout(&out).contains("refinement consistency:"),
        "stdout: {}",
        stdout(&out)
    );
}
