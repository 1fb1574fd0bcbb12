//! Harness-level checks: byte reproducibility, CLI exit codes, and the
//! agreement of the two convergence references.

use mflab_cli::config::Config;
use mflab_cli::experiments;
use std::path::PathBuf;
use std::process::Command;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str) -> Config {
    Config::load(&config_path(name)).unwrap()
}

fn load_with_overrides(name: &str, overrides: &[(&str, &str)]) -> Config {
    let raw = std::fs::read_to_string(config_path(name)).unwrap();
    let mut lines: Vec<String> = raw
        .lines()
        .filter(|l| {
            let key = l.split('=').next().unwrap_or("").trim();
            !overrides.iter().any(|(k, _)| *k == key)
        })
        .map(|l| l.to_string())
        .collect();
    for (k, v) in overrides {
        lines.push(format!("{k} = {v}"));
    }
    Config::parse(&lines.join("\n")).unwrap()
}

#[test]
fn reports_are_byte_reproducible() {
    let cfg = load_with_overrides(
        "b1_leader_follower.cfg",
        &[
            ("experiment.n_list", "16,32"),
            ("experiment.reference_n", "64"),
            ("experiment.seeds", "2"),
        ],
    );
    let a = experiments::run_converge(&cfg, 7).unwrap();
    let b = experiments::run_converge(&cfg, 7).unwrap();
    assert_eq!(a.report.csv, b.report.csv);
    assert_eq!(a.report.svg, b.report.svg);

    let s1 = experiments::run_simulate(&cfg, 7).unwrap();
    let s2 = experiments::run_simulate(&cfg, 7).unwrap();
    assert_eq!(s1.report.csv, s2.report.csv);
    for ((na, ca), (nb, cb)) in s1
        .report
        .extra_files
        .iter()
        .zip(&s2.report.extra_files)
    {
        assert_eq!(na, nb);
        assert_eq!(ca, cb);
    }

    // A different seed must actually change the numbers.
    let c = experiments::run_converge(&cfg, 8).unwrap();
    assert_ne!(a.report.csv, c.report.csv);
}

#[test]
fn converge_references_agree_on_the_verdict() {
    // Reduced-scale version of the shipped benchmark; both references must
    // reach the same monotonicity verdict.
    let cfg = load_with_overrides(
        "b1_leader_follower.cfg",
        &[
            ("experiment.n_list", "32,64,128"),
            ("experiment.reference_n", "512"),
            ("experiment.seeds", "4"),
        ],
    );
    let largest =
        experiments::run_converge_with(&cfg, 7, experiments::ReferenceKind::LargestRun).unwrap();
    let pde =
        experiments::run_converge_with(&cfg, 7, experiments::ReferenceKind::Macroscopic).unwrap();
    assert_eq!(
        largest.strictly_decreasing, pde.strictly_decreasing,
        "largest-run and macroscopic references disagree: {:?} vs {:?}",
        largest.means, pde.means
    );
}

#[test]
fn validate_command_exits_zero() {
    let out = tempdir("validate_ok");
    let status = Command::new(env!("CARGO_BIN_EXE_mflab"))
        .args([
            "validate",
            "--config",
            config_path("b1_leader_follower.cfg").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for file in ["report.csv", "report.svg", "manifest.txt"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_hash:"));
    assert!(manifest.contains("sublinearity_M"));
}

#[test]
fn missing_config_exits_one() {
    let status = Command::new(env!("CARGO_BIN_EXE_mflab"))
        .args(["simulate", "--config", "/nonexistent/path.cfg"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn edge_flagged_pde_run_exits_two() {
    // A density wide relative to the domain trips the boundary guard, which
    // marks the run invalid.
    let cfg_text = "\
model.kind = finite
model.dim = 1
model.labels = 1
model.velocity_mode = label_independent
model.kernel.1.family = zero
init.label.1.family = gaussian
init.label.1.center = 0.0
init.label.1.sigma = 3.0
init.label.1.mass = 1.0
sim.dt = 0.01
sim.t_final = 0.05
sim.record_every = 1
grid.x_min = -4.0
grid.x_max = 4.0
grid.n_cells = 50
pde.dt = 0.01
pde.T = 0.05
";
    let dir = tempdir("edge_flag");
    let cfg_file = dir.join("edge.cfg");
    std::fs::write(&cfg_file, cfg_text).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mflab"))
        .args([
            "pde",
            "--config",
            cfg_file.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn consistency_rejects_label_weighted_kernels() {
    let cfg = load("b2_label_chain.cfg");
    match experiments::run_consistency(&cfg, 0) {
        Err(mflab_cli::CliError::Core(mflab::Error::LabelWeightedPde)) => {}
        Err(other) => panic!("expected the reduction obstruction, got {other}"),
        Ok(_) => panic!("label-weighted kernels must not reduce"),
    }
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mflab_test_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
