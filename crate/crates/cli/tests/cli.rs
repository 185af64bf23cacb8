use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use submfg::io::{read_flow_csv, read_policy_csv, read_trace_csv};
use submfg_cli::commands::read_summary;
use submfg_cli::config::Level;
use submfg_cli::RunConfig;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn submfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_submfg")).args(args).output().unwrap()
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    submfg(&args)
}

fn summary(dir: &Path, key: &str) -> String {
    read_summary(&dir.join("summary.txt")).unwrap().get(key).unwrap_or_default().to_string()
}

#[test]
fn every_shipped_config_loads() {
    for entry in std::fs::read_dir(config("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.build_cost().unwrap();
            cfg.build_grid().unwrap();
        }
    }
}

#[test]
fn reference_config_spells_out_the_defaults() {
    let full = RunConfig::load(&config("reference.toml")).unwrap();
    let text = std::fs::read_to_string(config("reference.toml")).unwrap();
    // drop the sections that only restate defaults
    let mut trimmed = String::new();
    let mut skip = false;
    for line in text.lines() {
        if line.starts_with('[') {
            skip = matches!(line, "[solver]" | "[envelope]");
        }
        if !skip && !line.starts_with("allow_non_submodular") && !line.starts_with("write_iterates") {
            trimmed.push_str(line);
            trimmed.push('\n');
        }
    }
    let sparse = RunConfig::from_toml(&trimmed).unwrap();
    assert_eq!(format!("{full:?}"), format!("{sparse:?}"));
}

#[test]
fn decoupled_solve_reports_a_single_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("solve", &config("decoupled.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(dir.path(), "min_equals_max"), "true");
    assert_eq!(summary(dir.path(), "status"), "pass");

    // every CSV parses back into domain objects
    for tag in ["below", "above"] {
        let flow = read_flow_csv(dir.path().join(format!("{tag}_flow.csv"))).unwrap();
        assert_eq!(flow.len(), 101);
        assert!(!read_trace_csv(dir.path().join(format!("{tag}_trace.csv"))).unwrap().is_empty());
        assert_eq!(read_policy_csv(dir.path().join(format!("{tag}_policy.csv"))).unwrap().len(), 101 * 101);
    }
    for entry in std::fs::read_dir(dir.path().join("iterates")).unwrap() {
        read_flow_csv(entry.unwrap().path()).unwrap();
    }
}

#[test]
fn threshold_solve_reports_two_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("solve", &config("threshold.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(dir.path(), "min_equals_max"), "false");
    assert_eq!(summary(dir.path(), "ordered"), "true");
}

#[test]
fn infeasible_time_step_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("lq.toml")).unwrap().replace("steps = 100", "steps = 10");
    let cfg = dir.path().join("cfl.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = run("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("admissible step") && err.contains("42 time steps"), "{err}");
}

#[test]
fn bad_configs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("lq.toml")).unwrap();
    let cases = [
        text.replace("[controls]", "[controls]\nbogus = 1"),
        text.replace("m_hat = -0.5", "m_hat = 0.5"),
        text.replace("std_dev = 0.3", "std_dev = -1.0"),
    ];
    for (n, case) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{n}.toml"));
        std::fs::write(&cfg, case).unwrap();
        let out = run("solve", &cfg, &dir.path().join("out"), &[]);
        assert_eq!(out.status.code(), Some(2), "case {n}");
    }
}

#[test]
fn negative_control_fails_verify_and_breaks_learning() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("verify", &config("lq_negative_control.toml"), &dir.path().join("v"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&dir.path().join("v"), "submodularity"), "false");
    let out = run("solve", &config("lq_negative_control.toml"), &dir.path().join("s"), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn submodular_config_passes_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("verify", &config("order_one.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(dir.path(), "best_response_violations"), "0");
    assert_eq!(summary(dir.path(), "dp_value_gap"), "0");
    assert!(dir.path().join("verify.txt").exists());
}

#[test]
fn iteration_cap_exits_with_4_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("solve", &config("lq.toml"), dir.path(), &["--max-iter", "2"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(summary(dir.path(), "status"), "unconverged");
    read_flow_csv(dir.path().join("below_flow.csv")).unwrap();
}

#[test]
fn several_configs_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let a = config("decoupled.toml");
    let b = config("threshold.toml");
    let out = submfg(&[
        "solve",
        "--config",
        a.to_str().unwrap(),
        "--config",
        b.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(&dir.path().join("decoupled"), "name"), "decoupled");
    assert_eq!(summary(&dir.path().join("threshold"), "name"), "threshold");
}

#[test]
fn lq_check_and_common_noise_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&config("lq_validation.toml")).unwrap();
    // one coarse level keeps this quick
    let coarse = Level {
        states: 51,
        steps: 50,
        controls: Some(31),
    };
    cfg = cfg.at_level(&coarse);
    let check = cfg.lq_check.as_mut().unwrap();
    check.refinement = vec![coarse];
    check.tolerance = 5e-2;
    let path = dir.path().join("lq.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let out = run("lq-check", &path, &dir.path().join("lq"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let head = std::fs::read_to_string(dir.path().join("lq/riccati.csv")).unwrap();
    assert!(head.starts_with("t,A,B,C,mean\n"));
    assert_eq!(summary(&dir.path().join("lq"), "oracle_self_gap"), "0");

    let out = run("common-noise", &config("common_noise.toml"), &dir.path().join("cn"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let rows = submfg::io::read_conditional_csv(dir.path().join("cn/cn_below.csv")).unwrap();
    assert_eq!(rows.len(), (1..=11).sum::<usize>());
    assert_eq!(summary(&dir.path().join("cn"), "ordered"), "true");
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    assert_eq!(submfg(&["solve"]).status.code(), Some(2));
    assert_eq!(submfg(&["--help"]).status.code(), Some(0));
}
