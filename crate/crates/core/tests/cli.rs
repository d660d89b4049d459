use sqe::harness::{exit_code, run_experiment, write_artifacts, Experiment, ExperimentConfig, ExitCode};
use sqe::report::ExperimentReport;
use std::path::Path;
use std::process::{Command, Output};

fn sqe(dir: &Path, args: &[&str], config: &str, env: &[(&str, &str)]) -> Output {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sqe"));
    cmd.args(args).arg("--config").arg(&cfg);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn rejects_even_degree_and_negative_leading_coefficient() {
    let d = tempfile::tempdir().unwrap();
    let o = sqe(d.path(), &["control"], "n = 4\na = [0, 0, 0, 0, 1]\n", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n must be odd"), "{}", stderr(&o));
    let o = sqe(d.path(), &["control"], "a = [0, 0, 0, -1]\n", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("leading coefficient a_n must be positive"), "{}", stderr(&o));
}

#[test]
fn zero_replicas_and_bad_input_are_config_errors() {
    let d = tempfile::tempdir().unwrap();
    for (args, text) in [
        (vec!["mixing"], "replicas = 0\n"),
        (vec!["mixing", "--replicas", "0"], ""),
        (vec!["no-such-experiment"], ""),
        (vec!["control"], "cutoff = 0.5\n"),
        (vec!["control"], "unknown_key = 1\n"),
        (vec!["control"], "regularity = [0.1, 0.05, 0.05, 0.3, 0.1]\n"),
    ] {
        let o = sqe(d.path(), &args, text, &[]);
        assert_eq!(code(&o), 2, "{args:?} {text}: {}", stderr(&o));
    }
    let o = sqe(d.path(), &["mixing"], "replicas = 0\n", &[]);
    assert!(stderr(&o).contains("replicas"));
}

#[test]
fn passing_run_writes_artifacts_and_echoes_tolerances() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let o = sqe(d.path(), &["restart-consistency", "--out", out.to_str().unwrap()], "n = 3\n", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let echo_at = stdout.find("# tolerance markov_sup_error").expect("tolerance echoed");
    let summary_at = stdout.find("experiment restart-consistency").expect("summary printed");
    assert!(echo_at < summary_at);
    assert!(stdout.contains("regularity = [0.1, 0.05, 0.05, 0.3, 0.25]"));
    assert!(stdout.contains("dt = 0.001"));
    let names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    for f in ["config.txt", "report.json", "summary.txt"] {
        assert!(names.iter().any(|n| n == f), "{names:?}");
    }
    assert_eq!(names.len(), 3, "no leftover temporaries: {names:?}");
    let report = ExperimentReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.metrics.len(), 3);
    assert!(report.metrics.iter().all(|m| !m.anchor.is_empty()));
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("[Markov property of the solution]"));
}

#[test]
fn metric_failure_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let o = sqe(d.path(), &["linearization", "--out", out.to_str().unwrap()], "deltas = [1e-1, 1e-14]\ndirections = 2\n", &[]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn explosion_exits_three_with_a_report() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let o = sqe(d.path(), &["dissipation", "--out", out.to_str().unwrap()], "cutoff = 4\nblowup_threshold = 1\n", &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let report = ExperimentReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report.explosion.is_some());
    assert!(!report.passed());
}

#[test]
fn same_seed_gives_identical_csv() {
    let d = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str, threads: &str| {
        let out = d.path().join(name);
        let o = sqe(
            d.path(),
            &["wick-covariance", "--seed", seed, "--replicas", "300", "--out", out.to_str().unwrap()],
            "cutoff = 4\n",
            &[("SQE_THREADS", threads)],
        );
        assert!(code(&o) <= 1, "{}", stderr(&o));
        std::fs::read(out.join("wick_covariance.csv")).unwrap()
    };
    let a = run("a", "5", "1");
    let b = run("b", "5", "3");
    let c = run("c", "6", "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let o = sqe(d.path(), &["control"], "", &[("SQE_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_metric_list_is_a_valid_report() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default_for(Experiment::Control).unwrap();
    let report = ExperimentReport::new("control");
    let files = write_artifacts(d.path(), &cfg, &report).unwrap();
    assert_eq!(files.len(), 3);
    let back = ExperimentReport::from_json(&std::fs::read_to_string(d.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(exit_code(&Ok(back)), ExitCode::Pass);
}

#[test]
fn library_run_stamps_hash_seed_and_anchors() {
    let cfg = ExperimentConfig::parse(Experiment::KernelBounds, "windows = [32, 48]\nsample_radius = 8\ntail_cutoff = 4\n")
        .unwrap()
        .with_seed(9);
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.seed, 9);
    assert_eq!(r.config_hash, cfg.hash());
    assert_eq!(r.experiment, "kernel-bounds");
    assert!(r.metrics.iter().all(|m| !m.anchor.is_empty()));
    let json = r.to_json().unwrap();
    assert_eq!(ExperimentReport::from_json(&json).unwrap(), r);
}

#[test]
fn every_experiment_name_parses_with_defaults() {
    for e in Experiment::ALL {
        assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        let cfg = ExperimentConfig::default_for(e).unwrap();
        assert_eq!(cfg.solver.reg, Default::default());
        assert!(cfg.echo().contains("# tolerance"));
    }
}
