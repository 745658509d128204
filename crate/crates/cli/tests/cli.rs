use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mpb_core::harness::{default_checkpoints, macro_experiment};
use mpb_core::oracle::Allocation;
use mpb_core::{ProblemInstance, RunConfig, SamplerKind, Scenario};

fn mpb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_instance(dir: &Path, name: &str, inst: &ProblemInstance) -> String {
    let path = dir.join(name);
    fs::write(&path, inst.to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_round_trips_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let out = mpb(&["generate", "--scenario", "baseline", "--seed", "11", "--out", path_str(p)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("\"seed\":11"));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let inst = ProblemInstance::from_json(&text).unwrap();
    assert_eq!(inst.derive_truth().mpb, 9);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&mpb(&["generate", "--scenario", "S9", "--seed", "1"])), 2);
    assert_eq!(code(&mpb(&["generate", "--scenario", "baseline"])), 2);
    assert_eq!(code(&mpb(&["run", "--scenario", "baseline", "--budget", "3000"])), 2);
    assert_eq!(code(&mpb(&["run", "--scenario", "baseline", "--seed", "1", "--bogus"])), 2);
    let ng = mpb(&[
        "run", "--scenario", "baseline", "--seed", "1", "--variance-mode", "ng", "--n0", "1", "--budget", "3000",
    ]);
    assert_eq!(code(&ng), 2);
    let bad = mpb(&["run", "--scenario", "baseline", "--seed", "1", "--samplers", "alg9", "--budget", "3000"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn missing_files_exit_4() {
    let out = mpb(&["solve-alloc", "--instance", "/nonexistent/instance.json"]);
    assert_eq!(code(&out), 4);
    let out = mpb(&["report", "--metrics", "/nonexistent/metrics.csv"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn run_matches_library_and_ignores_workers() {
    let args = |w: &'static str| {
        vec![
            "run", "--scenario", "baseline", "--samplers", "alg2,ea", "--macros", "4", "--budget", "3000", "--seed", "5",
            "--workers", w,
        ]
    };
    let one = mpb(&args("1"));
    let eight = mpb(&args("8"));
    assert_eq!(code(&one), 0, "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(one.stdout, eight.stdout);

    let csv = stdout(&one);
    let samplers: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(samplers.iter().filter(|s| **s == "alg2").count(), 20);
    assert_eq!(samplers.iter().filter(|s| **s == "ea").count(), 20);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(3) == Some("4")));

    let mut config = RunConfig::new(5, 3000);
    config.seed = 5;
    config.checkpoints = default_checkpoints(&config, Scenario::K, Scenario::B);
    let kinds = [SamplerKind::Alg2, SamplerKind::EqualAllocation];
    let table = macro_experiment(&Scenario::Baseline, &kinds, 4, &config, 1).unwrap();
    assert_eq!(table.to_csv(), csv);
}

#[test]
fn run_writes_metrics_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpb(&[
        "run", "--scenario", "s1", "--samplers", "alg1", "--macros", "2", "--budget", "2700", "--seed", "3", "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = dir.path().join("metrics.csv");
    assert!(fs::read_to_string(&metrics).unwrap().starts_with("scenario,sampler,budget"));
    let report = mpb(&["report", "--metrics", path_str(&metrics)]);
    assert_eq!(code(&report), 0);
    let text = stdout(&report);
    assert!(text.starts_with("# s1 alg1\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count(), 20);
}

#[test]
fn solve_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let symmetric = ProblemInstance::gaussian(vec![1.0], vec![vec![0.0], vec![1.0]], 1.0).unwrap();
    let inst = write_instance(dir.path(), "sym.json", &symmetric);
    let out = mpb(&["solve-alloc", "--instance", &inst]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let alloc_csv: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    let alloc = Allocation::from_csv(&alloc_csv).unwrap();
    assert!((alloc.get(0, 0) - 0.5).abs() < 1e-9 && (alloc.get(1, 0) - 0.5).abs() < 1e-9);
    assert!(text.contains("metric,value"));

    let asym = ProblemInstance::gaussian(
        vec![0.6, 0.4],
        vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![3.0, 0.5]],
        1.0,
    )
    .unwrap();
    let inst = write_instance(dir.path(), "asym.json", &asym);
    let sol = dir.path().join("sol");
    let out = mpb(&["solve-alloc", "--instance", &inst, "--variant", "fn", "--out", path_str(&sol)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let alloc_path = sol.join("allocation.csv");
    assert!(sol.join("residuals.csv").exists());
    let ok = mpb(&["verify-alloc", "--instance", &inst, "--alloc", path_str(&alloc_path), "--variant", "fn"]);
    assert_eq!(code(&ok), 0);

    let uniform = dir.path().join("uniform.csv");
    fs::write(&uniform, Allocation::uniform(3, 2).to_csv()).unwrap();
    let fail = mpb(&["verify-alloc", "--instance", &inst, "--alloc", path_str(&uniform), "--variant", "fn"]);
    assert_eq!(code(&fail), 1);

    let zero = dir.path().join("zero.csv");
    fs::write(&zero, "solution,theta_1,theta_2\n1,0,0\n2,0,0\n3,0,0\n").unwrap();
    let rejected = mpb(&["verify-alloc", "--instance", &inst, "--alloc", path_str(&zero)]);
    assert_eq!(code(&rejected), 2);
}

#[test]
fn standard_solution_leaves_adversarial_columns_empty() {
    let dir = tempfile::tempdir().unwrap();
    // solution 0 is optimal at θ_0, θ_1 and loses θ_2 to solution 1
    let inst = ProblemInstance::gaussian(
        vec![0.4, 0.3, 0.3],
        vec![vec![0.0, 0.0, 1.0], vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 2.0]],
        1.0,
    )
    .unwrap();
    let path = write_instance(dir.path(), "inst.json", &inst);
    let out = mpb(&["solve-alloc", "--instance", &path, "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let alloc = Allocation::from_csv(&fs::read_to_string(dir.path().join("allocation.csv")).unwrap()).unwrap();
    assert_eq!(alloc.get(0, 2), 0.0);
}

#[test]
fn market_golden_and_simulated() {
    let out = mpb(&["market", "--golden"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("4,Top 5x8,0.44"));
    assert!(text.contains("# mpb,4\n"));
    assert!(text.contains("# average_best,3\n"));
    assert!(text.contains("# worst_case_best,3 (scenario 46)\n"));

    let dir = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec![
            "market".to_string(),
            "--seed".into(),
            "9".into(),
            "--n-scenarios".into(),
            "3".into(),
            "--consumers".into(),
            "5".into(),
            "--reps".into(),
            "20".into(),
            "--out".into(),
            d.to_str().unwrap().to_string(),
        ]
    };
    let a = dir.path().join("a");
    let out = Command::new(env!("CARGO_BIN_EXE_mpb")).args(args(&a)).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sales = fs::read_to_string(a.join("mean_sales.csv")).unwrap();
    assert_eq!(sales.lines().count(), 4);

    // loading the written scenarios reproduces the sales
    let b = dir.path().join("b");
    let out = mpb(&[
        "market", "--scenarios", path_str(&a.join("scenarios.json")), "--seed", "9", "--reps", "20", "--out",
        path_str(&b),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(b.join("mean_sales.csv")).unwrap(), sales);
    assert_eq!(code(&mpb(&["market", "--golden", "--seed", "1"])), 2);
    assert_eq!(code(&mpb(&["market"])), 2);
}
