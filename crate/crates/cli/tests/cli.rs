use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lendsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lendsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn fixtures(dir: &Path) -> PathBuf {
    let fx = dir.join("fx");
    let out = lendsim(&["--seed", "11", "--out-dir", path_str(&fx), "fixtures"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    fx
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn fixtures_write_every_input_file() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    for f in [
        "choices.csv",
        "campaigns.csv",
        "ate.csv",
        "decompose.csv",
        "calibration.csv",
        "fe_set.csv",
        "decompose.toml",
        "scenario.toml",
        "manifest.json",
    ] {
        assert!(fx.join(f).exists(), "{f} missing");
    }
    assert_eq!(
        header(&fx.join("choices.csv")),
        "subject_id,pair_id,profile_id,male,smile,bodyshot,chosen"
    );
}

#[test]
fn calibrate_recovers_fixture_preferences() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let out_dir = tmp.path().join("cal");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "calibrate",
        path_str(&fx.join("choices.csv")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_dir.join("coefficients.csv")).unwrap();
    let truth = [("male", -0.385), ("smile", 0.298), ("bodyshot", -0.191)];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (_, t) = truth.iter().find(|(n, _)| *n == f[0]).unwrap();
        let est: f64 = f[1].parse().unwrap();
        let se: f64 = f[2].parse().unwrap();
        assert!((est - t).abs() < 4.0 * se, "{line}");
    }
    for f in [
        "fixed_effects.csv",
        "fe_set.csv",
        "marginal_effects.csv",
        "fit_summary.csv",
        "manifest.json",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    assert_eq!(
        fs::read_to_string(out_dir.join("fe_set.csv")).unwrap().lines().count(),
        21
    );
}

#[test]
fn calibrate_with_fe_groups_and_restriction() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let out_dir = tmp.path().join("cal");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "calibrate",
        path_str(&fx.join("choices.csv")),
        "--interact-fe-groups",
        "--restrict-profiles",
        "p03",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let coefs = fs::read_to_string(out_dir.join("coefficients.csv")).unwrap();
    assert!(coefs.contains("male_x_low_fe"));
    assert!(!out_dir.join("marginal_effects.csv").exists());
    let fes = fs::read_to_string(out_dir.join("fixed_effects.csv")).unwrap();
    assert!(!fes.contains("p03"));
}

#[test]
fn pool_stats_reports_calibration_and_inequality() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let out_dir = tmp.path().join("ps");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "pool-stats",
        path_str(&fx.join("campaigns.csv")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        header(&out_dir.join("calibration.csv")),
        "decile,male_rate,smile_female,smile_male,bodyshot_female,bodyshot_male"
    );
    let ineq = fs::read_to_string(out_dir.join("inequality.csv")).unwrap();
    assert_eq!(ineq.lines().count(), 3);
    assert!(out_dir.join("weekly_gini.csv").exists());
}

#[test]
fn simulate_emits_exact_metric_columns() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("sim");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "simulate",
        "--n-sims",
        "5",
        "--n-lenders",
        "100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        header(&out_dir.join("metrics.csv")),
        "policy,sim_id,gini,bottom_tercile_share,efficiency,male_ratio,raw_male_share"
    );
    assert_eq!(
        fs::read_to_string(out_dir.join("metrics.csv")).unwrap().lines().count(),
        6
    );
}

#[test]
fn sweep_emits_one_aggregate_row_per_policy() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("sw");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "sweep",
        "--n-sims",
        "4",
        "--n-lenders",
        "100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let agg = fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 8);
}

#[test]
fn sweep_with_fixture_config_passes_ordering_checks() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let out_dir = tmp.path().join("sw");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "sweep",
        "--config",
        path_str(&fx.join("scenario.toml")),
        "--preset",
        "many-sims",
        "--check-ordering",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let orderings = fs::read_to_string(out_dir.join("orderings.csv")).unwrap();
    assert_eq!(orderings.lines().count(), 9);
}

#[test]
fn failed_ordering_exits_with_its_own_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("flat.toml");
    // without style preferences the Benchmark transform changes nothing, so
    // its Gini cannot fall strictly below Baseline
    fs::write(
        &cfg,
        "n_sims = 3\nn_lenders = 50\n[prefs]\nalpha_mean = 0.0\nalpha_sd = 0.0\nbeta_mean = 0.0\nbeta_sd = 0.0\ngamma_mean = 0.0\ngamma_sd = 0.0\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("sw");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "sweep",
        "--config",
        path_str(&cfg),
        "--policies",
        "Baseline,Benchmark",
        "--check-ordering",
    ]);
    assert_eq!(out.status.code(), Some(6), "{}", stderr(&out));
    let orderings = fs::read_to_string(out_dir.join("orderings.csv")).unwrap();
    assert!(orderings.lines().nth(1).unwrap().ends_with(",0"));
}

#[test]
fn histogram_synthesis_reports_infeasible_targets() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let out_dir = tmp.path().join("sw");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "sweep",
        "--n-sims",
        "10",
        "--synthesize-histogram",
        path_str(&fx.join("campaigns.csv")),
        "--histogram-draws",
        "100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let params = fs::read_to_string(out_dir.join("histogram_params.csv")).unwrap();
    assert_eq!(params.lines().count(), 7);
    let naive = params.lines().find(|l| l.starts_with("Naive")).unwrap();
    assert!(naive.contains("outside (0, 1)"), "{naive}");
    let hist = fs::read_to_string(out_dir.join("histogram.csv")).unwrap();
    assert!(hist.lines().any(|l| l.starts_with("Benchmark,99,")));
}

#[test]
fn decompose_contributions_add_up() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let out_dir = tmp.path().join("dc");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "--format",
        "json",
        "decompose",
        path_str(&fx.join("decompose.csv")),
        "--config",
        path_str(&fx.join("decompose.toml")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("decomposition.json")).unwrap()).unwrap();
    let contrib: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("contributions.json")).unwrap()).unwrap();
    let total = summary[0]["total_change"].as_f64().unwrap();
    let sum: f64 = contrib
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["contribution"].as_f64().unwrap())
        .sum();
    assert!((total - sum).abs() < 1e-10);
}

#[test]
fn decompose_names_collinear_column() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d.csv");
    let mut text = String::from("y,f,a,b\n");
    for i in 0..20 {
        let a = i as f64;
        text.push_str(&format!("{},{},{},{}\n", a * 0.3 + (i % 3) as f64, i % 2, a, 2.0 * a));
    }
    fs::write(&data, text).unwrap();
    let cfg = tmp.path().join("d.toml");
    fs::write(&cfg, "outcome = \"y\"\nfocal = \"f\"\n[groups]\ng = [\"a\", \"b\"]\n").unwrap();
    let out = lendsim(&[
        "--out-dir",
        path_str(&tmp.path().join("o")),
        "decompose",
        path_str(&data),
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains('b'));
}

#[test]
fn ate_recovers_fixture_effect() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let out_dir = tmp.path().join("ate");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "ate",
        path_str(&fx.join("ate.csv")),
        "--outcome",
        "y",
        "--treatment",
        "w",
        "--write-influence",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_dir.join("ate.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[0] - 2.0).abs() < 4.0 * row[1], "{text}");
    assert_eq!(
        fs::read_to_string(out_dir.join("influence.csv"))
            .unwrap()
            .lines()
            .count(),
        10_001
    );
}

#[test]
fn bias_study_writes_summary_and_per_sim_rows() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("bs");
    let out = lendsim(&[
        "--out-dir",
        path_str(&out_dir),
        "bias-study",
        "--n-sims",
        "20",
        "--n-units",
        "2000",
        "--per-sim",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(out_dir.join("bias_study_sims.csv"))
            .unwrap()
            .lines()
            .count(),
        21
    );
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "n_sims = 3\nlenders = 4\n").unwrap();
    let out = lendsim(&[
        "--out-dir",
        path_str(&tmp.path().join("o")),
        "simulate",
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("lenders"), "{}", stderr(&out));
}

#[test]
fn invalid_scenario_value_is_a_config_error() {
    let out = lendsim(&["--out-dir", "/tmp/unused-lendsim", "simulate", "--policy", "Nope"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_choices_report_the_line() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("c.csv");
    fs::write(
        &data,
        "subject_id,pair_id,profile_id,male,smile,bodyshot,chosen\ns1,0,p1,1,0,0,1\ns1,0,p2,0,x,0,0\n",
    )
    .unwrap();
    let out = lendsim(&[
        "--out-dir",
        path_str(&tmp.path().join("o")),
        "calibrate",
        path_str(&data),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    let out = lendsim(&["simulate", "--n-sims", "many"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let run = |name: &str, threads: &str| {
        let dir = tmp.path().join(name);
        let out = lendsim(&[
            "--seed",
            "5",
            "--threads",
            threads,
            "--out-dir",
            path_str(&dir),
            "ate",
            path_str(&fx.join("ate.csv")),
            "--outcome",
            "y",
            "--treatment",
            "w",
            "--write-influence",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        (
            fs::read(dir.join("ate.csv")).unwrap(),
            fs::read(dir.join("influence.csv")).unwrap(),
        )
    };
    assert_eq!(run("a", "1"), run("b", "3"));
}

#[test]
fn emitted_calibration_files_reproduce_builtin_results() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures(tmp.path());
    let cfg = tmp.path().join("files.toml");
    fs::write(
        &cfg,
        format!(
            "[fe_set]\nfile = {:?}\n\n[calib]\nfile = {:?}\n",
            path_str(&fx.join("fe_set.csv")),
            path_str(&fx.join("calibration.csv"))
        ),
    )
    .unwrap();
    let run = |name: &str, config: Option<&Path>| {
        let dir = tmp.path().join(name);
        let mut args = vec!["--seed", "9", "--out-dir", path_str(&dir), "sweep", "--n-sims", "6"];
        if let Some(c) = config {
            args.extend(["--config", path_str(c)]);
        }
        let out = lendsim(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(dir.join("metrics.csv")).unwrap()
    };
    assert_eq!(run("builtin", None), run("files", Some(&cfg)));
}
