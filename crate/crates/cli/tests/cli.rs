use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use tempfile::TempDir;
use vhl_core::variance_hawkes::{simulate_clustered_gaussian, ClusteredGaussianModel};
use vhl_core::HawkesParams;

fn vhl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vhl"))
        .args(args)
        .output()
        .expect("spawn vhl")
}

fn vhl_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", dir.to_str().unwrap()]);
    vhl(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn assert_single_line_error(o: &Output) {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("vhl: error:"), "{err}");
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = [
        "simulate",
        "--v",
        "1",
        "--alpha",
        "1",
        "--beta",
        "2",
        "--T",
        "1",
        "--seed",
        "7",
        "--sde",
        "clustered-ou",
    ];
    assert!(vhl_in(&a, &args).status.success());
    assert!(vhl_in(&b, &args).status.success());
    let fa = read_dir_sorted(&a);
    assert_eq!(
        fa.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(),
        ["arrivals.csv", "manifest.json", "path.csv", "sde.csv"]
    );
    assert_eq!(fa, read_dir_sorted(&b));

    let c = tmp.path().join("c");
    let d = tmp.path().join("d");
    assert!(vhl_in(
        &c,
        &["simulate", "--v", "20", "--alpha", "1", "--beta", "2", "--seed", "7"]
    )
    .status
    .success());
    assert!(vhl_in(
        &d,
        &["simulate", "--v", "20", "--alpha", "1", "--beta", "2", "--seed", "8"]
    )
    .status
    .success());
    assert_ne!(
        fs::read(c.join("path.csv")).unwrap(),
        fs::read(d.join("path.csv")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = TempDir::new().unwrap();
    let run = |dir: &Path, threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_vhl"))
            .env("VHL_THREADS", threads)
            .args([
                "conjecture",
                "--n-samples",
                "300",
                "--panels",
                "2",
                "--out",
                dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(&tmp.path().join("one"), "1");
    run(&tmp.path().join("four"), "4");
    assert_eq!(
        read_dir_sorted(&tmp.path().join("one")),
        read_dir_sorted(&tmp.path().join("four"))
    );
}

#[test]
fn missing_required_flag_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = vhl_in(tmp.path(), &["simulate", "--alpha", "1", "--beta", "2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--v"));
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn alpha_equal_beta_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = vhl_in(tmp.path(), &["moments", "--alpha", "2", "--beta", "2"]);
    assert_single_line_error(&o);
    assert!(stderr(&o).contains("alpha must differ from beta"));
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn moments_table_matches_mean_n() {
    let tmp = TempDir::new().unwrap();
    let o = vhl_in(tmp.path(), &["moments", "--T", "1", "--dt", "0.25"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("moments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,e_N,e_L,e_L2,e_NL,e_N2,provenance"));
    let at_one: Vec<Vec<&str>> = csv
        .lines()
        .filter(|l| l.starts_with("1,"))
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(at_one.len(), 2);
    // E[N_1] = 1 + e^{-1} at (v, α, β) = (1, 1, 2)
    let expected = 1.0 + (-1.0f64).exp();
    for row in &at_one {
        let e_n: f64 = row[1].parse().unwrap();
        assert!((e_n - expected).abs() < 1e-9, "{row:?}");
    }
    for f in [
        "discrepancy.csv",
        "limits.json",
        "rhs_comparison.json",
        "manifest.json",
    ] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn verify_ito_smoke_run_is_fast() {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    let o = vhl_in(
        tmp.path(),
        &["verify-ito", "--n-runs", "1", "--res", "1024"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(5));
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let traj = fs::read_to_string(tmp.path().join("run_00_trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 1025);
}

#[test]
fn verify_ito_zero_jumps_gives_zero_errors() {
    let tmp = TempDir::new().unwrap();
    let o = vhl_in(
        tmp.path(),
        &[
            "verify-ito",
            "--v",
            "1e-12",
            "--alpha",
            "1",
            "--beta",
            "2",
            "--n-runs",
            "2",
            "--res",
            "64",
            "--format",
            "json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for run in ["run_00_error.json", "run_01_error.json"] {
        let rows: serde_json::Value =
            serde_json::from_slice(&fs::read(tmp.path().join(run)).unwrap()).unwrap();
        let rows = rows.as_array().unwrap();
        assert_eq!(rows.len(), 65);
        assert!(rows.iter().all(|r| r["pct_error"] == 0.0));
    }
}

#[test]
fn conjecture_handles_two_samples_and_param_grid() {
    let tmp = TempDir::new().unwrap();
    let o = vhl_in(
        &tmp.path().join("tiny"),
        &["conjecture", "--n-samples", "2", "--panels", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let grid = tmp.path().join("grid.csv");
    fs::write(&grid, "v,alpha,beta,v0\n1,1,2,\n3,1,2,4\n").unwrap();
    let o = vhl_in(
        &tmp.path().join("grid"),
        &[
            "conjecture",
            "--n-samples",
            "500",
            "--param-grid",
            grid.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(tmp.path().join("grid/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().nth(2).unwrap().starts_with("1,3,4,1,2,"));

    fs::write(&grid, "v,alpha,beta\n1,2,2\n").unwrap();
    let o = vhl_in(
        &tmp.path().join("bad"),
        &["conjecture", "--param-grid", grid.to_str().unwrap()],
    );
    assert_single_line_error(&o);
}

#[test]
fn empty_inputs_fail_cleanly() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out");
    for cmd in ["fit", "qq", "profile"] {
        let o = vhl_in(&out, &[cmd, "--input", empty.to_str().unwrap()]);
        assert_single_line_error(&o);
    }
    let o = vhl_in(
        &out,
        &[
            "qq",
            "--input",
            tmp.path().join("missing.csv").to_str().unwrap(),
        ],
    );
    assert_single_line_error(&o);
    assert!(!out.exists());
}

#[test]
fn fit_recovers_synthetic_fixture() {
    let tmp = TempDir::new().unwrap();
    let truth = ClusteredGaussianModel {
        a: 0.0,
        b: 1.0,
        sigma_hat: 0.03,
        params: HawkesParams::with_initial_intensity(2.0, 3.0, 0.5, 1.0).unwrap(),
        horizon: 1.0,
        steps_per_path: 1,
    };
    let returns = simulate_clustered_gaussian(&truth, 400, 17).unwrap();
    let mut csv = String::from("date,close\n");
    let mut level = 100.0f64;
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    for (i, r) in std::iter::once(0.0).chain(returns).enumerate() {
        level *= r.exp();
        csv.push_str(&format!("{},{level}\n", start + Days::new(i as u64)));
    }
    let input = tmp.path().join("prices.csv");
    fs::write(&input, csv).unwrap();
    let out = tmp.path().join("fit");
    let o = vhl_in(
        &out,
        &[
            "fit",
            "--input",
            input.to_str().unwrap(),
            "--grid-v",
            "0.25,2,16",
            "--grid-alpha",
            "0.5",
            "--grid-beta",
            "1",
            "--grid-a",
            "0",
            "--b",
            "1",
            "--sigma-hat",
            "0.03",
            "--n-sim",
            "2",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["grid_points"], 3);
    assert_eq!(fit["n_returns"], 400);
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("v,v0,alpha,beta,a,score"));
    assert_eq!(grid.lines().count(), 4);
    assert_eq!(fit["best"]["params"]["v"], 2.0);
}

#[test]
fn qq_and_profile_fixtures() {
    let tmp = TempDir::new().unwrap();
    let vols = tmp.path().join("vols.csv");
    let mut csv = String::from("timestamp,volume\n");
    for day in 1..=2 {
        for minute in 0..60 {
            let v = if minute == 30 { 50 } else { 5 + day };
            csv.push_str(&format!("2019-05-0{day} 10:{minute:02},{v}\n"));
        }
    }
    fs::write(&vols, csv).unwrap();

    let o = vhl_in(
        &tmp.path().join("qq"),
        &[
            "qq",
            "--input",
            vols.to_str().unwrap(),
            "--n-quantiles",
            "9",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let qq = fs::read_to_string(tmp.path().join("qq/qq.csv")).unwrap();
    assert_eq!(qq.lines().count(), 10);
    assert!(qq.starts_with("p,empirical,exponential\n0.1,"));

    let o = vhl_in(
        &tmp.path().join("prof"),
        &["profile", "--input", vols.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let prof = fs::read_to_string(tmp.path().join("prof/profile.csv")).unwrap();
    assert_eq!(prof.lines().count(), 61);
    assert_eq!(prof.lines().nth(1), Some("0,6.5,2"));
    assert_eq!(prof.lines().nth(31), Some("30,50,2"));
}
