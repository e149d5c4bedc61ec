use std::path::Path;
use std::process::{Command, Output};

fn nio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nio"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("NIO_SEED")
        .output()
        .expect("spawn nio")
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn field(line: &str, i: usize) -> f64 {
    line.split(',').nth(i).unwrap().parse().unwrap()
}

#[test]
fn scan_default_grid_has_41_rows() {
    let d = tempfile::tempdir().unwrap();
    let out = nio(
        d.path(),
        &["scan", "--n-steps", "10000", "--n-cells", "256", "--no-qr"],
    );
    assert!(
        out.status.code() == Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines = data_lines(&d.path().join("scan.csv"));
    assert_eq!(lines[0], "xi,lambda_base_mc,stderr,lambda_base_ulam,fiber_chi1,stderr,top_lambda,chi1_qr,chi2_qr,agreement");
    assert_eq!(lines.len(), 42);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("scan_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 41);
    let t = &summary["transition"];
    assert!(t["xi_plus"].as_f64().unwrap() < t["xi_minus"].as_f64().unwrap());
}

#[test]
fn scan_single_ulam_row_at_large_noise() {
    let d = tempfile::tempdir().unwrap();
    let out = nio(d.path(), &["scan", "--xi", "50", "--only", "ulam"]);
    assert_eq!(out.status.code(), Some(0));
    let lines = data_lines(&d.path().join("scan.csv"));
    assert_eq!(lines.len(), 2);
    assert!((field(&lines[1], 3) + 0.920558).abs() < 0.02);
    assert_eq!(lines[1].split(',').nth(1), Some(""));
}

#[test]
fn malformed_config_exits_1_without_files() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "a = 2\nthis is not a setting\n").unwrap();
    let out_dir = d.path().join("out");
    let out = nio(&out_dir, &["scan", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!out_dir.exists());

    std::fs::write(&cfg, "r = 2\n").unwrap();
    let out = nio(&out_dir, &["mapplot", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`r`"));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = Command::new(env!("CARGO_BIN_EXE_nio"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = Command::new(env!("CARGO_BIN_EXE_nio"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn zeroset_default_sweep_ends_at_known_root() {
    let d = tempfile::tempdir().unwrap();
    let out = nio(d.path(), &["zeroset"]);
    assert_eq!(out.status.code(), Some(0));
    let lines = data_lines(&d.path().join("zeroset.csv"));
    assert_eq!(lines[0], "a,s_lo,s_hi,steps,certified");
    assert_eq!(lines.len(), 129);
    let last = lines.last().unwrap();
    assert!(field(last, 1) >= 2.67834 && field(last, 2) <= 2.67835);
}

#[test]
fn zeroset_single_point_and_tight_tolerance() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        nio(d.path(), &["zeroset", "--a-range", "2", "2"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(data_lines(&d.path().join("zeroset.csv")).len(), 2);

    let out = nio(d.path(), &["zeroset", "--width-tol", "1e-12"]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)));
    for l in data_lines(&d.path().join("zeroset.csv")).iter().skip(1) {
        let certified = l.ends_with("true");
        assert!(field(l, 2) - field(l, 1) <= 1e-12 || !certified, "{l}");
    }
}

#[test]
fn mapplot_rows() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(nio(d.path(), &["mapplot"]).status.code(), Some(0));
    let lines = data_lines(&d.path().join("mapplot.csv"));
    assert_eq!(lines[0], "x,T(x)");
    assert_eq!(lines.len(), 2049);
    let find = |x: f64| {
        lines[1..]
            .iter()
            .find(|l| field(l, 0) == x)
            .map(|l| field(l, 1))
    };
    assert_eq!(find(1.0), Some(1.0));
    assert_eq!(find(0.5), Some(-0.875));
    assert_eq!(find(0.0), None);
}

#[test]
fn stationary_affine_is_flat() {
    let d = tempfile::tempdir().unwrap();
    let out = nio(
        d.path(),
        &["stationary", "--a", "2", "--s", "1", "--xi", "1"],
    );
    assert_eq!(out.status.code(), Some(0));
    let lines = data_lines(&d.path().join("stationary.csv"));
    assert_eq!(lines[0], "cell_left,cell_right,density");
    assert_eq!(lines.len(), 4097);
    assert!(lines[1..].iter().all(|l| (field(l, 2) - 0.5).abs() < 1e-12));
}

#[test]
fn verify_default_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = nio(d.path(), &["verify"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let lines = data_lines(&d.path().join("verify.csv"));
    assert_eq!(lines.len(), 6);
    assert!(lines[1..]
        .iter()
        .all(|l| l.ends_with("true") && l.contains(",true,")));
}

#[test]
fn bracket_writes_report() {
    let d = tempfile::tempdir().unwrap();
    let out = nio(
        d.path(),
        &[
            "bracket",
            "--n-cells",
            "1024",
            "--n-steps",
            "100000",
            "--xi-lo",
            "0.01",
            "--xi-hi",
            "5",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("bracket.json")).unwrap())
            .unwrap();
    let r = &v["report"];
    let (lo, hi) = (
        r["xi_plus"].as_f64().unwrap(),
        r["xi_minus"].as_f64().unwrap(),
    );
    assert!(0.01 < lo && lo < hi && hi < 5.0 && hi - lo <= 1e-2);
    assert_eq!(r["bracket_method"], "ulam_bisection");

    // both endpoints negative
    let out = nio(
        d.path(),
        &[
            "bracket",
            "--n-cells",
            "1024",
            "--n-steps",
            "100000",
            "--xi-lo",
            "1",
            "--xi-hi",
            "5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_precedence_and_header() {
    let d = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_nio"));
        c.arg("mapplot").arg("--out").arg(d.path()).args(extra);
        match env {
            Some(s) => c.env("NIO_SEED", s),
            None => c.env_remove("NIO_SEED"),
        };
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        std::fs::read_to_string(d.path().join("mapplot.csv")).unwrap()
    };
    assert!(run(None, &[]).contains("# seed=0\n"));
    assert!(run(Some("17"), &[]).contains("# seed=17\n"));
    assert!(run(Some("17"), &["--seed", "3"]).contains("# seed=3\n"));
    let bad = Command::new(env!("CARGO_BIN_EXE_nio"))
        .args(["mapplot", "--out"])
        .arg(d.path())
        .env("NIO_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
