use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dld(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dld"))
        .args(args)
        .current_dir(dir)
        .env("DLD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dld(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn csv_rows(dir: &Path, name: &str) -> Vec<Vec<String>> {
    read(dir, name).lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

/// A cloud corpus of `count` shapes and a model trained without shape 3.
fn setup(count: &str, landmarks: &str) -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--kind", "cloud", "--count", count, "--landmarks", landmarks, "--seed", "7", "--out", "corpus"]);
    ok(d, &["train", "--corpus", "corpus", "--k", "5", "--exclude", "3", "--out", "m.ssm"]);
    tmp
}

#[test]
fn train_leaves_one_out_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--kind", "contour", "--count", "40", "--landmarks", "56", "--out", "hands"]);
    let stdout = ok(d, &["train", "--corpus", "hands", "--exclude", "6", "--k", "10", "--out", "a.ssm"]);
    assert!(stdout.contains("trained K = 10 from 39 shapes"), "{stdout}");
    ok(d, &["train", "--corpus", "hands", "--exclude", "6", "--k", "10", "--out", "b.ssm"]);
    assert_eq!(std::fs::read(d.join("a.ssm")).unwrap(), std::fs::read(d.join("b.ssm")).unwrap());
    assert!(read(d, "a.ssm.config").contains("exclude = 6"));
}

#[test]
fn two_shape_corpus_clamps_k_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--kind", "contour", "--count", "2", "--landmarks", "30", "--out", "pair"]);
    let out = dld(d, &["train", "--corpus", "pair", "--k", "5", "--out", "m.ssm"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("trained K = 1"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn manifest_lists_corpus_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--kind", "cloud", "--count", "5", "--landmarks", "20", "--out", "c"]);
    std::fs::write(d.join("list.txt"), "# three shapes\nc/shape_000.txt\nc/shape_002.txt\nc/shape_004.txt\n").unwrap();
    let stdout = ok(d, &["train", "--corpus", "list.txt", "--k", "2", "--out", "m.ssm"]);
    assert!(stdout.contains("from 3 shapes"), "{stdout}");
}

fn points(dir: &Path, name: &str) -> Vec<Vec<f64>> {
    read(dir, name).lines().map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect()).collect()
}

fn max_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn correspondences(dir: &Path, name: &str) -> Vec<(usize, usize, f64)> {
    read(dir, name)
        .lines()
        .map(|l| {
            let t: Vec<&str> = l.split(' ').collect();
            (t[0].parse().unwrap(), t[1].parse().unwrap(), t[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn register_with_defaults_recovers_sampled_target() {
    let tmp = setup("20", "80");
    let d = tmp.path();
    let stdout = ok(d, &["sample", "--model", "m.ssm", "--seed", "11", "--out", "t.txt"]);
    let diameter: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(read(d, "t.txt.truth.txt").starts_with("scale = "));
    ok(d, &["register", "--model", "m.ssm", "--target", "t.txt", "--out", "r"]);
    for f in ["r.deformed.txt", "r.corr.txt", "r.report.txt", "r.trace.csv", "r.config"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let err = max_error(&points(d, "r.deformed.txt"), &points(d, "t.txt"));
    assert!(err < 1e-3 * diameter, "max error {err}");
    let corr = correspondences(d, "r.corr.txt");
    assert_eq!(corr.len(), 80);
    assert!(corr.iter().all(|&(n, m, p)| n == m && (0.0..=1.0).contains(&p)));

    // The run stops on the default tolerance.
    let trace: Vec<f64> = csv_rows(d, "r.trace.csv").iter().map(|r| r[1].parse().unwrap()).collect();
    let (prev, last) = (trace[trace.len() - 2], trace[trace.len() - 1]);
    assert!((last - prev).abs() / (prev.abs() + 1.0) < 1e-4);
    assert!(read(d, "r.report.txt").contains("converged = true"));
    assert!(read(d, "r.config").contains("tol = 0.0001"));

    // Same config and seed, same bytes.
    ok(d, &["register", "--config", "r.config", "--out", "s"]);
    for suffix in ["deformed.txt", "corr.txt", "report.txt", "trace.csv"] {
        assert_eq!(read(d, &format!("r.{suffix}")), read(d, &format!("s.{suffix}")), "{suffix}");
    }
}

#[test]
fn outlier_target_registers_with_large_omega() {
    let tmp = setup("20", "80");
    let d = tmp.path();
    ok(d, &["sample", "--model", "m.ssm", "--seed", "12", "--out", "t.txt"]);
    let stdout = ok(d, &["corrupt", "--input", "t.txt", "--kind", "outliers", "--snr", "1", "--out", "noisy.txt"]);
    assert!(stdout.contains("80 points in, 160 points out"), "{stdout}");
    ok(d, &["register", "--model", "m.ssm", "--target", "noisy.txt", "--omega", "0.30", "--out", "r"]);
    let corr = correspondences(d, "r.corr.txt");
    assert_eq!(corr.len(), 160);
    let right = corr[..80].iter().filter(|c| c.0 == c.1).count();
    assert!(right >= 76, "{right}/80 inliers matched");
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = setup("10", "30");
    let d = tmp.path();
    std::fs::write(d.join("run.cfg"), "model = m.ssm\ntarget = corpus/shape_003.txt\nmax-iters = 3 # short\n").unwrap();
    ok(d, &["register", "--config", "run.cfg", "--max-iters", "5", "--out", "r"]);
    assert!(read(d, "r.report.txt").contains("iterations = 5"));
    let echo = read(d, "r.config");
    assert!(echo.contains("max-iters = 5") && echo.contains("model = m.ssm"));
    std::fs::write(d.join("bad.cfg"), "nonsense = 1\n").unwrap();
    assert_eq!(dld(d, &["register", "--config", "bad.cfg"]).status.code(), Some(2));
}

#[test]
fn grid_of_eleven_by_eleven_has_121_rows() {
    let tmp = setup("10", "30");
    let d = tmp.path();
    ok(d, &["grid", "--model", "m.ssm", "--truth", "corpus/shape_003.txt", "--max-iters", "15", "--out", "g.csv"]);
    let rows = csv_rows(d, "g.csv");
    assert_eq!(rows.len(), 121);
    assert!(d.join("g.csv.config").exists());
}

#[test]
fn bench_of_four_sizes_has_eight_rows() {
    let tmp = setup("10", "200");
    let d = tmp.path();
    let stdout = ok(
        d,
        &[
            "bench",
            "--model",
            "m.ssm",
            "--sizes",
            "50,100,150,200",
            "--nystrom-samples",
            "40",
            "--max-iters",
            "10",
            "--out",
            "b.csv",
        ],
    );
    let rows = csv_rows(d, "b.csv");
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| r[1] == "dense").count(), 4);
    assert!(stdout.contains("nystrom: per-iteration log-log slope"), "{stdout}");
}

#[test]
fn evaluate_sweeps_with_baseline() {
    let tmp = setup("10", "40");
    let d = tmp.path();
    ok(
        d,
        &[
            "evaluate",
            "--model",
            "m.ssm",
            "--truth",
            "corpus/shape_003.txt",
            "--kind",
            "replicate",
            "--copies",
            "3",
            "--sweep",
            "0.005,0.02",
            "--trials",
            "2",
            "--baseline",
            "gm-icp",
            "--out",
            "e.csv",
        ],
    );
    let rows = csv_rows(d, "e.csv");
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r[4].parse::<f64>().unwrap())));
    assert_eq!(rows.iter().filter(|r| r[0] == "gm-icp").count(), 4);
    let again = tempfile::tempdir().unwrap();
    std::fs::copy(d.join("e.csv.config"), again.path().join("e.cfg")).unwrap();
    let copy = |name: &str| {
        let to: PathBuf = again.path().join(name);
        std::fs::create_dir_all(to.parent().unwrap()).unwrap();
        std::fs::copy(d.join(name), to).unwrap();
    };
    copy("m.ssm");
    copy("corpus/shape_003.txt");
    ok(again.path(), &["evaluate", "--config", "e.cfg"]);
    assert_eq!(read(d, "e.csv"), read(again.path(), "e.csv"));
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let tmp = setup("10", "30");
    let d = tmp.path();
    let code = |args: &[&str]| dld(d, args).status.code();
    assert_eq!(code(&["register", "--model", "m.ssm", "--target", "missing.txt", "--out", "r"]), Some(3));
    assert_eq!(
        code(&["register", "--model", "m.ssm", "--target", "corpus/shape_000.txt", "--omega", "2", "--out", "r"]),
        Some(2)
    );
    assert_eq!(code(&["register", "--bogus"]), Some(2));
    assert_eq!(code(&["register", "--model", "m.ssm"]), Some(2));
    std::fs::write(d.join("broken.ssm"), b"not a model").unwrap();
    assert_eq!(code(&["register", "--model", "broken.ssm", "--target", "corpus/shape_000.txt", "--out", "r"]), Some(3));
    std::fs::write(d.join("flat.txt"), "0 0 0\n1 1 1\n").unwrap();
    assert_eq!(code(&["register", "--model", "m.ssm", "--target", "flat.txt", "--out", "r"]), Some(3));
}
