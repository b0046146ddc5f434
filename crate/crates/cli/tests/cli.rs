//! End-to-end runs of the `corpusseg` binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_corpusseg"))
        .args(args)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Metrics of a `--format csv` report.
fn metrics(args: &[&str]) -> (i32, BTreeMap<String, String>) {
    let mut full = args.to_vec();
    full.extend(["--format", "csv"]);
    let r = run(&full);
    let map = r
        .stdout
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    (r.code, map)
}

fn num(m: &BTreeMap<String, String>, key: &str) -> f64 {
    m.get(key)
        .unwrap_or_else(|| panic!("missing metric {key}"))
        .parse()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn eval_two_pixel_example() {
    let dir = tempfile::tempdir().unwrap();
    let pred = write(dir.path(), "pred.hard", "HARD 1 2 2\n1 1\n");
    let gt = write(dir.path(), "gt.hard", "HARD 1 2 2\n0 1\n");
    let r = run(&["eval", "--pred", &pred, "--gt", &gt]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("mean_iou = 2.50000000e-1"), "{}", r.stdout);
    let table = r.stdout.split("[table per_class]\n").nth(1).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows[0], "0,0,0,1,0.00000000e0,");
    assert_eq!(rows[1], "1,1,1,0,5.00000000e-1,2.00000000e0");
    assert!(r.stdout.contains("uoi_degenerate = 0\n"));

    let pred = write(dir.path(), "p2.hard", "HARD 2 2 2\n0 0\n1 0\n");
    let gt = write(dir.path(), "g2.hard", "HARD 2 2 2\n0 1\n1 1\n");
    let (code, m) = metrics(&["eval", "--pred", &pred, "--gt", &gt]);
    assert_eq!(code, 0);
    // Class 0: TP 1, FP 2, FN 0; class 1: TP 1, FP 0, FN 2.
    assert!((num(&m, "mean_iou") - 1.0 / 3.0).abs() < 1e-8);
    assert!((num(&m, "mean_uoi") - 3.0).abs() < 1e-8);
}

#[test]
fn eval_identical_files_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.hard", "HARD 2 3 3\n0 1 2\n2 1 0\n");
    let (code, m) = metrics(&["eval", "--pred", &a, &a, "--gt", &a, &a]);
    assert_eq!(code, 0);
    assert_eq!(num(&m, "mean_iou"), 1.0);
    assert_eq!(num(&m, "mean_uoi"), 1.0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.hard", "HARD 1 1 2\n0\n");
    assert_eq!(run(&["eval", "--pred", &a, &a, "--gt", &a]).code, 2);
    assert_eq!(run(&["gradcheck", "--trials", "0"]).code, 2);
    assert_eq!(run(&["gradcheck", "--format", "xml"]).code, 2);
    assert_eq!(run(&["nosuchcommand"]).code, 2);
    let bad = write(dir.path(), "bad.toml", "objective = \"uoi\"\nunknown_key = 3\n");
    assert_eq!(run(&["train", "--config", &bad]).code, 2);
    let broken = write(dir.path(), "broken.toml", "objective = \n");
    assert_eq!(run(&["train", "--config", &broken]).code, 2);
}

#[test]
fn unreadable_input_exits_one() {
    let r = run(&["eval", "--pred", "/nonexistent/a.hard", "--gt", "/nonexistent/b.hard"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("error"));
}

#[test]
fn gradcheck_passes_and_reproduces() {
    let args = ["gradcheck", "--trials", "5", "--seed", "3"];
    let (code, a) = metrics(&args);
    assert_eq!(code, 0);
    for key in ["iou", "uoi", "ce", "combined"] {
        assert!(num(&a, &format!("max_rel_error.{key}")) < 1e-5);
    }
    let (_, b) = metrics(&args);
    assert_eq!(a, b);
}

#[test]
fn gradcheck_default_run_passes() {
    let (code, m) = metrics(&["gradcheck"]);
    assert_eq!(code, 0);
    assert_eq!(m["passed"], "true");
}

#[test]
fn gradcheck_failing_tolerance_exits_one() {
    let (code, m) = metrics(&["gradcheck", "--trials", "2", "--tolerance", "0"]);
    assert_eq!(code, 1);
    assert_eq!(m["passed"], "false");
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let r = run(&["sweep", "--steps", "20", "--csv", p(&csv)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("check.uoi_fp_constant = true"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("FP,FN,IOU,UOI,dIOU_dFP,dIOU_dFN,dUOI_dFP,dUOI_dFN"));
    assert_eq!(lines.count(), 20 * 20);
    let (_, m) = metrics(&["sweep", "--steps", "20"]);
    assert!((num(&m, "spot.dIOU_dFP_at_zero") + 1e-3).abs() <= 1e-12);
}

#[test]
fn report_echoes_effective_configuration() {
    let r = run(&["gradcheck", "--trials", "1"]);
    assert_eq!(r.code, 0);
    for line in [
        "trials = 1",
        "height = 8",
        "width = 8",
        "classes = 5",
        "step = 0.00001",
        "tolerance = 0.00001",
    ] {
        assert!(r.stdout.contains(line), "missing {line:?} in\n{}", r.stdout);
    }
    assert!(r.stdout.contains("[metrics]"));
}

const SMALL: &str = "images = 3\nheight = 12\nwidth = 12\nclasses = 3\nfeature_dim = 4\niterations = 20\nwarmup_iterations = 10\nbranch_iterations = 10\n";

#[test]
fn train_writes_history_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.toml", SMALL);
    let history = dir.path().join("h.csv");
    let checkpoint = dir.path().join("ck.params");
    let args = [
        "train",
        "--config",
        &config,
        "--history",
        p(&history),
        "--checkpoint",
        p(&checkpoint),
        "--seed",
        "4",
    ];
    let (code, m) = metrics(&args);
    assert_eq!(code, 0);
    assert!(num(&m, "final.mean_iou").is_finite());
    let text = std::fs::read_to_string(&history).unwrap();
    assert!(text.starts_with("iteration,loss,meanIOU,bgFraction\n"));
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(std::fs::read_to_string(&checkpoint).unwrap().starts_with("PARAMS "));
    let (_, again) = metrics(&args);
    assert_eq!(
        m.iter().filter(|(k, _)| *k != "wall_time_s").collect::<Vec<_>>(),
        again.iter().filter(|(k, _)| *k != "wall_time_s").collect::<Vec<_>>()
    );
    assert_eq!(std::fs::read_to_string(&history).unwrap(), text);

    let warm = write(
        dir.path(),
        "warm.toml",
        &format!("{SMALL}warm_start = \"ck.params\"\nobjective = \"ce\"\n"),
    );
    assert_eq!(run(&["train", "--config", &warm]).code, 0);
}

#[test]
fn warmstart_reports_every_branch() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.toml", SMALL);
    let histories = dir.path().join("hist");
    let (code, m) = metrics(&["warmstart", "--config", &config, "--history-dir", p(&histories)]);
    assert_eq!(code, 0);
    for key in [
        "ce.final_mean_iou",
        "uoi.final_mean_iou",
        "combined.final_mean_iou",
        "uoi_ge_ce",
        "combined_ge_min",
    ] {
        assert!(m.contains_key(key), "missing {key}: {m:?}");
    }
    assert_eq!(std::fs::read_dir(&histories).unwrap().count(), 3);
}

fn gencorpus(dir: &Path, seed: &str, extra: &[&str]) {
    let mut args = vec![
        "gencorpus",
        "--out-dir",
        p(dir),
        "--images",
        "6",
        "--proposals",
        "4",
        "--height",
        "16",
        "--width",
        "16",
        "--coarse",
        "8",
        "--seed",
        seed,
    ];
    args.extend(extra);
    let r = run(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

fn rerank(root: &Path, extra: &[&str]) -> (i32, BTreeMap<String, String>) {
    let pred = root.join("pred");
    let proposals = root.join("proposals");
    let gt = root.join("gt");
    let mut args = vec![
        "rerank",
        "--pred-dir",
        p(&pred),
        "--proposal-dir",
        p(&proposals),
        "--gt-dir",
        p(&gt),
    ];
    args.extend(extra);
    metrics(&args)
}

#[test]
fn rerank_oracle_finds_included_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    gencorpus(dir.path(), "1", &["--include-gt"]);
    let (code, m) = rerank(dir.path(), &["--strategy", "oracle"]);
    assert_eq!(code, 0);
    assert_eq!(num(&m, "mean_iou"), 1.0);
}

#[test]
fn rerank_kl_selects_embedded_prediction() {
    let dir = tempfile::tempdir().unwrap();
    gencorpus(dir.path(), "2", &["--embed-pred"]);
    let root = dir.path();
    let r = run(&[
        "rerank",
        "--pred-dir",
        p(&root.join("pred")),
        "--proposal-dir",
        p(&root.join("proposals")),
        "--gt-dir",
        p(&root.join("gt")),
        "--strategy",
        "kl",
        "--background-penalty",
        "0",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let selections: Vec<&str> = r
        .stdout
        .split("[table selections]\n")
        .nth(1)
        .unwrap()
        .lines()
        .skip(1)
        .collect();
    assert_eq!(selections.len(), 6);
    for row in selections {
        let fields: Vec<&str> = row.split(',').collect();
        let image = fields[0];
        let chosen: usize = fields[1].parse().unwrap();
        let pred = std::fs::read_to_string(root.join("pred").join(format!("{image}.soft"))).unwrap();
        let member =
            std::fs::read_to_string(root.join("proposals").join(image).join(format!("q_{chosen:03}.soft"))).unwrap();
        assert_eq!(pred, member, "image {image}");
    }
}

#[test]
fn ranker_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let test_dir = dir.path().join("test");
    gencorpus(&train_dir, "10", &[]);
    gencorpus(&test_dir, "11", &[]);
    let model = dir.path().join("ranker.model");
    let (code, m) = metrics(&["trainranker", p(&train_dir), "--model-out", p(&model), "--epochs", "10"]);
    assert_eq!(code, 0);
    assert_eq!(num(&m, "dim"), 2.0 + 4.0 * 5.0);
    assert!(std::fs::read_to_string(&model).unwrap().starts_with("RANKMODEL 22 "));
    let (code, m) = rerank(&test_dir, &["--strategy", "ranker", "--model", p(&model)]);
    assert_eq!(code, 0);
    assert!(num(&m, "oracle.mean_iou") >= num(&m, "mean_iou"));
    assert_eq!(rerank(&test_dir, &["--strategy", "ranker"]).0, 2);
    assert_eq!(rerank(&test_dir, &["--strategy", "best"]).0, 2);
}
