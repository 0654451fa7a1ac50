use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgnms_core::embedding::train::initial_provider;
use sgnms_core::{Provider64, TrainHyper};
use tempfile::TempDir;

fn sgnms(args: &[&str]) -> Output {
    sgnms_env(args, &[])
}

fn sgnms_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sgnms"));
    cmd.args(args).env_remove("SGNMS_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sgnms(args);
    assert!(
        out.status.success(),
        "sgnms {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

/// A small oracle-embedding corpus written by `synth`.
fn small_corpus(dir: &TempDir, scenes: usize, extra: &str) -> String {
    let cfg = path(dir, "corpus.cfg");
    fs::write(&cfg, format!("scene_count = {scenes}\n{extra}")).unwrap();
    let out = path(dir, "corpus");
    ok(&["synth", "--config", &cfg, "--seed", "5", "--out-dir", &out]);
    out
}

#[test]
fn nms_matches_golden_output() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "kept.txt");
    let stdout = ok(&[
        "nms",
        "--algo",
        "sg-linear",
        "--nt",
        "0.5",
        "--t",
        "1.7",
        "--dets",
        &data("demo_dets.txt"),
        "--embeddings",
        &data("demo_dets.txt.sge"),
        "--out",
        &out,
    ]);
    assert_eq!(read(&out), read(data("demo_sg_linear.golden")));
    assert!(stdout.contains("kept 6 of 29"));
    assert!(Path::new(&format!("{out}.sge")).is_file());
    assert!(Path::new(&format!("{out}.manifest.json")).is_file());

    ok(&[
        "nms",
        "--algo",
        "greedy",
        "--dets",
        &data("demo_dets.txt"),
        "--out",
        &out,
    ]);
    assert_eq!(read(&out).lines().count(), 4);
}

#[test]
fn nms_on_single_detection_reproduces_input() {
    let dir = TempDir::new().unwrap();
    let one = path(&dir, "one.txt");
    let first = read(data("demo_dets.txt")).lines().next().unwrap().to_string() + "\n";
    fs::write(&one, &first).unwrap();
    let out = path(&dir, "out.txt");
    for algo in ["greedy", "soft"] {
        ok(&["nms", "--algo", algo, "--dets", &one, "--out", &out]);
        assert_eq!(read(&out), first);
    }
}

#[test]
fn nms_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "o.txt");
    let missing_emb = sgnms(&[
        "nms",
        "--algo",
        "sg-linear",
        "--t",
        "1.7",
        "--dets",
        &data("demo_dets.txt"),
        "--out",
        &out,
    ]);
    assert_eq!(code(&missing_emb), 3);

    let missing_file = sgnms(&[
        "nms",
        "--algo",
        "greedy",
        "--dets",
        &path(&dir, "absent.txt"),
        "--out",
        &out,
    ]);
    assert_eq!(code(&missing_file), 2);

    let bad = path(&dir, "bad.txt");
    fs::write(&bad, "Car 0 0 0 1 2 3\n").unwrap();
    assert_eq!(
        code(&sgnms(&["nms", "--algo", "greedy", "--dets", &bad, "--out", &out])),
        2
    );

    assert_eq!(
        code(&sgnms(&[
            "nms",
            "--algo",
            "sg-linear",
            "--dets",
            &data("demo_dets.txt"),
            "--out",
            &out
        ])),
        2
    );
    assert_eq!(code(&sgnms(&["no-such-command"])), 2);
    assert_eq!(code(&sgnms(&["--help"])), 0);
}

#[test]
fn eval_of_ground_truth_as_detections_is_perfect() {
    let dir = TempDir::new().unwrap();
    let dets = path(&dir, "perfect.txt");
    let lines: String = read(data("demo_gts.txt"))
        .lines()
        .map(|l| format!("{l} 0.9000\n"))
        .collect();
    fs::write(&dets, lines).unwrap();
    let out = path(&dir, "report");
    let stdout = ok(&[
        "eval",
        "--dets",
        &dets,
        "--gts",
        &data("demo_gts.txt"),
        "--metric",
        "ap",
        "--out",
        &out,
    ]);
    assert_eq!(stdout.lines().next(), Some("ap=1.0000"));
    assert!(stdout.contains("fp=0\nfn=0"));
    for f in ["report.txt", "pr_curve.csv", "recall_by_bin.csv", "manifest.json"] {
        assert!(Path::new(&out).join(f).is_file(), "{f} missing");
    }
    assert!(read(Path::new(&out).join("pr_curve.csv")).starts_with("recall,precision\n"));
}

#[test]
fn eval_recall_bins_layout() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir, 20, "");
    let stdout = ok(&[
        "eval",
        "--dets",
        &format!("{corpus}/det"),
        "--gts",
        &format!("{corpus}/gt"),
        "--metric",
        "recall-bins",
    ]);
    let keys: Vec<&str> = stdout.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert!(
        keys.iter().all(|k| k.starts_with("recall_") || k.starts_with("count_")),
        "{keys:?}"
    );
    assert!(keys.contains(&"recall_0.0000_0.2000"));
    assert!(keys.contains(&"recall_0.5000_1.0000"));
}

fn recall_columns(eval: &str) -> Vec<(String, String)> {
    eval.lines()
        .filter_map(|l| l.split_once('='))
        .filter(|(k, _)| k.starts_with("recall_"))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn single_point_sweep_equals_eval() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir, 30, "");
    let (dets, gts) = (format!("{corpus}/det"), format!("{corpus}/gt"));
    let csv_path = path(&dir, "sweep.csv");
    ok(&[
        "sweep",
        "--algo",
        "sg-linear",
        "--param-grid",
        "1.7",
        "--dets",
        &dets,
        "--gts",
        &gts,
        "--out",
        &csv_path,
    ]);
    let eval = ok(&[
        "eval",
        "--algo",
        "sg-linear",
        "--t",
        "1.7",
        "--dets",
        &dets,
        "--gts",
        &gts,
    ]);

    let csv = read(&csv_path);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(lines.next().is_none());
    let cell = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    let kv = |k: &str| {
        eval.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap()
            .to_string()
    };
    assert_eq!(cell("param"), "1.7000");
    assert_eq!(cell("ap"), kv("ap"));
    assert_eq!(cell("lamr"), kv("lamr"));
    for (k, v) in recall_columns(&eval) {
        assert_eq!(cell(&k), v, "{k}");
    }
}

#[test]
fn sweep_over_ranges_has_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir, 20, "");
    let (dets, gts) = (format!("{corpus}/det"), format!("{corpus}/gt"));
    for (algo, grid) in [
        ("sg-constant", "0.7:1.2:0.1"),
        ("sg-linear", "1.5:2.0:0.1"),
        ("sg-square", "2.5:3.0:0.1"),
        ("greedy", "0.3:0.8:0.1"),
    ] {
        let out = path(&dir, &format!("{algo}.csv"));
        ok(&[
            "sweep",
            "--algo",
            algo,
            "--param-grid",
            grid,
            "--dets",
            &dets,
            "--gts",
            &gts,
            "--out",
            &out,
        ]);
        let csv = read(&out);
        assert_eq!(csv.lines().count(), 7, "{algo}");
        assert!(csv.lines().next().unwrap().ends_with("kept_subset_of_prev"));
        assert!(csv.lines().nth(1).unwrap().ends_with(",-"));
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a"), path(&dir, "b"));
    ok(&["synth", "--seed", "9", "--out-dir", &a]);
    ok(&["synth", "--seed", "9", "--out-dir", &b]);
    let det = |root: &str| read(Path::new(root).join("det/000.txt"));
    assert_eq!(det(&a), det(&b));
    assert_eq!(read(format!("{a}/stats.csv")), read(format!("{b}/stats.csv")));
    assert!(Path::new(&a).join("det/000.txt.sge").is_file());
    assert!(Path::new(&a).join("gt/000.txt.desc").is_file());
    assert_eq!(read(format!("{a}/stats.csv")).lines().count(), 101);
}

#[test]
fn synth_exit_codes() {
    let dir = TempDir::new().unwrap();
    let tight = path(&dir, "tight.cfg");
    fs::write(
        &tight,
        "image_width = 300\nimage_height = 200\nobjects_per_scene = 6,6\nplacement_attempts = 5\n",
    )
    .unwrap();
    assert_eq!(
        code(&sgnms(&["synth", "--config", &tight, "--out-dir", &path(&dir, "t")])),
        4
    );

    let bad = path(&dir, "bad.cfg");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(
        code(&sgnms(&["synth", "--config", &bad, "--out-dir", &path(&dir, "b")])),
        2
    );
}

fn curve_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn train_embed_with_no_iterations_writes_the_seeded_initialization() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir, 10, "embedding_mode = none\n");
    let out = path(&dir, "p.txt");
    ok(&[
        "train-embed",
        "--scenes",
        &corpus,
        "--iters",
        "0",
        "--seed",
        "4",
        "--out",
        &out,
    ]);
    let hyper = TrainHyper {
        seed: 4,
        ..TrainHyper::default()
    };
    let expected = initial_provider::<f64>(12, &hyper).unwrap();
    assert_eq!(read(&out), expected.to_text());
    assert!(Provider64::from_text(&read(&out)).is_ok());
}

#[test]
fn train_embed_reduces_loss_and_rho_one_disables_separation() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir, 40, "embedding_mode = none\n");
    let out = path(&dir, "p.txt");
    ok(&["train-embed", "--scenes", &corpus, "--iters", "300", "--out", &out]);
    let rows = curve_rows(&read(format!("{out}.loss.csv")));
    assert_eq!(rows.len(), 301);
    assert!(rows.last().unwrap()[3] < rows[0][3]);

    let curve = path(&dir, "rho1.csv");
    ok(&[
        "train-embed",
        "--scenes",
        &corpus,
        "--iters",
        "100",
        "--rho",
        "1.0",
        "--out",
        &out,
        "--curve",
        &curve,
    ]);
    assert!(curve_rows(&read(&curve)).iter().all(|r| r[2] == 0.0));
}

#[test]
fn train_embed_divergence_exits_5() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "c.cfg");
    fs::write(&cfg, "scene_count = 10\nembedding_mode = none\n").unwrap();
    let corpus = path(&dir, "c");
    ok(&["synth", "--config", &cfg, "--out-dir", &corpus]);
    let out = sgnms(&[
        "train-embed",
        "--scenes",
        &corpus,
        "--lr",
        "1e308",
        "--iters",
        "50",
        "--out",
        &path(&dir, "p.txt"),
    ]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn plot_draws_one_polyline_per_curve() {
    let dir = TempDir::new().unwrap();
    let a = path(&dir, "a.csv");
    let b = path(&dir, "b.csv");
    fs::write(&a, "recall,precision\n0,1\n0.5,0.9\n1,0.4\n").unwrap();
    fs::write(&b, "nt,ap,lamr\n0.3,0.5,0.4\n0.4,0.6,0.3\n").unwrap();
    let svg = path(&dir, "p.svg");
    ok(&["plot", "--curves", &a, &b, "--out", &svg, "--title", "demo"]);
    let text = read(&svg);
    assert_eq!(text.matches("<polyline").count(), 3);
    assert_eq!(text.matches(r#"class="legend-entry""#).count(), 3);

    let empty = path(&dir, "empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&sgnms(&["plot", "--curves", &empty, "--out", &svg])), 2);
}

#[test]
fn replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir, 15, "");
    let csv = path(&dir, "s.csv");
    ok(&[
        "sweep",
        "--algo",
        "greedy",
        "--param-grid",
        "0.3:0.7:0.2",
        "--dets",
        &format!("{corpus}/det"),
        "--gts",
        &format!("{corpus}/gt"),
        "--out",
        &csv,
    ]);
    let before = read(&csv);
    fs::remove_file(&csv).unwrap();
    ok(&["replay", &format!("{csv}.manifest.json")]);
    assert_eq!(read(&csv), before);

    let synth_dir = PathBuf::from(&corpus);
    let before = read(synth_dir.join("det/03.txt"));
    fs::remove_dir_all(synth_dir.join("det")).unwrap();
    ok(&["replay", &synth_dir.join("manifest.json").to_string_lossy()]);
    assert_eq!(read(synth_dir.join("det/03.txt")), before);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir, 40, "");
    let run = |threads: &str, name: &str| {
        let out = path(&dir, name);
        let args = [
            "sweep",
            "--algo",
            "sg-linear",
            "--param-grid",
            "1.5:2.0:0.1",
            "--dets",
            &format!("{corpus}/det"),
            "--gts",
            &format!("{corpus}/gt"),
            "--out",
            &out,
        ];
        let o = sgnms_env(&args, &[("SGNMS_THREADS", threads)]);
        (code(&o), fs::read_to_string(&out).unwrap_or_default())
    };
    let (c1, one) = run("1", "one.csv");
    let (c4, four) = run("4", "four.csv");
    assert_eq!((c1, c4), (0, 0));
    assert_eq!(one, four);
    assert_eq!(run("zero", "bad.csv").0, 2);
}
