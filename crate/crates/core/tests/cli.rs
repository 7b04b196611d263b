use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dhformer::metrics::MetricReport;
use dhformer::trainer::load_checkpoint;
use dhformer::verify::{sha256_hex, GOLDEN_PROBE_LOSS_SHA256};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhformer")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mini(dir: &TempDir) -> PathBuf {
    let out = dir.path().join("mini");
    let o = run(&["mini-dataset", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("manifest.tsv")
}

fn quick_checkpoint(dir: &TempDir, manifest: &Path, ablation: &str) -> PathBuf {
    let cfg = dir.path().join(format!("{ablation}.conf"));
    fs::write(&cfg, "# one short epoch\nepochs = 1\nbatch_size = 16\npre_resize = true\n").unwrap();
    let ck = dir.path().join(format!("{ablation}.dhfm"));
    let o = run(&[
        "train", "--manifest", s(manifest), "--config", s(&cfg), "--out", s(&ck), "--ablation", ablation,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    ck
}

#[test]
fn synth_writes_every_pair_deterministically() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["synth", "--manifest", s(&manifest), "--out-dir", s(out), "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("seed = 3"));
    }
    let pngs: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .collect();
    assert_eq!(pngs.len(), 64);
    let csv = fs::read_to_string(a.join("haze_params.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
    assert_eq!(csv.lines().next().unwrap(), "image,split,airlight,beta");
    for e in pngs {
        assert_eq!(fs::read(e.path()).unwrap(), fs::read(b.join(e.file_name())).unwrap());
    }
    assert_eq!(csv, fs::read_to_string(b.join("haze_params.csv")).unwrap());
}

#[test]
fn synth_bad_path_exits_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.tsv");
    let o = run(&["synth", "--manifest", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.tsv"), "{}", stderr(&o));
    let o = run(&["synth", "--manifest", s(&missing), "--out-dir", s(dir.path()), "--a-range", "1,0.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn oracle_eval_reports_high_psnr_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let report = dir.path().join("oracle.csv");
    let o = run(&["eval", "--oracle", "--manifest", s(&manifest), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let mean = out.lines().find(|l| l.starts_with("mean,")).unwrap();
    let mpsnr: f64 = mean.split(',').nth(1).unwrap().parse().unwrap();
    assert!(mpsnr >= 60.0, "{mean}");
    let parsed = MetricReport::from_csv(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed.rows.len(), 8);
    assert_eq!(MetricReport::from_csv(&parsed.to_csv()).unwrap(), parsed);
}

#[test]
fn eval_without_test_split_exits_2() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let text = fs::read_to_string(&manifest).unwrap();
    let train_only: String = text.lines().filter(|l| !l.ends_with("test")).map(|l| format!("{l}\n")).collect();
    let m2 = manifest.with_file_name("train_only.tsv");
    fs::write(&m2, train_only).unwrap();
    let o = run(&["eval", "--oracle", "--manifest", s(&m2), "--report", s(&dir.path().join("r.csv"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("test split is empty"), "{}", stderr(&o));
}

#[test]
fn train_writes_checkpoint_and_loss_log() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let ck = quick_checkpoint(&dir, &manifest, "residual_only");
    let loaded = load_checkpoint(&ck).unwrap();
    assert_eq!(loaded.params.census(), 27_048);
    assert!(loaded.params.entries().all(|(n, _, _)| !n.starts_with("att.")));
    let log = fs::read_to_string(format!("{}.loss.csv", ck.display())).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,epoch,loss");
    assert_eq!(log.lines().count(), 1 + 4);

    let report = dir.path().join("r.csv");
    let o = run(&["eval", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(MetricReport::from_csv(&fs::read_to_string(&report).unwrap()).unwrap().rows.len(), 8);
}

#[test]
fn train_prints_resolved_config_with_flag_overrides() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let cfg = dir.path().join("c.conf");
    fs::write(&cfg, "epochs = 1\nseed = 4\npre_resize = true\nbatch_size = 32\n").unwrap();
    let ck = dir.path().join("m.dhfm");
    let o = run(&[
        "train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&ck), "--seed", "9", "--optimizer", "sgd",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for line in ["seed = 9", "optimizer = sgd", "epochs = 1", "batch_size = 32", "learning_rate = 0.001"] {
        assert!(out.lines().any(|l| l == line), "{line} missing from\n{out}");
    }
}

#[test]
fn train_input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let ck = dir.path().join("m.dhfm");
    let o = run(&["train", "--manifest", s(&dir.path().join("missing.tsv")), "--out", s(&ck)]);
    assert_eq!(code(&o), 2);
    let manifest = mini(&dir);
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "epochs = 1\n# fine\nlearnig_rate = 0.1\n").unwrap();
    let o = run(&["train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&ck)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3") && stderr(&o).contains("learnig_rate"), "{}", stderr(&o));
    let o = run(&["train", "--manifest", s(&manifest), "--out", s(&ck), "--ablation", "none"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_3_with_batch_index() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let cfg = dir.path().join("wild.conf");
    fs::write(&cfg, "epochs = 3\nbatch_size = 16\npre_resize = true\noptimizer = sgd\nlearning_rate = 1e30\n").unwrap();
    let o = run(&["train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at batch"), "{}", stderr(&o));
}

#[test]
fn dehaze_keeps_names_and_sizes() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let ck = quick_checkpoint(&dir, &manifest, "full");
    let inputs = dir.path().join("in");
    fs::create_dir_all(&inputs).unwrap();
    let clear = manifest.parent().unwrap().join("clear");
    let first = fs::read_dir(&clear).unwrap().next().unwrap().unwrap().path();
    fs::copy(&first, inputs.join("scene.png")).unwrap();
    let small = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([(x * 16) as u8, (y * 16) as u8, 90]));
    small.save(inputs.join("tiny.png")).unwrap();
    fs::write(inputs.join("broken.png"), b"not a png").unwrap();

    let out = dir.path().join("out");
    let o = run(&["dehaze", "--checkpoint", s(&ck), "--input", s(&inputs), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning") && stderr(&o).contains("broken.png"));
    for (name, dims) in [("scene_dehazed.png", (32, 32)), ("tiny_dehazed.png", (16, 16))] {
        let img = image::open(out.join(name)).unwrap();
        assert_eq!((img.width(), img.height()), dims);
    }
    assert!(!out.join("broken_dehazed.png").exists());

    let single = dir.path().join("single");
    let o = run(&["dehaze", "--checkpoint", s(&ck), "--input", s(&inputs.join("tiny.png")), "--out", s(&single)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(single.join("tiny_dehazed.png").exists());
}

#[test]
fn checkpoint_mismatch_exits_4() {
    let dir = TempDir::new().unwrap();
    let manifest = mini(&dir);
    let ck = quick_checkpoint(&dir, &manifest, "full");
    let img = dir.path().join("x.png");
    image::RgbImage::from_pixel(16, 16, image::Rgb([120, 130, 140])).save(&img).unwrap();
    let out = dir.path().join("o");
    let o = run(&["dehaze", "--checkpoint", s(&ck), "--input", s(&img), "--out", s(&out), "--ablation", "residual_only"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let mut bytes = fs::read(&ck).unwrap();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let at = text.find("\"shape\":[").unwrap() + "\"shape\":[".len();
    bytes[at] = if bytes[at] == b'9' { b'8' } else { bytes[at] + 1 };
    let bad = dir.path().join("bad.dhfm");
    fs::write(&bad, bytes).unwrap();
    let o = run(&["dehaze", "--checkpoint", s(&bad), "--input", s(&img), "--out", s(&out)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    fs::write(&bad, b"JUNK").unwrap();
    let o = run(&["dehaze", "--checkpoint", s(&bad), "--input", s(&img), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn verify_passes_and_lists_suites_with_timing() {
    let o = run(&["verify"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    for suite in ["gradients", "scattering", "metrics", "oracle evaluation", "transformer invariants", "checkpoint"] {
        let line = out.lines().find(|l| l.starts_with("PASS") && l.contains(suite)).unwrap();
        assert!(line.contains('s'), "{line}");
    }
    assert!(out.contains("6 of 6 suites passed"));
}

#[test]
fn verify_with_injected_fault_exits_1_naming_the_primitive() {
    let o = run(&["verify", "--inject-fault", "softmax"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("gradients") && err.contains("softmax"), "{err}");
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL gradients")));
    let o = run(&["verify", "--inject-fault", "tanh"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn help_documents_flags_and_unknown_flags_are_rejected() {
    for (sub, flags) in [
        ("synth", &["--manifest", "--out-dir", "--seed", "--a-range", "--beta-range"][..]),
        ("train", &["--manifest", "--config", "--out", "--ablation", "--probe"][..]),
        ("dehaze", &["--checkpoint", "--input", "--out", "--overlap"][..]),
        ("eval", &["--checkpoint", "--manifest", "--report", "--oracle"][..]),
        ("verify", &["--inject-fault", "--training"][..]),
        ("mini-dataset", &["--out"][..]),
    ] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0);
        let help = stdout(&o);
        for f in flags {
            assert!(help.contains(f), "{sub} --help lacks {f}");
        }
        let o = run(&[sub, "--no-such-flag"]);
        assert_eq!(code(&o), 2);
    }
}

#[test]
fn probe_reproduces_the_golden_loss_curve() {
    let dir = TempDir::new().unwrap();
    let ck = dir.path().join("probe.dhfm");
    let log = dir.path().join("probe.csv");
    let o = run(&["train", "--probe", "--out", s(&ck), "--loss-csv", s(&log)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hash = sha256_hex(&fs::read(&log).unwrap());
    assert_eq!(hash, GOLDEN_PROBE_LOSS_SHA256);
    assert!(stdout(&o).contains(&hash));
}
