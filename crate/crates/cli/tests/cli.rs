use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn derender(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_derender"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = derender(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = derender(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stdout));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root` except run records, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_dataset(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join(format!("ds{seed}"));
    ok(&[
        "gen-data", "--out", s(&out), "--subjects", "2", "--quadruplets", "6",
        "--test-poses", "2", "--image-size", "32", "--seed", &seed.to_string(),
    ]);
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--batch", "2", "--log-every", "0"];
    args.extend_from_slice(extra);
    ok(&args)
}

fn loss_totals(run: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,recon,translation,background,smoothness,total"));
    lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn gen_data_is_byte_identical_for_equal_seeds() {
    let dir = TempDir::new().unwrap();
    let a = small_dataset(dir.path(), 5);
    let b = dir.path().join("again");
    std::fs::rename(&a, &b).unwrap();
    let a = small_dataset(dir.path(), 5);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 1 + 2 * 4 * 6 + 2 * 2 * 2 * 2 + 2 * 2);
    assert!(sa == sb, "datasets differ");
    let c = small_dataset(dir.path(), 6);
    assert_ne!(sa["manifest.json"], snapshot(&c)["manifest.json"]);
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "gen-data");
    assert_eq!(run["config"]["dataset"]["seed"], 5);
}

#[test]
fn gen_data_creates_missing_directories_and_regenerates_in_place() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a/b/c");
    let stdout = ok(&["gen-data", "--out", s(&out), "--quadruplets", "2", "--test-poses", "1", "--image-size", "16"]);
    assert!(stdout.contains("manifest"));
    assert!(out.join("manifest.json").is_file());
    ok(&["gen-data", "--out", s(&out), "--quadruplets", "1", "--test-poses", "1", "--image-size", "16"]);
    assert_eq!(std::fs::read_dir(out.join("train")).unwrap().count(), 8);
}

#[test]
fn user_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let err = fails_with(&["gen-data", "--out", s(&dir.path().join("x")), "--quadruplets", "0"], 1);
    assert!(err.contains("empty dataset"), "{err}");
    fails_with(&["train", "--bogus"], 1);
    fails_with(&["frobnicate"], 1);
    let err = fails_with(&["eval", "--data", s(&dir.path().join("nowhere")), "--oracle"], 1);
    assert!(err.contains("nowhere"), "{err}");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "version = 7\n").unwrap();
    let err = fails_with(&["--config", s(&cfg), "defaults"], 1);
    assert!(err.contains("version 7"), "{err}");
    // a stray file makes the directory unusable as an output
    let busy = dir.path().join("busy");
    std::fs::create_dir(&busy).unwrap();
    std::fs::write(busy.join("notes.txt"), "keep").unwrap();
    fails_with(&["gen-data", "--out", s(&busy), "--quadruplets", "1"], 1);
    assert!(busy.join("notes.txt").is_file());
}

#[test]
fn help_exits_cleanly() {
    let out = ok(&["--help"]);
    for cmd in ["gen-data", "train", "eval", "render"] {
        assert!(out.contains(cmd), "{cmd}");
    }
    assert!(ok(&["render", "--help"]).contains("--export-obj"));
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    let out = dir.path().join("from_file");
    std::fs::write(
        &cfg,
        format!("version = 1\n[gen-data]\nout = {:?}\nquadruplets = 3\ntest-poses = 1\nimage-size = 16\n", s(&out)),
    )
    .unwrap();
    ok(&["--config", s(&cfg), "gen-data"]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["records"].as_array().unwrap().len(), 3);
    ok(&["--config", s(&cfg), "gen-data", "--quadruplets", "2"]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["records"].as_array().unwrap().len(), 2);
    assert_eq!(m["image_size"], 16);
}

#[test]
fn training_reduces_the_loss_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path(), 1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    train(&data, &a, &["--steps", "12", "--lr", "0.005"]);
    train(&data, &b, &["--steps", "12", "--lr", "0.005"]);
    let t = loss_totals(&a);
    assert_eq!(t.len(), 12);
    let head: f64 = t[..3].iter().sum();
    let tail: f64 = t[9..].iter().sum();
    assert!(tail < head, "{t:?}");
    assert!(snapshot(&a) == snapshot(&b), "training runs differ");
    assert!(a.join("checkpoints/final.json").is_file());
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "train");
    assert_eq!(run["config"]["train"]["steps"], 12);
    assert!(run["git_revision"].is_string());
}

#[test]
fn resuming_continues_the_step_counter_exactly() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path(), 2);
    let whole = dir.path().join("whole");
    let split = dir.path().join("split");
    train(&data, &whole, &["--steps", "6", "--checkpoint-every", "3"]);
    train(&data, &split, &["--steps", "3", "--checkpoint-every", "3"]);
    let ck = split.join("checkpoints/step_000003.json");
    train(&data, &split, &["--steps", "6", "--checkpoint-every", "3", "--resume", s(&ck)]);
    let steps: Vec<String> = std::fs::read_to_string(split.join("loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(steps, ["1", "2", "3", "4", "5", "6"]);
    assert_eq!(
        std::fs::read(whole.join("loss.csv")).unwrap(),
        std::fs::read(split.join("loss.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(whole.join("checkpoints/final.json")).unwrap(),
        std::fs::read(split.join("checkpoints/final.json")).unwrap()
    );
    assert!(whole.join("checkpoints/step_000003.json").is_file());
}

#[test]
fn free_ablation_is_recorded_and_labelled() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path(), 3);
    let run = dir.path().join("free");
    train(&data, &run, &["--steps", "2", "--no-pose-consistency"]);
    let ck = run.join("checkpoints/final.json");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&ck).unwrap()).unwrap();
    assert_eq!(v["train"]["pose_consistency"], false);
    let out = dir.path().join("eval");
    let table = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&out), "--protocol", "standard"]);
    assert!(table.contains("model free"), "{table}");
    assert!(out.join("standard.json").is_file());
    assert!(!out.join("hard.json").exists());
}

#[test]
fn oracle_eval_reports_follow_the_schema() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path(), 4);
    let out = dir.path().join("eval");
    ok(&["eval", "--data", s(&data), "--oracle", "--out", s(&out)]);
    for protocol in ["standard", "hard"] {
        let r: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join(format!("{protocol}.json"))).unwrap()).unwrap();
        assert_eq!(r["protocol"], protocol);
        assert_eq!(r["model"], "oracle");
        assert!(r["mean_iou"].as_f64().unwrap() >= 0.95);
        let samples = r["samples"].as_array().unwrap();
        assert_eq!(samples.len(), 2 * 2 * 2);
        for smp in samples {
            for key in ["sample", "view", "subject"] {
                assert!(smp[key].is_u64(), "{key}");
            }
            assert!((0.0..=1.0).contains(&smp["iou"].as_f64().unwrap()));
        }
        let csv = std::fs::read_to_string(out.join(format!("{protocol}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("sample,view,subject,iou"));
        assert_eq!(csv.lines().count(), 9);
    }
    let again = dir.path().join("again");
    ok(&["eval", "--data", s(&data), "--oracle", "--out", s(&again)]);
    assert!(snapshot(&out) == snapshot(&again), "eval outputs differ");
}

#[test]
fn eval_needs_a_predictor_and_canonical_images() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path(), 5);
    let out = dir.path().join("eval");
    let err = fails_with(&["eval", "--data", s(&data), "--out", s(&out)], 1);
    assert!(err.contains("--checkpoint"), "{err}");
    fails_with(&["eval", "--data", s(&data), "--oracle", "--checkpoint", "x.json"], 1);

    let path = data.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    m["canonical"] = serde_json::json!([]);
    std::fs::write(&path, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    let err = fails_with(&["eval", "--data", s(&data), "--oracle", "--protocol", "hard", "--out", s(&out)], 1);
    assert!(err.contains("canonical"), "{err}");
    ok(&["eval", "--data", s(&data), "--oracle", "--protocol", "standard", "--out", s(&out)]);
}

#[test]
fn render_writes_a_novel_view_and_part_meshes() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path(), 6);
    let run = dir.path().join("run");
    train(&data, &run, &["--steps", "1"]);
    let ck = run.join("checkpoints/final.json");
    let image = data.join("test/t00000_v0.png");
    let out = dir.path().join("render");
    ok(&[
        "render", "--checkpoint", s(&ck), "--data", s(&data), "--image", s(&image),
        "--azimuth", "+90deg", "--elevation", "-0.1rad", "--recolor", "--export-obj", "--out", s(&out),
    ]);
    let png = std::fs::read(out.join("render.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    // IHDR width and height
    assert_eq!(u32::from_be_bytes(png[16..20].try_into().unwrap()), 32);
    assert_eq!(u32::from_be_bytes(png[20..24].try_into().unwrap()), 32);
    for k in 0..5 {
        let obj = std::fs::read_to_string(out.join(format!("parts/part_{k}.obj"))).unwrap();
        assert!(obj.lines().any(|l| l.starts_with("f ")));
    }

    let front = dir.path().join("front");
    ok(&["render", "--checkpoint", s(&ck), "--data", s(&data), "--image", s(&image), "--out", s(&front)]);
    assert_ne!(std::fs::read(front.join("render.png")).unwrap(), png);
    assert!(!front.join("parts").exists());

    let err = fails_with(&["render", "--checkpoint", s(&ck), "--data", s(&data), "--image", s(&image), "--azimuth", "east"], 1);
    assert!(err.contains("angle"), "{err}");
    fails_with(&["render", "--checkpoint", s(&dir.path().join("none.json")), "--data", s(&data), "--image", s(&image)], 1);
    fails_with(&["render", "--checkpoint", s(&ck), "--data", s(&data), "--image", s(&image), "--ambient", "0.9"], 1);
}
