use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_CONFIG: &str = "\
# small enough to train in well under a second
diffusion.T = 20
diffusion.beta_lo = 0.01
diffusion.beta_hi = 0.4
diffusion.channels = 4, 8
diffusion.time_dim = 8
diffusion.embed_dim = 8
train.steps = 3
train.batch_size = 2
bbox.epochs = 2
";

fn fovkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fovkit"))
        .args(args)
        .env_remove("FOVKIT_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("run fovkit")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_args_prints_usage_and_exits_2() {
    let o = fovkit(&[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    for args in [
        vec!["simulate", "--in", "m", "--out", p(&out), "--count", "1", "--rfov", "0.7:0.5"],
        vec!["simulate", "--in", "m", "--out", p(&out), "--count", "1", "--dfov", "0.2"],
        vec!["phantom", "--count", "3", "--out", p(&out), "--unknown-flag", "1"],
        vec!["phantom", "--out", p(&out)],
        vec!["frobnicate"],
        vec![
            "recover",
            "--bbox-model",
            "a",
            "--outpaint-model",
            "b",
            "--in",
            "c",
            "--out",
            "d",
            "--dfov",
            "1:2",
        ],
    ] {
        let o = fovkit(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let o = fovkit(&[
        "simulate",
        "--in",
        p(&missing),
        "--out",
        p(&dir.path().join("o")),
        "--count",
        "2",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.jsonl"));
    let o = fovkit(&["--preset", "paper", "phantom", "--count", "1", "--out", p(&dir.path().join("ph"))]);
    assert_eq!(code(&o), 1);
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "diffusion.T = lots\n").unwrap();
    let o = fovkit(&["--config", p(&cfg), "selftest"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn selftest_passes_and_names_checks() {
    let o = fovkit(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 10);
}

#[test]
fn selftest_reports_corrupted_schedule() {
    let o = fovkit(&["selftest", "--inject-fault", "corrupt-schedule"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL schedule_invariants"));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, env_seed: Option<&str>, flag: Option<&str>| -> Vec<u8> {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fovkit"));
        cmd.args(["phantom", "--count", "2", "--out", p(&out)]).env_remove("FOVKIT_SEED");
        if let Some(s) = env_seed {
            cmd.env("FOVKIT_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(out.join("ph00000_hu.fg01")).unwrap()
    };
    let env = run("a", Some("41"), None);
    assert_eq!(env, run("b", None, Some("41")));
    assert_ne!(env, run("c", None, Some("42")));
    // The flag wins over the environment.
    assert_eq!(run("d", Some("7"), Some("41")), env);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.cfg");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let c = p(&cfg);
    let ok = |args: &[&str]| {
        let mut full = vec!["--config", c, "--jobs", "1"];
        full.extend_from_slice(args);
        let o = fovkit(&full);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["phantom", "--count", "4", "--seed", "3", "--out", p(&d.join("ph"))]);
    let ph = d.join("ph/manifest.jsonl");
    ok(&["simulate", "--in", p(&ph), "--out", p(&d.join("sim")), "--count", "6", "--seed", "4"]);
    let sim = d.join("sim/manifest.jsonl");
    let rows = std::fs::read_to_string(&sim).unwrap();
    assert_eq!(rows.lines().count(), 6);
    for key in [
        "\"id\"",
        "\"untruncated\"",
        "\"truncated\"",
        "\"fov_mask\"",
        "\"small_mask\"",
        "\"dfov_crop\"",
        "\"gt_bbox\"",
        "\"fov_spec\"",
    ] {
        assert!(rows.lines().next().unwrap().contains(key), "{key}");
    }
    ok(&["train-bbox", "--data", p(&sim), "--out", p(&d.join("m/bbox.bin")), "--seed", "5"]);
    ok(&["train-outpainter", "--data", p(&sim), "--out", p(&d.join("m/den.bin")), "--seed", "6"]);
    assert_eq!(&std::fs::read(d.join("m/bbox.bin")).unwrap()[..4], b"BB01");
    assert_eq!(&std::fs::read(d.join("m/den.bin")).unwrap()[..4], b"DN01");

    let first = rows.lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(first).unwrap();
    let truncated = d.join("sim").join(v["truncated"].as_str().unwrap());
    let small = d.join("sim").join(v["small_mask"].as_str().unwrap());
    ok(&[
        "outpaint",
        "--model",
        p(&d.join("m/den.bin")),
        "--in",
        p(&truncated),
        "--mask",
        p(&small),
        "--n",
        "2",
        "--seed",
        "7",
        "--out-dir",
        p(&d.join("op")),
    ]);
    assert!(d.join("op/candidate_1.fg01").exists());
    ok(&[
        "recover",
        "--bbox-model",
        p(&d.join("m/bbox.bin")),
        "--outpaint-model",
        p(&d.join("m/den.bin")),
        "--in",
        p(&truncated),
        "--n",
        "3",
        "--seed",
        "8",
        "--out",
        p(&d.join("rec")),
    ]);
    let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("rec/selection.json")).unwrap()).unwrap();
    assert_eq!(sel["distances"].as_array().unwrap().len(), 3);
    assert!(sel["selected_index"].as_u64().unwrap() < 3);
    assert!(d.join("rec/selected.fg01").exists() && d.join("rec/candidate_2.fg01").exists());

    ok(&[
        "evaluate",
        "--data",
        p(&sim),
        "--bbox-model",
        p(&d.join("m/bbox.bin")),
        "--outpaint-model",
        p(&d.join("m/den.bin")),
        "--n",
        "2",
        "--seed",
        "9",
        "--out",
        p(&d.join("ev")),
    ]);
    let csv = std::fs::read_to_string(d.join("ev/report.csv")).unwrap();
    assert!(csv.starts_with("id,level_class,method,muscle_truth,muscle_pred,sat_truth,sat_pred,dice_muscle,dice_sat"));
    assert_eq!(csv.lines().count(), 1 + 6 * 3);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    for m in ["truncated", "SI", "MI"] {
        assert!(json[m]["all"]["rmse_muscle"].is_number(), "{m}");
    }
    let before = tree(&d.join("ev"));
    ok(&[
        "evaluate",
        "--data",
        p(&sim),
        "--bbox-model",
        p(&d.join("m/bbox.bin")),
        "--outpaint-model",
        p(&d.join("m/den.bin")),
        "--n",
        "2",
        "--seed",
        "9",
        "--out",
        p(&d.join("ev")),
    ]);
    assert_eq!(before, tree(&d.join("ev")));
}
