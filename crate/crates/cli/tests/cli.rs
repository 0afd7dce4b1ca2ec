use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn carbseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carbseg")).args(args).output().unwrap()
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(last).unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = carbseg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["status"], "ok");
    s
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = carbseg(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(summary(&out)["status"], "error");
}

#[test]
fn help_exits_zero() {
    assert_eq!(carbseg(&["--help"]).status.code(), Some(0));
    assert_eq!(carbseg(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = carbseg(&["train", "--data", p(&dir.path().join("absent")), "--out", p(&dir.path().join("c.bin"))]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(&out);
    assert_eq!(s["status"], "error");
    assert_eq!(s["exit_code"], 2);
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[training]\nlr0 = -1.0\n").unwrap();
    let out = carbseg(&["tile", "--config", p(&cfg), "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(&cfg, "[training]\nlearning_rate = 1.0\n").unwrap();
    let out = carbseg(&["tile", "--config", p(&cfg), "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn classical_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let scene = d("scene.toml");
    std::fs::write(&scene, "width = 128\nheight = 128\ncarbide_count = [6, 10]\nseed = 3\n").unwrap();
    let g = ok(&["generate", "--config", p(&scene), "--n", "4", "--out", p(&d("data"))]);
    assert_eq!(g["scenes"], 4);

    let b = ok(&["--threads", "2", "baseline", "--data", p(&d("data")), "--out", p(&d("base"))]);
    assert!(b["image_dice_median"].as_f64().unwrap() > 0.5);
    for i in 0..4 {
        assert!(d("base").join(format!("scene_{i:03}_pred.png")).exists());
    }

    let e = ok(&["evaluate", "--pred", p(&d("base")), "--target", p(&d("data")), "--out", p(&d("base.csv")), "--tile-size", "64"]);
    assert_eq!(e["dice"]["n"], 16);
    let table = std::fs::read_to_string(d("base.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("image,tile,dice"));
    assert_eq!(table.lines().count(), 17);

    let c = ok(&["compare", "--a", p(&d("base.csv")), "--b", p(&d("base.csv")), "--out", p(&d("cmp.json")), "--pairs", p(&d("pairs.csv"))]);
    assert_eq!(c["pairs"], 16);
    assert!(c["test_error"].is_string());

    let q = ok(&["quantify", "--mask", p(&d("data").join("scene_000_mask.png")), "--pixel-size-nm", "6.98", "--out", p(&d("q.csv")), "--histogram", p(&d("h.csv"))]);
    assert!(q["count"].as_u64().unwrap() >= 1);
    assert!(d("h.csv").exists());

    let t = ok(&["tile", "--data", p(&d("data")), "--out", p(&d("tiles")), "--tile-size", "32"]);
    assert_eq!(t["tiles"], 64);
    let s = ok(&["split", "--tiles", p(&d("tiles")), "--out", p(&d("splits")), "--seed", "1"]);
    assert_eq!((s["train"].as_u64(), s["val"].as_u64(), s["test"].as_u64()), (Some(52), Some(6), Some(6)));
    // rerunning over existing outputs is safe
    let again = ok(&["split", "--tiles", p(&d("tiles")), "--out", p(&d("splits")), "--seed", "1"]);
    assert_eq!(s, again);
}

#[test]
fn network_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let scene = d("scene.toml");
    std::fs::write(&scene, "width = 64\nheight = 64\ncarbide_count = [3, 6]\naxis_range = [1.5, 4.0]\n").unwrap();
    ok(&["generate", "--config", p(&scene), "--n", "3", "--out", p(&d("data"))]);
    ok(&["tile", "--data", p(&d("data")), "--out", p(&d("tiles")), "--tile-size", "16"]);
    ok(&["split", "--tiles", p(&d("tiles")), "--out", p(&d("splits")), "--fractions", "0.6,0.2,0.2"]);
    let cfg = d("run.toml");
    std::fs::write(
        &cfg,
        "[tiling]\ntile_size = 16\n[unet]\nencoder_blocks = 1\nbase_features = 4\n[training]\nlr0 = 0.01\nbatch_size = 4\nmax_epochs = 3\n",
    )
    .unwrap();
    let t = ok(&["train", "--config", p(&cfg), "--data", p(&d("splits")), "--out", p(&d("net.bin")), "--report", p(&d("report.csv"))]);
    assert_eq!(t["epochs"], 3);
    assert_eq!(std::fs::read_to_string(d("report.csv")).unwrap().lines().count(), 4);

    let c = ok(&["calibrate", "--checkpoint", p(&d("net.bin")), "--data", p(&d("splits").join("val")), "--out", p(&d("calib.json"))]);
    assert!(c["temperature"].as_f64().unwrap() > 0.0);

    let r = ok(&["reliability", "--checkpoint", p(&d("net.bin")), "--data", p(&d("splits").join("val")), "--out", p(&d("rel.csv")), "--calibration", p(&d("calib.json"))]);
    assert_eq!(r["temperature"], c["temperature"]);
    assert_eq!(std::fs::read_to_string(d("rel.csv")).unwrap().lines().count(), 11);

    let pr = ok(&["predict", "--config", p(&cfg), "--checkpoint", p(&d("net.bin")), "--data", p(&d("data")), "--out", p(&d("pred")), "--temperature", "2.0"]);
    assert_eq!(pr["images"], 3);
    ok(&["evaluate", "--pred", p(&d("pred")), "--target", p(&d("data")), "--out", p(&d("unet.csv")), "--tile-size", "16"]);

    let space = d("space.toml");
    std::fs::write(&space, "lr0 = [0.001, 0.01]\nearly_stop_patience = [1, 2]\nbase_features = [2, 4]\nencoder_blocks = [1]\nmax_epochs = 1\n").unwrap();
    let h = ok(&["hpo", "--config", p(&cfg), "--space", p(&space), "--budget", "2", "--data", p(&d("splits")), "--out", p(&d("trials.csv")), "--objective", "val-dice"]);
    assert_eq!(h["trials"], 2);
    assert!(h["best"].is_object());

    let out = carbseg(&["predict", "--checkpoint", p(&d("net.bin")), "--data", p(&d("data")), "--out", p(&d("pred")), "--temperature", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}
