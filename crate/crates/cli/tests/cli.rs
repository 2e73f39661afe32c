use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn texturestat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texturestat"))
        .args(args)
        .output()
        .expect("spawn texturestat")
}

fn ok(args: &[&str]) -> Output {
    let out = texturestat(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_gray(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
    let img = image::GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)]));
    img.save(path).unwrap();
}

fn gen_data(dir: &Path, n: &str) {
    ok(&["gen-data", "--n", n, "--size", "64", "--classes", "3", "--seed", "2", "--out", s(dir)]);
}

#[test]
fn unknown_flags_are_rejected() {
    let out = texturestat(&["gen-data", "--n", "2", "--out", "x", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn errors_go_to_stderr_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    let out = texturestat(&["demo-equalize", "--input", s(&missing), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("nope.png"), "{err}");
}

#[test]
fn equalize_constant_image_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.png");
    write_gray(&input, 6, 5, |_, _| 90);
    let out = dir.path().join("eq");
    let run = ok(&["demo-equalize", "--input", s(&input), "--levels", "16", "--out", s(&out)]);
    let config: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(config["levels"], 16);
    let img = image::open(out.join("equalized.png")).unwrap().to_luma8();
    let first = img.get_pixel(0, 0)[0];
    assert!(img.pixels().all(|p| p[0] == first));
    let hist = fs::read_to_string(out.join("equalized_hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 2, "{hist}");
    assert!(out.join("original_hist.csv").exists());
}

#[test]
fn equalize_full_range_mapping_is_nondecreasing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ramp.png");
    write_gray(&input, 16, 16, |x, y| (100 + (x * 7 + y * 3) % 40) as u8);
    let out = dir.path().join("eq");
    ok(&["demo-equalize", "--input", s(&input), "--levels", "256", "--out", s(&out)]);
    let mapping: Vec<f64> = fs::read_to_string(out.join("mapping.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mapping.len(), 256);
    assert!(mapping.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn operator_dumps_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("img.png");
    write_gray(&input, 12, 12, |x, y| ((x * 21 + y * 13) % 256) as u8);
    let i = s(&input);

    let q = dir.path().join("q");
    ok(&["qco-dump", "--input", i, "--levels", "4", "--mode", "2d", "--out", s(&q)]);
    let csv = fs::read_to_string(q.join("counting.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("level,level2,normalized_count"));
    let total: f64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(q.join("encoding.tsr").exists());

    let t = dir.path().join("t");
    ok(&["tem", "--input", i, "--levels", "8", "--out-channels", "3", "--out", s(&t)]);
    for ch in 0..3 {
        assert!(t.join(format!("channel_{ch:02}.png")).exists());
    }
    assert!(t.join("level_graph.tsr").exists());

    let p = dir.path().join("p");
    ok(&["ptfem-dump", "--input", i, "--levels", "3", "--scales", "1,2", "--width", "4", "--out", s(&p)]);
    let rows = fs::read_to_string(p.join("branches.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 2 * 4);
}

#[test]
fn train_eval_round_trip_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    gen_data(&data, "10");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"iters": 50, "eval_every": 2, "n_levels_1d": 16}"#).unwrap();
    let run = dir.path().join("run");
    let out = ok(&["train", "--data", s(&data), "--config", s(&cfg), "--iters", "3", "--out", s(&run)]);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["config"]["iters"], 3, "flags override the file");
    assert_eq!(printed["config"]["n_levels_1d"], 16);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("iter,lr,loss,val_miou"));
    assert_eq!(metrics.lines().count(), 4);

    let out = ok(&["eval", "--data", s(&data), "--checkpoint", s(&run.join("checkpoint")), "--out", "-"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let miou = report["miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"checkpoint\""));
}

#[test]
fn config_with_unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    gen_data(&data, "5");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"iters": 2, "learning_rate": 0.1}"#).unwrap();
    let out = texturestat(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn ablate_is_repeatable_and_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    gen_data(&data, "10");
    let args = |out: &str| -> Vec<String> {
        ["ablate", "--data", s(&data), "--grid", "levels", "--levels", "8,16,32", "--iters", "2", "--out", out]
            .iter()
            .map(|a| a.to_string())
            .collect()
    };
    let first = dir.path().join("a.csv");
    ok(&args(s(&first)).iter().map(String::as_str).collect::<Vec<_>>());
    let second = ok(&args("-").iter().map(String::as_str).collect::<Vec<_>>());
    let csv = fs::read_to_string(&first).unwrap();
    assert_eq!(csv.as_bytes(), second.stdout.as_slice());
    assert_eq!(csv.lines().count(), 4);

    // scale 8 on a 64x64 image leaves 1x1 regions at stride 8: that row fails, the sweep goes on
    let out = ok(&["ablate", "--data", s(&data), "--grid", "scales", "--scales", "1,8", "--iters", "1", "--out", "-"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ends_with(','), "{}", rows[0]);
    assert!(rows[1].contains("too small"), "{}", rows[1]);
}

#[test]
fn grad_check_reports_each_point() {
    let out = ok(&["grad-check", "--ops", "qco1d,total_loss", "--points", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(!texturestat(&["grad-check", "--ops", "nonsense"]).status.success());
}
