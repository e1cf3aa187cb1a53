use omnisplat::cameras::{Camera, CameraModel};
use omnisplat::io::{load_ply, read_image, save_cameras, save_ply};
use omnisplat::model::Scene;
use std::path::Path;
use std::process::{Command, Output};

fn omnisplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnisplat"))
        .args(args)
        .env("OMNISPLAT_THREADS", "2")
        .output()
        .expect("spawn")
}

fn json_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_cameras(dir: &Path) -> std::path::PathBuf {
    let cams: Vec<Camera> = CameraModel::ALL
        .iter()
        .map(|m| Camera::for_fov(*m, 40, 24, 120.0).looking_at(nalgebra::Vector3::new(0.0, 0.0, -3.0), nalgebra::Vector3::zeros(), nalgebra::Vector3::y()))
        .collect();
    let path = dir.join("cameras.json");
    save_cameras(&cams, &path).unwrap();
    path
}

#[test]
fn gradcheck_passes_for_wide_fisheye() {
    let out = omnisplat(&["gradcheck", "--model", "fisheye_equidistant", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = json_lines(&out);
    assert_eq!(recs.len(), 5);
    assert!(recs.iter().all(|r| r["pass"] == true && r["max_rel_err"].as_f64().unwrap() < 1e-3));
}

#[test]
fn gradcheck_failure_exits_one() {
    let out = omnisplat(&["gradcheck", "--model", "panorama", "--fault-axis", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(json_lines(&out).iter().any(|r| r["pass"] == false));
}

#[test]
fn empty_scene_renders_background() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("empty.ply");
    save_ply(&Scene::new(vec![], [0.0; 3]), &ply).unwrap();
    let cams = write_cameras(dir.path());
    let out_dir = dir.path().join("frames");
    let out = omnisplat(&["render", "--scene", s(&ply), "--cameras", s(&cams), "--out", s(&out_dir), "--bg", "0.5,0,1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = json_lines(&out);
    assert_eq!(recs.len(), 3);
    for r in &recs {
        assert_eq!(r["num_intersections"], 0);
        let (img, _) = read_image(Path::new(r["image"].as_str().unwrap())).unwrap();
        assert_eq!((img.width, img.height), (40, 24));
        assert!(img.pixels.chunks(3).all(|p| p == [128.0 / 255.0, 0.0, 1.0]));
    }
}

#[test]
fn bench_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"n_gaussians": 15, "n_views": 2, "width": 32, "height": 32}"#).unwrap();
    let data = dir.path().join("data");
    assert!(omnisplat(&["synth", "--spec", s(&spec), "--out", s(&data)]).status.success());
    let ply = data.join("ground_truth.ply");
    let cams = data.join("cameras.json");
    let run = || {
        let out = omnisplat(&["bench", "--scene", s(&ply), "--cameras", s(&cams), "--repeat", "2"]);
        assert!(out.status.success());
        json_lines(&out)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x["num_intersections"], y["num_intersections"]);
        for key in ["fps", "max_frame_ms", "peak_aux_bytes"] {
            assert!(x[key].as_f64().unwrap() > 0.0, "{key}");
        }
    }
}

#[test]
fn synth_then_train_writes_scene_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"n_gaussians": 10, "n_views": 3, "width": 32, "height": 32, "model": "panorama"}"#).unwrap();
    let data = dir.path().join("data");
    let out = omnisplat(&["synth", "--spec", s(&spec), "--out", s(&data)]);
    assert!(out.status.success());
    assert_eq!(json_lines(&out)[0]["n_test_views"], 1);
    let config = dir.path().join("train.json");
    std::fs::write(&config, r#"{"iterations": 12, "eval_every": 6, "random_background": true}"#).unwrap();
    let trained = dir.path().join("trained.ply");
    let out = omnisplat(&[
        "train", "--dataset", s(&data), "--init", "synthetic", "--config", s(&config), "--out", s(&trained),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_ply(&trained).unwrap().len(), 10);
    let trace = std::fs::read_to_string(trained.with_extension("csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iteration,loss,test_psnr");
    assert_eq!(lines.len(), 13);
    assert!(lines[6].split(',').nth(2).is_some_and(|p| !p.is_empty()));
    assert!(lines[5].ends_with(','));

    let missing = omnisplat(&["train", "--dataset", s(&data), "--init", "ply", "--out", s(&trained)]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn bad_usage_exits_two() {
    for args in [&["render", "--bogus"][..], &["frobnicate"], &["gradcheck", "--model", "orthographic"]] {
        let out = omnisplat(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage") || String::from_utf8_lossy(&out.stderr).contains("possible values"));
    }
}

#[test]
fn operational_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cams = write_cameras(dir.path());
    let out = omnisplat(&["render", "--scene", "/nonexistent.ply", "--cameras", s(&cams), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let ascii = dir.path().join("ascii.ply");
    std::fs::write(&ascii, "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n").unwrap();
    let out = omnisplat(&["render", "--scene", s(&ascii), "--cameras", s(&cams), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("binary_little_endian required"));
}
