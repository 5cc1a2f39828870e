use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gsforge::camera::{CameraModel, CameraSpec, Intrinsics};
use gsforge::image_io::{read_png_rgb, FloatRaster};
use gsforge::raster::{render, RenderOptions};
use gsforge::splat::ply::{load_ply, save_ply};
use gsforge::splat::{GaussianScene, SplatRecord};
use gsforge::transform::{SimilarityFile, SimilarityTransform};
use nalgebra::{Rotation3, Vector3};
use tempfile::TempDir;

fn gsforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsforge")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn blob_scene() -> GaussianScene {
    let mut splats = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            let mean = Vector3::new(i as f64 * 0.2 - 0.3, j as f64 * 0.2 - 0.3, 0.1 * ((i + j) % 3) as f64);
            splats.push(SplatRecord::isotropic(mean, 0.08, 0.8, [0.2 + 0.2 * i as f64, 0.3, 0.9 - 0.2 * j as f64], 1));
        }
    }
    GaussianScene::new(splats, 1, None).unwrap()
}

fn camera() -> CameraModel {
    let k = Intrinsics::from_fov(40, 30, 1.0, 0.8);
    CameraModel::look_at(k, Vector3::new(0.3, -0.4, 2.5), Vector3::zeros(), -Vector3::y())
}

fn write_json(path: &str, v: &impl serde::Serialize) {
    fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
}

#[test]
fn align_recovers_a_transform() {
    let dir = TempDir::new().unwrap();
    let t = SimilarityTransform::new(Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner(), Vector3::new(1.0, -2.0, 0.5), 1.7).unwrap();
    let src = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.3, 0.7, 0.2]];
    let dst: Vec<[f64; 3]> = src.iter().map(|s| t.apply(&Vector3::from(*s)).into()).collect();
    write_json(&p(&dir, "a.json"), &src);
    write_json(&p(&dir, "b.json"), &dst);
    let o = gsforge(&["align", "--src", &p(&dir, "a.json"), "--dst", &p(&dir, "b.json"), "--out", &p(&dir, "t.json")]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["residual"].as_f64().unwrap() < 1e-9);
    assert!((v["scale"].as_f64().unwrap() - 1.7).abs() < 1e-9);
    let f: SimilarityFile = serde_json::from_str(&fs::read_to_string(p(&dir, "t.json")).unwrap()).unwrap();
    assert!((f.to_transform().unwrap().translation - t.translation).norm() < 1e-9);

    // the same correspondences as pairs
    let pairs: Vec<_> = src.iter().zip(&dst).map(|(s, d)| serde_json::json!({"source": s, "target": d})).collect();
    write_json(&p(&dir, "pairs.json"), &pairs);
    assert!(gsforge(&["align", "--pairs", &p(&dir, "pairs.json")]).status.success());
}

#[test]
fn degenerate_alignment_fails_with_status_one() {
    let dir = TempDir::new().unwrap();
    let line = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    write_json(&p(&dir, "a.json"), &line);
    write_json(&p(&dir, "b.json"), &line);
    let o = gsforge(&["align", "--src", &p(&dir, "a.json"), "--dst", &p(&dir, "b.json")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(gsforge(&["render", "--bogus"]).status.code(), Some(2));
    assert_eq!(gsforge(&["frobnicate"]).status.code(), Some(2));
    let o = gsforge(&["render", "--scene", "/nonexistent.ply", "--camera", "/nonexistent.json", "--out", "/tmp/x.png"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn render_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let scene = blob_scene();
    fs::write(p(&dir, "s.ply"), save_ply(&scene)).unwrap();
    let cam = camera();
    write_json(&p(&dir, "cam.json"), &CameraSpec::from_camera(&cam));
    let o = gsforge(&["render", "--scene", &p(&dir, "s.ply"), "--camera", &p(&dir, "cam.json"), "--out", &p(&dir, "img.png"), "--depth", &p(&dir, "d.bin")]);
    assert!(o.status.success(), "{o:?}");
    // both files are stored at reduced precision, so render what was written
    let scene = load_ply(&fs::read(p(&dir, "s.ply")).unwrap()).unwrap();
    let cam = CameraSpec::from_camera(&cam).to_camera().unwrap();
    let direct = render(&scene, &cam, &RenderOptions::default());
    let (w, h, rgb) = read_png_rgb(Path::new(&p(&dir, "img.png"))).unwrap();
    assert_eq!((w, h), (40, 30));
    let bytes: Vec<u8> = rgb.iter().map(|v| (v * 255.0).round() as u8).collect();
    assert_eq!(bytes, direct.rgb8());
    let depth = FloatRaster::read(Path::new(&p(&dir, "d.bin"))).unwrap();
    assert_eq!(depth, FloatRaster::depth(40, 30, &direct.depth));
}

#[test]
fn transform_crop_and_compose() {
    let dir = TempDir::new().unwrap();
    let scene = blob_scene();
    fs::write(p(&dir, "s.ply"), save_ply(&scene)).unwrap();
    let t = SimilarityTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
    write_json(&p(&dir, "t.json"), &SimilarityFile::from_transform(&t));
    let o = gsforge(&["transform", "--scene", &p(&dir, "s.ply"), "--transform", &p(&dir, "t.json"), "--out", &p(&dir, "moved.ply")]);
    assert!(o.status.success(), "{o:?}");
    let moved = load_ply(&fs::read(p(&dir, "moved.ply")).unwrap()).unwrap();
    assert!((moved.splats()[3].mean.z - scene.splats()[3].mean.z - 1.0).abs() < 1e-6);

    let obb = serde_json::json!({"center": [0.0, 0.0, 0.0], "rotation_quaternion": [1.0, 0.0, 0.0, 0.0], "half_extents": [0.2, 0.2, 1.0]});
    write_json(&p(&dir, "obb.json"), &obb);
    let o = gsforge(&["crop", "--scene", &p(&dir, "s.ply"), "--obb", &p(&dir, "obb.json"), "--out", &p(&dir, "in.ply"), "--rest", &p(&dir, "out.ply")]);
    assert!(o.status.success(), "{o:?}");
    let inside = load_ply(&fs::read(p(&dir, "in.ply")).unwrap()).unwrap();
    let outside = load_ply(&fs::read(p(&dir, "out.ply")).unwrap()).unwrap();
    assert_eq!(inside.len(), 4);
    assert_eq!(inside.len() + outside.len(), scene.len());

    let o = gsforge(&[
        "compose", "--base", &p(&dir, "out.ply"), "--object", &p(&dir, "in.ply"), "--transform", &p(&dir, "t.json"), "--out", &p(&dir, "merged.ply"),
    ]);
    assert!(o.status.success(), "{o:?}");
    let merged = load_ply(&fs::read(p(&dir, "merged.ply")).unwrap()).unwrap();
    assert_eq!(merged.len(), scene.len());
    let o = gsforge(&["compose", "--base", &p(&dir, "out.ply"), "--object", &p(&dir, "in.ply"), "--transform", &p(&dir, "t.json"), "--transform", &p(&dir, "t.json"), "--out", &p(&dir, "x.ply")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fuse_then_extract() {
    let dir = TempDir::new().unwrap();
    // a flat square of disks
    let mut splats = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            let mut s = SplatRecord::isotropic(Vector3::new(i as f64 * 0.05 - 0.225, j as f64 * 0.05 - 0.225, 0.0), 0.04, 0.95, [0.5; 3], 0);
            s.log_scale.z = (1e-4f64).ln();
            splats.push(s);
        }
    }
    fs::write(p(&dir, "s.ply"), save_ply(&GaussianScene::new(splats, 0, None).unwrap())).unwrap();
    let k = Intrinsics::from_fov(48, 48, 1.0, 1.0);
    let cams: Vec<_> = [(0.0, 0.0), (0.3, 0.1), (-0.2, 0.3)]
        .iter()
        .map(|&(x, y)| CameraSpec::from_camera(&CameraModel::look_at(k, Vector3::new(x, y, 1.0), Vector3::zeros(), Vector3::y())))
        .collect();
    write_json(&p(&dir, "cams.json"), &cams);
    let o = gsforge(&["tsdf-fuse", "--scene", &p(&dir, "s.ply"), "--cameras", &p(&dir, "cams.json"), "--voxel", "0.02", "--out", &p(&dir, "vol.bin")]);
    assert!(o.status.success(), "{o:?}");
    assert!(Path::new(&format!("{}.json", p(&dir, "vol.bin"))).is_file());
    let o = gsforge(&["mesh-extract", "--volume", &p(&dir, "vol.bin"), "--out", &p(&dir, "m.obj")]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("triangles"));
    let mesh = gsforge::mesh::TriangleMesh::read_obj(&fs::read_to_string(p(&dir, "m.obj")).unwrap()).unwrap();
    assert!(!mesh.triangles.is_empty());
    assert!(mesh.vertices.iter().all(|v| v.z.abs() < 0.03));
    assert_eq!(gsforge(&["mesh-extract", "--volume", &p(&dir, "vol.bin"), "--out", &p(&dir, "m.ply")]).status.code(), Some(2));
}

#[test]
fn metrics_and_fit() {
    let dir = TempDir::new().unwrap();
    let scene = blob_scene();
    fs::write(p(&dir, "s.ply"), save_ply(&scene)).unwrap();
    let cam = CameraSpec::from_camera(&camera());
    write_json(&p(&dir, "cam.json"), &cam);
    assert!(gsforge(&["render", "--scene", &p(&dir, "s.ply"), "--camera", &p(&dir, "cam.json"), "--out", &p(&dir, "a.png")]).status.success());
    let o = gsforge(&["metrics", "--image", &p(&dir, "a.png"), "--reference", &p(&dir, "a.png"), "--scene", &p(&dir, "s.ply")]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["l1"].as_f64(), Some(0.0));
    assert!(v["scale_loss"].as_f64().unwrap() > 0.0);

    write_json(&p(&dir, "views.json"), &serde_json::json!([{"camera": cam, "rgb_path": "a.png"}]));
    fs::write(p(&dir, "fit.toml"), "iterations = 2\n[weights]\nphotometric = 1.0\nscale = 0.0\ndepth = 0.0\nnormal = 0.0\nncc = 0.0\n").unwrap();
    let o = gsforge(&[
        "fit", "--scene", &p(&dir, "s.ply"), "--targets", &p(&dir, "views.json"), "--config", &p(&dir, "fit.toml"), "--out", &p(&dir, "f.ply"), "--trace", &p(&dir, "trace.csv"),
    ]);
    assert!(o.status.success(), "{o:?}");
    let trace = fs::read_to_string(p(&dir, "trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,total"));
    assert!(trace.lines().count() >= 2);
}

#[test]
fn rollout_reports_sr_and_art() {
    let dir = TempDir::new().unwrap();
    fs::write(p(&dir, "env.toml"), "[env]\nrender_observations = false\n[assets]\narena = 5.0\n").unwrap();
    let o = gsforge(&["rollout", "--config", &p(&dir, "env.toml"), "--policy", "scripted", "--seed", "7", "--episodes", "5", "--log", &p(&dir, "log.jsonl")]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("SR") && out.contains("ART"), "{out}");
    let log = fs::read_to_string(p(&dir, "log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["t", "pose", "action", "v_cmd", "reward", "terminated", "truncated"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    // same seed, same output
    let again = gsforge(&["rollout", "--config", &p(&dir, "env.toml"), "--seed", "7", "--episodes", "5"]);
    assert_eq!(stdout(&again), out);
}

#[test]
fn rollout_writes_frames() {
    let dir = TempDir::new().unwrap();
    fs::write(p(&dir, "env.toml"), "[env]\nimage_width = 32\nimage_height = 18\nhorizon_s = 1.0\n").unwrap();
    let o = gsforge(&["rollout", "--config", &p(&dir, "env.toml"), "--policy", "random", "--frames", &p(&dir, "frames")]);
    assert!(o.status.success(), "{o:?}");
    let n = fs::read_dir(p(&dir, "frames")).unwrap().count();
    assert!(n >= 1 && n <= 5, "{n}");
}
