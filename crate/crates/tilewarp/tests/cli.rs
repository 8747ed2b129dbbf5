//! End-to-end checks of the `tilewarp` binary: file inventories, exit codes and output schemas.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tilewarp::commands::{fit_depth_path, fit_mask_path, fit_pose_path, TRAJECTORY_FILE};
use tilewarp::nfv::{self, Field};
use tilewarp::{kitti, raster, scene_dir};
use tilewarp_core::scenegen::{gt_pose_field, moving_object_scene, render_sequence};
use tilewarp_core::{DepthField, MaskField, PoseField};

fn tilewarp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilewarp")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

#[test]
fn gen_writes_the_scene_inventory() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("scene");
    let run = tilewarp(&["gen", "--out", p(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let files = sorted_files(&out);
    assert_eq!(files.iter().filter(|f| f.starts_with("frame_") && f.ends_with(".ppm")).count(), 5);
    assert_eq!(files.iter().filter(|f| f.starts_with("depth_") && f.ends_with(".nfv")).count(), 5);
    for f in ["poses.json", "intrinsics.json", "config.echo.json"] {
        assert!(files.contains(&f.to_string()), "{f} missing from {files:?}");
    }
    let poses: Value = serde_json::from_str(&fs::read_to_string(out.join("poses.json")).unwrap()).unwrap();
    assert_eq!(poses["frames"].as_array().unwrap().len(), 5);
    assert_eq!(poses["frames"][0]["camera"].as_array().unwrap().len(), 16);
}

#[test]
fn gen_moving_object_writes_object_masks() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", r#"{"scene":{"preset":"moving_object","seed":4}}"#);
    let out = tmp.path().join("scene");
    assert_eq!(code(&tilewarp(&["gen", "--config", p(&config), "--out", p(&out)])), 0);
    for i in 0..5 {
        let m = nfv::read_mask(&scene_dir::object_mask_path(&out, 0, i)).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(m.data().contains(&1.0));
    }
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(code(&tilewarp(&["gen", "--seed", "11", "--out", p(dir)])), 0);
    }
    let files = sorted_files(&a);
    assert_eq!(files, sorted_files(&b));
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn gen_echo_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(code(&tilewarp(&["gen", "--seed", "5", "--out", p(&first)])), 0);
    let second = tmp.path().join("second");
    let echo = first.join("config.echo.json");
    assert_eq!(code(&tilewarp(&["gen", "--config", p(&echo), "--out", p(&second)])), 0);
    assert_eq!(fs::read(first.join("frame_003.ppm")).unwrap(), fs::read(second.join("frame_003.ppm")).unwrap());
}

#[test]
fn malformed_json_exits_1_with_a_diagnostic() {
    let tmp = TempDir::new().unwrap();
    for (name, doc) in [("truncated.json", r#"{"scene": {"seed": 1"#), ("unknown.json", r#"{"scene": {"sead": 1}}"#)] {
        let config = write_config(tmp.path(), name, doc);
        let run = tilewarp(&["gen", "--config", p(&config), "--out", p(&tmp.path().join("x"))]);
        assert_eq!(code(&run), 1, "{name}");
        assert!(!run.stderr.is_empty());
        assert!(run.stdout.is_empty());
    }
}

#[test]
fn out_of_range_config_values_exit_1() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.json", r#"{"fit": {"beta1": 1.5}}"#);
    assert_eq!(code(&tilewarp(&["gen", "--config", p(&config), "--out", p(&tmp.path().join("x"))])), 1);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&tilewarp(&[])), 1);
    assert_eq!(code(&tilewarp(&["gen"])), 1);
    assert_eq!(code(&tilewarp(&["fit", "x", "--out", "y", "--threads", "0"])), 1);
    assert_eq!(code(&tilewarp(&["gradcheck", "--mode", "wobbly"])), 1);
    assert_eq!(code(&tilewarp(&["--help"])), 0);
}

#[test]
fn invalid_scene_exits_3() {
    let tmp = TempDir::new().unwrap();
    let mut spec = tilewarp_core::scenegen::random_rigid_scene(0);
    spec.frame_count = 1;
    let doc = serde_json::json!({ "scene": { "spec": spec } }).to_string();
    let config = write_config(tmp.path(), "c.json", &doc);
    let run = tilewarp(&["gen", "--config", p(&config), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(code(&run), 3, "{}", String::from_utf8_lossy(&run.stderr));
}

fn gen_scene(tmp: &Path, preset: &str, seed: u64) -> PathBuf {
    let out = tmp.join(format!("{preset}_{seed}"));
    let config = write_config(tmp, &format!("gen_{preset}.json"), &format!(r#"{{"scene":{{"preset":"{preset}"}}}}"#));
    let run = tilewarp(&["gen", "--config", p(&config), "--seed", &seed.to_string(), "--out", p(&out)]);
    assert_eq!(code(&run), 0);
    out
}

fn totals(history: &Value, pair: usize) -> Vec<f64> {
    history["pairs"][pair]["history"].as_array().unwrap().iter().map(|r| r["total"].as_f64().unwrap()).collect()
}

#[test]
fn rigid_fit_loss_is_monotone_after_iteration_100() {
    let tmp = TempDir::new().unwrap();
    let scene = gen_scene(tmp.path(), "rigid", 3);
    let out = tmp.path().join("fit");
    let run = tilewarp(&["fit", p(&scene), "--mode", "rigid", "--out", p(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let history: Value = serde_json::from_str(&fs::read_to_string(out.join("history.json")).unwrap()).unwrap();
    let mut increases = Vec::new();
    for pair in 0..4 {
        let t = totals(&history, pair);
        assert_eq!(t.len(), 2000);
        increases.extend((100..t.len() - 1).filter(|&i| t[i + 1] > t[i] * 1.01).map(|i| (pair, i, t[i + 1] / t[i] - 1.0)));
    }
    assert!(
        increases.is_empty(),
        "{} single-step increases above 1% after iteration 100, first {:?}",
        increases.len(),
        &increases[..increases.len().min(5)]
    );
}

#[test]
fn fit_writes_fields_history_trajectory_and_summaries() {
    let tmp = TempDir::new().unwrap();
    let scene = gen_scene(tmp.path(), "moving_object", 2);
    let config = write_config(tmp.path(), "fit.json", r#"{"fit":{"iterations":40}}"#);
    let out = tmp.path().join("fit");
    let run = tilewarp(&["fit", p(&scene), "--config", p(&config), "--mode", "segmented", "--out", p(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for t in 1..5 {
        let m = nfv::read_mask(&fit_mask_path(&out, t)).unwrap();
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((m.height(), m.width()), (64, 64));
        nfv::read_depth(&fit_depth_path(&out, t)).unwrap();
        nfv::read_pose(&fit_pose_path(&out, t)).unwrap();
    }
    assert!(!fit_mask_path(&out, 0).exists());
    assert_eq!(kitti::read(&out.join(TRAJECTORY_FILE)).unwrap().len(), 5);
    let lines: Vec<Value> = String::from_utf8(run.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!((lines[2]["source"].as_u64(), lines[2]["target"].as_u64()), (Some(2), Some(3)));
    assert_eq!(lines[0]["camera_twist"].as_array().unwrap().len(), 6);
    let history: Value = serde_json::from_str(&fs::read_to_string(out.join("history.json")).unwrap()).unwrap();
    let first = &history["pairs"][0]["history"][0];
    for key in ["total", "photometric_rigid", "photometric_nonrigid", "mask_reg", "area_reg", "tv_depth", "tv_pose"] {
        assert!(first[key].is_f64(), "history entry lacks {key}");
    }
    let echo: Value = serde_json::from_str(&fs::read_to_string(out.join("config.echo.json")).unwrap()).unwrap();
    assert_eq!(echo["fit"]["loss"]["mode"], "segmented");
    assert_eq!(echo["fit"]["iterations"], 40);
}

#[test]
fn fit_output_does_not_depend_on_thread_count() {
    let tmp = TempDir::new().unwrap();
    let scene = gen_scene(tmp.path(), "rigid", 8);
    let config = write_config(tmp.path(), "fit.json", r#"{"fit":{"iterations":30}}"#);
    let dirs: Vec<PathBuf> = ["1", "3"]
        .iter()
        .map(|threads| {
            let out = tmp.path().join(format!("fit{threads}"));
            let run = tilewarp(&["fit", p(&scene), "--config", p(&config), "--threads", threads, "--out", p(&out)]);
            assert_eq!(code(&run), 0);
            out
        })
        .collect();
    for f in sorted_files(&dirs[0]) {
        assert_eq!(fs::read(dirs[0].join(&f)).unwrap(), fs::read(dirs[1].join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn fit_missing_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let scene = gen_scene(tmp.path(), "rigid", 1);
    let config =
        write_config(tmp.path(), "fit.json", r#"{"fit":{"iterations":5,"freeze_depth":true},"fit_input":{"use_scene_depth":true}}"#);
    fs::remove_file(scene_dir::depth_path(&scene, 2)).unwrap();
    let run = tilewarp(&["fit", p(&scene), "--config", p(&config), "--out", p(&tmp.path().join("fit"))]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("depth_002.nfv"));

    fs::remove_file(scene_dir::frame_path(&scene, 4)).unwrap();
    let plain = write_config(tmp.path(), "plain.json", r#"{"fit":{"iterations":5}}"#);
    let run = tilewarp(&["fit", p(&scene), "--config", p(&plain), "--out", p(&tmp.path().join("fit2"))]);
    assert_eq!(code(&run), 2);
    assert_eq!(code(&tilewarp(&["fit", p(&tmp.path().join("nowhere")), "--out", p(&tmp.path().join("fit3"))])), 2);
}

#[test]
fn fit_with_frozen_scene_depth_keeps_it() {
    let tmp = TempDir::new().unwrap();
    let scene = gen_scene(tmp.path(), "rigid", 6);
    let config = write_config(
        tmp.path(),
        "fit.json",
        r#"{"fit":{"iterations":5,"freeze_depth":true,"normalize_depth":false,"loss":{"mode":"rigid"}},"fit_input":{"use_scene_depth":true}}"#,
    );
    let out = tmp.path().join("fit");
    assert_eq!(code(&tilewarp(&["fit", p(&scene), "--config", p(&config), "--out", p(&out)])), 0);
    let fitted = nfv::read_depth(&fit_depth_path(&out, 3)).unwrap();
    let gt = nfv::read_depth(&scene_dir::depth_path(&scene, 3)).unwrap();
    for (a, b) in fitted.data().iter().zip(gt.data()) {
        assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
    }
}

/// A fit directory holding the ground truth itself.
fn write_oracle_fit(scene: &Path, out: &Path) {
    fs::create_dir_all(out).unwrap();
    let spec = moving_object_scene(7);
    let frames = render_sequence(&spec).unwrap();
    for t in 1..frames.len() {
        nfv::write(&fit_depth_path(out, t), &Field::Depth(frames[t].depth.clone())).unwrap();
        let pose = gt_pose_field(&frames[t - 1], &frames[t]).unwrap();
        nfv::write(&fit_pose_path(out, t), &Field::Pose(pose)).unwrap();
        let union: Vec<f64> = frames[t].labels().iter().map(|&l| if l > 0 { 1.0 } else { 0.0 }).collect();
        nfv::write(&fit_mask_path(out, t), &Field::Mask(MaskField::from_vec(64, 64, union).unwrap())).unwrap();
    }
    let cameras: Vec<_> = frames.iter().map(|f| f.camera_pose_world).collect();
    kitti::write(&out.join(TRAJECTORY_FILE), &cameras).unwrap();
    scene_dir::write_scene(scene, &frames, &spec.intrinsics).unwrap();
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let (scene, fit) = (tmp.path().join("scene"), tmp.path().join("fit"));
    write_oracle_fit(&scene, &fit);
    let run = tilewarp(&["eval", p(&fit), p(&scene)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let report = stdout_json(&run);
    let depth = report["depth"].as_array().unwrap();
    assert_eq!(depth.len(), 4);
    for frame in depth {
        for key in ["rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"] {
            assert!(frame[key].is_number(), "missing {key}");
        }
        assert_eq!(frame["rel"].as_f64(), Some(0.0));
        assert_eq!(frame["delta1"].as_f64(), Some(1.0));
    }
    let ate = &report["ate"];
    assert!(ate["mean"].as_f64().unwrap() < 1e-9, "{ate}");
    assert!(ate["std_across_snippets"].is_number());
    assert_eq!(ate["windows"].as_u64(), Some(1));
    for frame in report["mask_iou"].as_array().unwrap() {
        assert_eq!(frame["foreground"].as_f64(), Some(1.0));
        assert_eq!(frame["objects"][0].as_f64(), Some(1.0));
    }
}

#[test]
fn eval_without_gt_masks_omits_iou_with_a_warning() {
    let tmp = TempDir::new().unwrap();
    let (scene, fit) = (tmp.path().join("scene"), tmp.path().join("fit"));
    write_oracle_fit(&scene, &fit);
    for i in 0..5 {
        fs::remove_file(scene_dir::object_mask_path(&scene, 0, i)).unwrap();
    }
    let out = tmp.path().join("eval");
    let run = tilewarp(&["eval", p(&fit), p(&scene), "--out", p(&out)]);
    assert_eq!(code(&run), 0);
    let report = stdout_json(&run);
    assert!(report.get("mask_iou").is_none());
    assert!(report["depth"].is_array());
    assert!(String::from_utf8_lossy(&run.stderr).contains("warning"));
    let saved: Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
    assert!(out.join("config.echo.json").exists());
}

#[test]
fn eval_median_flag_and_shape_mismatch() {
    let tmp = TempDir::new().unwrap();
    let (scene, fit) = (tmp.path().join("scene"), tmp.path().join("fit"));
    write_oracle_fit(&scene, &fit);
    // Doubling every prediction is invisible under median scaling only.
    for t in 1..5 {
        let d = nfv::read_depth(&fit_depth_path(&fit, t)).unwrap();
        let doubled = DepthField::from_vec(64, 64, d.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        nfv::write(&fit_depth_path(&fit, t), &Field::Depth(doubled)).unwrap();
    }
    let scaled = stdout_json(&tilewarp(&["eval", p(&fit), p(&scene)]));
    assert_eq!(scaled["depth"][0]["rel"].as_f64(), Some(0.0));
    let raw = tilewarp(&["eval", p(&fit), p(&scene), "--no-median-scale"]);
    let raw = stdout_json(&raw);
    assert_eq!(raw["median_scale"], false);
    assert!((raw["depth"][0]["rel"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    nfv::write(&fit_depth_path(&fit, 2), &Field::Depth(DepthField::new_filled(8, 8, 1.0).unwrap())).unwrap();
    assert_eq!(code(&tilewarp(&["eval", p(&fit), p(&scene)])), 3);
}

#[test]
fn gradcheck_passes_every_mode_at_the_default_seed() {
    let run = tilewarp(&["gradcheck"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stdout));
    let report = stdout_json(&run);
    assert_eq!(report["passed"], true);
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for r in reports {
        assert!(r["max_rel_error"].as_f64().unwrap() < 1e-4);
        assert!(r["skipped_nonsmooth"].is_u64());
        assert!(r["samples_tested"].as_u64().unwrap() >= 200);
    }
    for mode in ["rigid", "nonrigid", "segmented"] {
        let run = tilewarp(&["gradcheck", "--mode", mode, "--seed", "3"]);
        assert_eq!(code(&run), 0, "{mode}");
        assert!(stdout_json(&run)["reports"][0]["op_name"].as_str().unwrap().ends_with(mode));
    }
}

#[test]
fn corrupted_gradient_exits_5() {
    let run = tilewarp(&["gradcheck", "--mode", "segmented", "--corrupt", "1e-3"]);
    assert_eq!(code(&run), 5);
    let report = stdout_json(&run);
    assert_eq!(report["passed"], false);
    assert!(report["reports"][0]["skipped_nonsmooth"].is_u64());
}

fn png_pixels(path: &Path) -> (png::ColorType, Vec<u8>) {
    let decoder = png::Decoder::new(fs::File::open(path).unwrap());
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.color_type, buf)
}

#[test]
fn viz_constant_depth_is_uniform_gray() {
    let tmp = TempDir::new().unwrap();
    let field = tmp.path().join("d.nfv");
    nfv::write(&field, &Field::Depth(DepthField::new_filled(6, 5, 3.0).unwrap())).unwrap();
    let png_out = tmp.path().join("d.png");
    assert_eq!(code(&tilewarp(&["viz", p(&field), p(&png_out)])), 0);
    let (color, px) = png_pixels(&png_out);
    assert_eq!(color, png::ColorType::Grayscale);
    assert_eq!(px.len(), 30);
    assert!(px.iter().all(|&v| v == px[0]) && px[0] > 0 && px[0] < 255);

    let ppm_out = tmp.path().join("d.ppm");
    assert_eq!(code(&tilewarp(&["viz", p(&field), p(&ppm_out)])), 0);
    let img = raster::read_ppm(&ppm_out).unwrap();
    assert!(img.data().iter().all(|&v| v == img.data()[0]));
}

#[test]
fn viz_zero_pose_is_mid_gray_in_two_images() {
    let tmp = TempDir::new().unwrap();
    let field = tmp.path().join("pose.nfv");
    nfv::write(&field, &Field::Pose(PoseField::zeros(4, 4).unwrap())).unwrap();
    let out = tmp.path().join("pose.png");
    let run = tilewarp(&["viz", p(&field), p(&out)]);
    assert_eq!(code(&run), 0);
    let written = stdout_json(&run)["written"].as_array().unwrap().len();
    assert_eq!(written, 2);
    for path in [out.clone(), tmp.path().join("pose_rotation.png")] {
        let (color, px) = png_pixels(&path);
        assert_eq!(color, png::ColorType::Rgb);
        assert_eq!(px.len(), 48);
        assert!(px.iter().all(|&v| v == 128), "{path:?}");
    }
}

#[test]
fn viz_full_mask_is_white() {
    let tmp = TempDir::new().unwrap();
    let field = tmp.path().join("m.nfv");
    nfv::write(&field, &Field::Mask(MaskField::new_filled(3, 7, 1.0).unwrap())).unwrap();
    let out = tmp.path().join("m.png");
    assert_eq!(code(&tilewarp(&["viz", p(&field), p(&out)])), 0);
    assert!(png_pixels(&out).1.iter().all(|&v| v == 255));
}

#[test]
fn viz_input_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&tilewarp(&["viz", p(&tmp.path().join("none.nfv")), p(&tmp.path().join("o.png"))])), 2);
    let junk = write_config(tmp.path(), "junk.nfv", "NFV1 depth 2 2 1\n");
    assert_eq!(code(&tilewarp(&["viz", p(&junk), p(&tmp.path().join("o.png"))])), 1);
    let field = tmp.path().join("m.nfv");
    nfv::write(&field, &Field::Mask(MaskField::new_filled(2, 2, 0.0).unwrap())).unwrap();
    assert_eq!(code(&tilewarp(&["viz", p(&field), p(&tmp.path().join("o.bmp"))])), 1);
}
