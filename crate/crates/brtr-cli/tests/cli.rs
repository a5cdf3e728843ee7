//! End-to-end tests driving the compiled `brtr` binary.

use brtr_core::io as bio;
use brtr_core::tensor::{DenseTensor, Shape};
use std::path::Path;
use std::process::{Command, Output};

fn brtr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brtr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = brtr(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

fn tensor(dims: Vec<usize>, data: Vec<f64>) -> DenseTensor {
    DenseTensor::new(Shape::new(dims).unwrap(), data).unwrap()
}

#[test]
fn synth_writes_problem_dir_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let d = dir.to_str().unwrap();
        ok(&[
            "synth", "--dims", "6,5,4", "--rank", "2,2,2", "--mr", "0.1", "--sr", "0.1",
            "--seed", "7", "--out", d,
        ]);
    }
    for name in ["y.brt", "mask.brm", "truth_low.brt", "truth_sparse.brt", "spec.json"] {
        assert_eq!(
            read_bytes(&a.join(name)),
            read_bytes(&b.join(name)),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn synth_rejects_fully_missing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = brtr(&[
        "synth", "--dims", "4,4", "--rank", "2,2", "--mr", "1.0",
        "--out", tmp.path().join("p").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn complete_end_to_end_with_schema_and_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let prob = tmp.path().join("prob");
    let fit = tmp.path().join("fit");
    ok(&[
        "synth", "--dims", "8,8,8", "--rank", "2,2,2", "--mr", "0.0", "--sr", "0.0",
        "--seed", "3", "--out", prob.to_str().unwrap(),
    ]);
    ok(&[
        "complete",
        "--input", prob.join("y.brt").to_str().unwrap(),
        "--mask", prob.join("mask.brm").to_str().unwrap(),
        "--max-rank", "4",
        "--max-iters", "80",
        "--sparse-warmup", "20",
        "--seed", "1",
        "--truth-low", prob.join("truth_low.brt").to_str().unwrap(),
        "--truth-sparse", prob.join("truth_sparse.brt").to_str().unwrap(),
        "--truth-rank", "2,2,2,2",
        "--out", fit.to_str().unwrap(),
    ]);

    let report: serde_json::Value =
        serde_json::from_slice(&read_bytes(&fit.join("report.json"))).unwrap();
    let schema: serde_json::Value = serde_json::from_str(include_str!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/schemas/report.schema.json"
    )))
    .unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");

    let metrics = &report["metrics"];
    assert!(metrics["rse_low"].as_f64().unwrap() < 1e-3);
    assert!(metrics["ree"].is_number());
    let low = bio::read_tensor(&fit.join("low_rank.brt")).unwrap();
    assert_eq!(low.shape().dims(), &[8, 8, 8]);
}

#[test]
fn complete_tensors_are_deterministic_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let prob = tmp.path().join("prob");
    ok(&[
        "synth", "--dims", "6,6,6", "--rank", "2,2,2", "--sr", "0.1", "--seed", "11",
        "--out", prob.to_str().unwrap(),
    ]);
    let mut reports = Vec::new();
    for name in ["r1", "r2"] {
        let out = tmp.path().join(name);
        ok(&[
            "complete",
            "--input", prob.join("y.brt").to_str().unwrap(),
            "--max-rank", "3", "--max-iters", "40", "--seed", "5",
            "--out", out.to_str().unwrap(),
        ]);
        reports.push(out);
    }
    for name in ["low_rank.brt", "sparse.brt"] {
        assert_eq!(
            read_bytes(&reports[0].join(name)),
            read_bytes(&reports[1].join(name)),
            "{name} differs between identical runs"
        );
    }
    // report.json carries wall-clock time; everything else must match exactly.
    let strip = |p: &Path| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_slice(&read_bytes(&p.join("report.json"))).unwrap();
        v.as_object_mut().unwrap().remove("wall_seconds");
        v
    };
    assert_eq!(strip(&reports[0]), strip(&reports[1]));
}

#[test]
fn complete_reshape_restores_original_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let y = tensor(vec![4, 6], (0..24).map(|i| (i % 5) as f64).collect());
    let y_path = tmp.path().join("y.brt");
    bio::write_tensor(&y_path, &y).unwrap();
    let fit = tmp.path().join("fit");
    ok(&[
        "complete",
        "--input", y_path.to_str().unwrap(),
        "--reshape", "2,2,6",
        "--max-rank", "2", "--max-iters", "5",
        "--out", fit.to_str().unwrap(),
    ]);
    let low = bio::read_tensor(&fit.join("low_rank.brt")).unwrap();
    let sparse = bio::read_tensor(&fit.join("sparse.brt")).unwrap();
    assert_eq!(low.shape().dims(), &[4, 6]);
    assert_eq!(sparse.shape().dims(), &[4, 6]);
}

#[test]
fn complete_missing_input_exits_2_and_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = brtr(&[
        "complete", "--input", "/no/such/tensor.brt",
        "--out", tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/tensor.brt"));
}

#[test]
fn complete_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let y_path = tmp.path().join("y.brt");
    bio::write_tensor(&y_path, &tensor(vec![2, 2], vec![1.0; 4])).unwrap();
    for body in [r#"{"version": 2}"#, r#"{"not_a_field": 1}"#] {
        let cfg = tmp.path().join("cfg.json");
        std::fs::write(&cfg, body).unwrap();
        let out = brtr(&[
            "complete", "--input", y_path.to_str().unwrap(),
            "--config", cfg.to_str().unwrap(),
            "--out", tmp.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(2), "config {body} accepted");
    }
}

#[test]
fn metrics_identical_tensors_give_zero_rse_string_inf_psnr() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tensor(vec![3, 4], (0..12).map(|i| i as f64).collect());
    let p = tmp.path().join("t.brt");
    bio::write_tensor(&p, &t).unwrap();
    let out = ok(&["metrics", "--est", p.to_str().unwrap(), "--truth", p.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rse"].as_f64().unwrap(), 0.0);
    assert_eq!(v["psnr"], serde_json::json!("inf"));
}

#[test]
fn metrics_scaled_copy_gives_rse_tenth() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = tensor(vec![3, 4], (1..=12).map(|i| i as f64).collect());
    let est = tensor(vec![3, 4], (1..=12).map(|i| 1.1 * i as f64).collect());
    let tp = tmp.path().join("truth.brt");
    let ep = tmp.path().join("est.brt");
    bio::write_tensor(&tp, &truth).unwrap();
    bio::write_tensor(&ep, &est).unwrap();
    let out = ok(&["metrics", "--est", ep.to_str().unwrap(), "--truth", tp.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["rse"].as_f64().unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn metrics_shape_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let tp = tmp.path().join("a.brt");
    let ep = tmp.path().join("b.brt");
    bio::write_tensor(&tp, &tensor(vec![2, 3], vec![1.0; 6])).unwrap();
    bio::write_tensor(&ep, &tensor(vec![3, 2], vec![1.0; 6])).unwrap();
    let out = brtr(&["metrics", "--est", ep.to_str().unwrap(), "--truth", tp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn image_round_trip_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ppm = b"P6\n3 2\n255\n".to_vec();
    ppm.extend((0u8..18).map(|i| i.wrapping_mul(13)));
    let img_in = tmp.path().join("in.ppm");
    let ten = tmp.path().join("img.brt");
    let img_out = tmp.path().join("out.ppm");
    std::fs::write(&img_in, &ppm).unwrap();
    ok(&["img2ten", "--input", img_in.to_str().unwrap(), "--out", ten.to_str().unwrap()]);
    let t = bio::read_tensor(&ten).unwrap();
    assert_eq!(t.shape().dims(), &[2, 3, 3]);
    ok(&["ten2img", "--input", ten.to_str().unwrap(), "--out", img_out.to_str().unwrap()]);
    assert_eq!(read_bytes(&img_out), ppm);
}

#[test]
fn img2ten_rejects_deep_maxval() {
    let tmp = tempfile::tempdir().unwrap();
    let img_in = tmp.path().join("deep.ppm");
    std::fs::write(&img_in, b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap();
    let out = brtr(&[
        "img2ten", "--input", img_in.to_str().unwrap(),
        "--out", tmp.path().join("o.brt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
