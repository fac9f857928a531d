use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use fbi_core::image::load_pnm;
use fbi_core::model::{Activation, Architecture, LayerSpec};
use fbi_core::{load_weights, save_weights, Shape, Tensor, WeightArchive};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str], arch: &Path, weights: &Path, image: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbi"))
        .args(&args[..1])
        .arg("--arch")
        .arg(arch)
        .arg("--weights")
        .arg(weights)
        .arg("--image")
        .arg(image)
        .args(&args[1..])
        .output()
        .unwrap()
}

fn run_fixture(args: &[&str]) -> Output {
    let f = fixtures();
    run(args, &f.join("square16.arch.json"), &f.join("square16.fbiw"), &f.join("square16.pgm"))
}

#[test]
fn missing_weights_exits_2_naming_the_path() {
    let f = fixtures();
    let out = run(
        &["predict"],
        &f.join("square16.arch.json"),
        Path::new("/nonexistent/w.fbiw"),
        &f.join("square16.pgm"),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("/nonexistent/w.fbiw"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn class_out_of_range_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("o.pgm");
    let out = run_fixture(&["explain", "--class", "2", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_path.exists());
}

#[test]
fn invalid_settings_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o.pgm");
    let o = o.to_str().unwrap();
    for bad in [["--top-frac", "0"], ["--top-frac", "1.5"], ["--tau", "-1"]] {
        let out = run_fixture(&["explain", bad[0], bad[1], "--out", o]);
        assert_eq!(out.status.code(), Some(2), "{bad:?}");
    }
    let out = run_fixture(&["explain", "--mean", "1,2", "--out", o]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn huge_tau_renders_black() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o.pgm");
    let out = run_fixture(&["explain", "--tau", "1e9", "--out", o.to_str().unwrap()]);
    assert!(out.status.success());
    let img = load_pnm(&std::fs::read(&o).unwrap()).unwrap();
    assert_eq!((img.width, img.height, img.channels), (16, 16, 1));
    assert!(img.pixels.iter().all(|&p| p == 0));
}

#[test]
fn raw_output_holds_the_saliency_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let (o, raw) = (dir.path().join("o.pgm"), dir.path().join("s.fbiw"));
    let out = run_fixture(&[
        "explain",
        "--method",
        "guided",
        "--out",
        o.to_str().unwrap(),
        "--raw-out",
        raw.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let archive = load_weights(&std::fs::read(&raw).unwrap()).unwrap();
    assert_eq!(archive.len(), 1);
    let s = archive.get("saliency").unwrap();
    assert_eq!(s.dims(), &[1, 16, 16]);
    // the brightest rendered pixel is the largest |value|
    let img = load_pnm(&std::fs::read(&o).unwrap()).unwrap();
    let argmax = |v: &[f32]| (0..v.len()).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a))).unwrap();
    assert_eq!(img.pixels[argmax(s.data())], 255);
}

#[test]
fn flag_matrix_finishes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o.img");
    let o = o.to_str().unwrap();
    for method in ["fbi", "guided", "deconvnet"] {
        for overlay in [false, true] {
            for no_bias in [false, true] {
                let mut args = vec!["explain", "--method", method, "--out", o];
                if overlay {
                    args.push("--overlay");
                }
                if no_bias {
                    args.push("--no-bias-adjoint");
                }
                let start = Instant::now();
                let out = run_fixture(&args);
                let took = start.elapsed();
                assert!(out.status.success(), "{args:?}");
                assert!(took < Duration::from_secs(1), "{args:?} took {took:?}");
                let img = load_pnm(&std::fs::read(o).unwrap()).unwrap();
                assert_eq!(img.channels, if overlay { 3 } else { 1 });
            }
        }
    }
}

#[test]
fn predict_lists_at_most_the_class_count() {
    let dir = tempfile::tempdir().unwrap();
    let arch_json = r#"{
  "input_shape": [1, 2, 2],
  "layers": [
    {"type": "flatten", "name": "flat"},
    {"type": "dense", "name": "fc", "activation": "softmax", "in": 4, "out": 3}
  ]
}"#;
    let arch_path = dir.path().join("a.json");
    std::fs::write(&arch_path, arch_json).unwrap();
    let arch = Architecture::new(
        Shape::new(vec![1, 2, 2]).unwrap(),
        vec![LayerSpec::flatten("flat"), LayerSpec::dense("fc", Activation::Softmax, 4, 3)],
    )
    .unwrap();
    assert_eq!(arch.num_classes(), 3);
    let mut w = WeightArchive::new();
    w.insert(
        "fc.weight",
        Tensor::from_vec(vec![3, 4], (0..12).map(|i| i as f32 * 0.01).collect()).unwrap(),
    );
    w.insert("fc.bias", Tensor::from_vec(vec![3], vec![0.0, 0.1, -0.1]).unwrap());
    let w_path = dir.path().join("w.fbiw");
    std::fs::write(&w_path, save_weights(&w)).unwrap();
    let img_path = dir.path().join("i.pgm");
    std::fs::write(&img_path, b"P5\n2 2\n255\n\x01\x02\x03\x04").unwrap();

    let out = run(&["predict"], &arch_path, &w_path, &img_path);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let probs: Vec<f64> = lines.iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(probs.windows(2).all(|p| p[0] >= p[1]));
    assert!(lines.iter().all(|l| l.split('\t').nth(1).unwrap().split('.').nth(1).unwrap().len() == 6));
}
