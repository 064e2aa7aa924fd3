use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use expseg::grid::{BinaryMask, ExtremePoints, Pixel};
use expseg::io::{read_matrix, write_annotations, write_mask, write_matrix, AnnotationRecord};
use expseg::tpm::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn expseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = expseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A 64-node similarity, a matching config and one annotation.
fn small_problem(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sim = Matrix::from_vec(64, (0..4096).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
    write_matrix(&dir.join("sim.extm"), &sim).unwrap();
    fs::write(dir.join("cfg.txt"), "patch_side = 8\ncrop_pad = 0.5\nsinkhorn_max_iterations = 5000\n").unwrap();
    let ep = ExtremePoints::new(
        Pixel::new(20, 10),
        Pixel::new(10, 22),
        Pixel::new(25, 40),
        Pixel::new(40, 30),
    )
    .unwrap();
    let rec = AnnotationRecord {
        object_id: 4,
        class_id: 6,
        extreme: ep,
        image: "image.ppm".into(),
    };
    write_annotations(&dir.join("ann.jsonl"), &[rec]).unwrap();
}

#[test]
fn missing_ann_is_a_usage_error() {
    let out = expseg(&["propagate", "--tpm", "t.extm", "--alpha", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ann"));
}

#[test]
fn alpha_one_reproduces_the_tpm() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    small_problem(d);
    let cfg = d.join("cfg.txt");
    ok(&["build-tpm", "--sim", p(&d.join("sim.extm")), "--config", p(&cfg), "--out", p(&d.join("tpm"))]);
    let tpm = d.join("tpm/tpm.extm");
    ok(&[
        "propagate", "--tpm", p(&tpm), "--alpha", "1", "--ann", p(&d.join("ann.jsonl")),
        "--config", p(&cfg), "--out", p(&d.join("prop")),
    ]);
    let a = fs::read(&tpm).unwrap();
    let b = fs::read(d.join("prop/propagated.extm")).unwrap();
    assert_eq!(a[16..], b[16..]);
    assert_eq!(read_matrix(&tpm).unwrap().n(), 64);

    let out = ok(&[
        "retrieve", "--scores", p(&d.join("prop/scores.json")), "--ann", p(&d.join("ann.jsonl")),
        "--config", p(&cfg), "--out", p(&d.join("ret")),
    ]);
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("mil_fallback"), "{line}");
    for f in ["labels.json", "y_hat.pgm", "k_mask.pgm", "run.json"] {
        assert!(d.join("ret").join(f).exists(), "{f}");
    }
}

#[test]
fn absorbing_flag_needs_beta() {
    let out = expseg(&["propagate", "--tpm", "t", "--absorbing", "--ann", "a"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn window_size_mismatch_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    small_problem(d);
    ok(&["build-tpm", "--sim", p(&d.join("sim.extm")), "--config", p(&d.join("cfg.txt")), "--out", p(d)]);
    // default patch_side 32 expects 1024 nodes
    let out = expseg(&["propagate", "--tpm", p(&d.join("tpm.extm")), "--ann", p(&d.join("ann.jsonl")), "--out", p(d)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unbalanceable_similarity_is_numerical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // the off-diagonal entry lies on no positive diagonal, so no scaling exists
    write_matrix(&d.join("sim.extm"), &Matrix::from_vec(2, vec![1.0, 1.0, 0.0, 1.0]).unwrap()).unwrap();
    let out = expseg(&["build-tpm", "--sim", p(&d.join("sim.extm")), "--out", p(d)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn refine_accepts_pgm_masks() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mask = BinaryMask::from_fn(20, 20, |x, y| x > 5 && x < 14 && y > 5 && y < 14).unwrap();
    write_mask(&d.join("m.pgm"), &mask).unwrap();
    let img = BinaryMask::from_fn(20, 20, |x, y| x > 4 && x < 15 && y > 4 && y < 15).unwrap();
    write_mask(&d.join("img.pgm"), &img).unwrap();
    ok(&["refine", "--mask", p(&d.join("m.pgm")), "--image", p(&d.join("img.pgm")), "--out", p(d)]);
    let bytes = fs::read(d.join("refined.expm")).unwrap();
    assert_eq!(bytes.len(), 16 + 4 * 400);
}

#[test]
fn extract_points_keeps_object_ids() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("masks")).unwrap();
    let m = BinaryMask::from_fn(10, 10, |x, y| (2..5).contains(&x) && (3..9).contains(&y)).unwrap();
    write_mask(&d.join("masks/obj_0007.pgm"), &m).unwrap();
    ok(&["extract-points", "--masks", p(&d.join("masks")), "--out", p(d)]);
    let text = fs::read_to_string(d.join("annotations.jsonl")).unwrap();
    assert!(text.contains("\"object_id\":7"), "{text}");
    assert!(text.contains("[2,3]"), "{text}");
}

#[test]
fn run_json_reproduces_the_outputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.txt"), "scenes = 1\nseed = 5\n").unwrap();
    fs::write(d.join("cfg.txt"), "patch_side = 16\ndelta = 48\ncrf_iterations = 2\n").unwrap();
    ok(&["synth", "--spec", p(&d.join("spec.txt")), "--out", p(&d.join("syn"))]);
    let scene = d.join("syn/scene_0000");
    ok(&["pseudo-mask", "--scene", p(&scene), "--config", p(&d.join("cfg.txt")), "--seed", "9", "--out", p(&d.join("a"))]);
    ok(&["pseudo-mask", "--scene", p(&scene), "--config", p(&d.join("a/run.json")), "--out", p(&d.join("b"))]);
    for f in ["obj_0000.pgm", "labels_0000.json", "baseline/obj_0000.pgm", "run.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    ok(&["eval", "--pred", p(&d.join("a")), "--gt", p(&scene), "--baseline", "--out", p(&d.join("ev"))]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_objects"], 1);
    assert!(report["baseline"]["mean_iou"].is_number());
}

#[test]
fn bundled_separated_spec_favours_retrieval() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let specs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs");
    ok(&["synth", "--spec", p(&specs.join("separated_scene.txt")), "--out", p(&d.join("syn"))]);
    let (mut retrieval, mut base) = (0.0, 0.0);
    for k in 0..10 {
        let scene = d.join(format!("syn/scene_{k:04}"));
        let pred = d.join(format!("pm_{k}"));
        let ev = d.join(format!("ev_{k}"));
        let cfg = specs.join("separated_run.txt");
        ok(&["pseudo-mask", "--scene", p(&scene), "--config", p(&cfg), "--out", p(&pred)]);
        ok(&["eval", "--pred", p(&pred), "--gt", p(&scene), "--baseline", "--config", p(&cfg), "--out", p(&ev)]);
        let report: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("report.json")).unwrap()).unwrap();
        retrieval += report["mean_iou"].as_f64().unwrap();
        base += report["baseline"]["mean_iou"].as_f64().unwrap();
    }
    assert!(retrieval > base, "{retrieval} vs {base}");
}
