use std::fs;
use std::path::{Path, PathBuf};

use expseg::config::{parse_settings, settings_text, RunConfig};
use expseg::crf::meanfield_refine;
use expseg::grid::{extract_extreme_points, BBox, CropWindow, ProbMask};
use expseg::io::{
    decode_mask, decode_prob_mask, read_annotations, read_image, read_mask, read_matrix,
    read_netpbm, read_similarity, write_annotations, write_image, write_mask, write_matrix,
    write_netpbm, write_prob_mask, AnnotationRecord, Netpbm,
};
use expseg::metrics::{iou, point_label_counts, EvalReport, PointCounts};
use expseg::pipeline::{run_object, seeds_for, LossStats, ObjectResult};
use expseg::retrieval::{
    assemble_targets, derive_seed, point_dropout, propagation_scores, threshold_labels,
    DropoutConfig, Hops, Label, PropagationScores, PseudoPointLabels,
};
use expseg::synth::{generate_scene, patch_classes, similarity_from_scene, Scene, SceneSpec};
use expseg::tpm::{build_transition, propagate_absorbing, propagate_power, TransitionMatrix};
use expseg::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{Command, Common};

pub fn run(common: &Common, cmd: &Command) -> Result<()> {
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    let out = common.out.as_path();
    match cmd {
        Command::Synth { spec } => synth(out, &cfg, common.seed, spec),
        Command::ExtractPoints { masks, image } => extract_points(out, &cfg, masks, image),
        Command::BuildTpm { sim } => build_tpm(out, &cfg, sim),
        Command::Propagate {
            tpm,
            alpha,
            absorbing,
            beta,
            ann,
            object,
        } => {
            let hops = match (alpha, absorbing, beta) {
                (Some(a), _, _) => Hops::Power { alpha: *a },
                (None, true, Some(b)) => Hops::Absorbing { beta: *b },
                _ => cfg.hops(),
            };
            propagate(out, &cfg, tpm, hops, ann, *object)
        }
        Command::Retrieve { scores, ann } => retrieve(out, &cfg, scores, ann),
        Command::Refine { mask, image } => refine(out, &cfg, mask, image),
        Command::PseudoMask { scene } => pseudo_mask(out, &cfg, scene),
        Command::Eval { pred, gt, baseline } => eval(out, &cfg, pred, gt, *baseline),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::parse(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidParameter(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Records the resolved configuration; the output directory is left out so
/// runs into different directories produce identical trees.
fn write_run(out: &Path, command: &str, inputs: serde_json::Value, cfg: &RunConfig) -> Result<()> {
    write_json(
        &out.join("run.json"),
        &json!({
            "command": command,
            "inputs": inputs,
            "seed": cfg.seed,
            "config": cfg,
        }),
    )
}

fn object_file(stem: &str, id: u64, ext: &str) -> String {
    format!("{stem}_{id:04}.{ext}")
}

fn find_record(records: &[AnnotationRecord], object: Option<u64>) -> Result<&AnnotationRecord> {
    match object {
        None => records.first().ok_or(Error::EmptyList),
        Some(id) => records
            .iter()
            .find(|r| r.object_id == id)
            .ok_or_else(|| Error::InvalidParameter(format!("no annotation for object {id}"))),
    }
}

fn synth(out: &Path, cfg: &RunConfig, seed: Option<u64>, spec_path: &Path) -> Result<()> {
    let mut spec: SceneSpec = parse_settings(&fs::read_to_string(spec_path)?)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    for k in 0..spec.scenes {
        let scene = generate_scene(&spec.for_scene(k))?;
        let dir = out.join(format!("scene_{k:04}"));
        write_scene(&dir, &scene)?;
        println!(
            "scene {k}: {} objects, {}x{} px -> {}",
            scene.gt_masks.len(),
            scene.side(),
            scene.side(),
            dir.display()
        );
    }
    write_run(out, "synth", json!({ "spec": spec_path, "scene_spec": spec }), cfg)
}

fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir.join("gt"))?;
    write_image(&dir.join("image.ppm"), &scene.image)?;
    let side = scene.side();
    write_netpbm(
        &dir.join("semantic.pgm"),
        &Netpbm {
            width: side,
            height: side,
            channels: 1,
            data: scene.semantic.clone(),
        },
    )?;
    let mut records = Vec::with_capacity(scene.gt_masks.len());
    for (k, (mask, ep)) in scene.gt_masks.iter().zip(&scene.annotations).enumerate() {
        write_mask(&dir.join("gt").join(object_file("obj", k as u64, "pgm")), mask)?;
        records.push(AnnotationRecord {
            object_id: k as u64,
            class_id: u32::from(Scene::class_of_object(k)),
            extreme: *ep,
            image: "image.ppm".into(),
        });
    }
    write_annotations(&dir.join("annotations.jsonl"), &records)?;
    fs::write(dir.join("scene.txt"), settings_text(&scene.spec))?;
    Ok(())
}

fn load_scene(dir: &Path) -> Result<(Scene, Vec<AnnotationRecord>)> {
    let spec: SceneSpec = parse_settings(&fs::read_to_string(dir.join("scene.txt"))?)?;
    spec.validate()?;
    let image = read_image(&dir.join("image.ppm"))?;
    let semantic = read_netpbm(&dir.join("semantic.pgm"))?;
    if semantic.channels != 1 {
        return Err(Error::BadDimensions("semantic map must be a P5 graymap".into()));
    }
    let gt = (0..spec.n_objects)
        .map(|k| read_mask(&dir.join("gt").join(object_file("obj", k as u64, "pgm"))))
        .collect::<Result<Vec<_>>>()?;
    let records = read_annotations(&dir.join("annotations.jsonl"))?;
    if let Some(r) = records.iter().find(|r| r.object_id as usize >= spec.n_objects) {
        return Err(Error::InvalidParameter(format!(
            "annotation for object {} but the scene has {} objects",
            r.object_id, spec.n_objects
        )));
    }
    let scene = Scene::from_parts(spec, image, semantic.data, gt)?;
    Ok((scene, records))
}

fn extract_points(out: &Path, cfg: &RunConfig, masks: &Path, image: &str) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(masks)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for (k, path) in paths.iter().enumerate() {
        // obj_0007.pgm keeps id 7; other names are numbered in sorted order
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.rsplit('_').next())
            .and_then(|s| s.parse().ok())
            .unwrap_or(k as u64);
        let extreme = extract_extreme_points(&read_mask(path)?)?;
        records.push(AnnotationRecord {
            object_id: id,
            class_id: (id + 2) as u32,
            extreme,
            image: image.to_string(),
        });
    }
    write_annotations(&out.join("annotations.jsonl"), &records)?;
    println!("{} annotations", records.len());
    write_run(out, "extract-points", json!({ "masks": masks, "image": image }), cfg)
}

fn build_tpm(out: &Path, cfg: &RunConfig, sim: &Path) -> Result<()> {
    let s = read_similarity(sim)?;
    let (t, balanced) = build_transition(&s, &cfg.sinkhorn())?;
    write_matrix(&out.join("tpm.extm"), t.matrix())?;
    println!(
        "n {} sinkhorn iterations {} deviation {:e}",
        t.n(),
        balanced.iterations,
        balanced.deviation
    );
    write_run(out, "build-tpm", json!({ "sim": sim }), cfg)
}

/// Propagation scores of one object, with the window they refer to.
#[derive(Debug, Serialize, Deserialize)]
struct ScoresFile {
    object_id: u64,
    hops: Hops,
    window: BBox,
    target_side: u32,
    patch_side: u32,
    #[serde(flatten)]
    scores: PropagationScores,
}

fn propagate(
    out: &Path,
    cfg: &RunConfig,
    tpm: &Path,
    hops: Hops,
    ann: &Path,
    object: Option<u64>,
) -> Result<()> {
    let t = TransitionMatrix::from_matrix(read_matrix(tpm)?)?;
    let records = read_annotations(ann)?;
    let record = find_record(&records, object)?;
    let seeds = seeds_for(&record.extreme, cfg)?;
    if seeds.window.n_nodes() != t.n() {
        return Err(Error::SizeMismatch {
            expected: format!("{} nodes for patch_side {}", seeds.window.n_nodes(), cfg.patch_side),
            actual: t.n().to_string(),
        });
    }
    let propagated = match hops {
        Hops::Power { alpha } => propagate_power(&t, alpha)?,
        Hops::Absorbing { beta } => propagate_absorbing(&t, beta)?,
    };
    let scores = propagation_scores(&propagated, &seeds.fg, &seeds.bg)?;
    write_matrix(&out.join("propagated.extm"), &propagated)?;
    write_json(
        &out.join("scores.json"),
        &ScoresFile {
            object_id: record.object_id,
            hops,
            window: seeds.window.rect(),
            target_side: seeds.window.target_side(),
            patch_side: cfg.patch_side,
            scores,
        },
    )?;
    println!(
        "object {} fg seeds {} bg seeds {}",
        record.object_id,
        seeds.fg.len(),
        seeds.bg.len()
    );
    write_run(
        out,
        "propagate",
        json!({ "tpm": tpm, "ann": ann, "object": object, "hops": hops }),
        cfg,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct RetrievedFile {
    object_id: u64,
    hops: Hops,
    tau_fg: f64,
    tau_bg: f64,
    /// One character per node: `F`, `B` or `.`.
    labels: String,
    dropout_seed: u64,
    dropped: String,
}

fn retrieve(out: &Path, cfg: &RunConfig, scores_path: &Path, ann: &Path) -> Result<()> {
    let file: ScoresFile = read_json(scores_path)?;
    let records = read_annotations(ann)?;
    let record = find_record(&records, Some(file.object_id))?;
    let seeds = seeds_for(&record.extreme, cfg)?;
    if seeds.window.rect() != file.window || cfg.patch_side != file.patch_side {
        return Err(Error::InvalidParameter(format!(
            "annotation and config give window {:?} with {} patches, scores were computed on {:?} with {}",
            seeds.window.rect(),
            cfg.patch_side,
            file.window,
            file.patch_side
        )));
    }
    if file.scores.n() != seeds.window.n_nodes() || file.scores.pi_bg.len() != file.scores.n() {
        return Err(Error::size_mismatch(seeds.window.n_nodes(), file.scores.n()));
    }
    let labels = threshold_labels(&file.scores, &seeds.interior, cfg.tau_fg, cfg.tau_bg, file.hops)?;
    let dropout = DropoutConfig {
        seed: derive_seed(cfg.seed, record.object_id, cfg.epoch),
        ..cfg.dropout()
    };
    let dropped = point_dropout(&labels, &dropout)?;
    let target = assemble_targets(&seeds.fg, &seeds.bg, &dropped, seeds.window.patch_side())?;
    write_mask(&out.join("y_hat.pgm"), &target.y_hat)?;
    write_mask(&out.join("k_mask.pgm"), &target.k_mask)?;
    write_json(
        &out.join("labels.json"),
        &RetrievedFile {
            object_id: record.object_id,
            hops: file.hops,
            tau_fg: cfg.tau_fg,
            tau_bg: cfg.tau_bg,
            labels: labels.to_code(),
            dropout_seed: dropout.seed,
            dropped: dropped.to_code(),
        },
    )?;
    println!(
        "object {} fg {} bg {} unlabeled {} kept_fg {} kept_bg {} mil_fallback {}",
        record.object_id,
        labels.count(Label::Fg),
        labels.count(Label::Bg),
        labels.count(Label::Unlabeled),
        dropped.count(Label::Fg),
        dropped.count(Label::Bg),
        labels.retrieved_empty()
    );
    write_run(out, "retrieve", json!({ "scores": scores_path, "ann": ann }), cfg)
}

fn refine(out: &Path, cfg: &RunConfig, mask_path: &Path, image_path: &Path) -> Result<()> {
    let bytes = fs::read(mask_path)?;
    let mask: ProbMask = if bytes.starts_with(b"EXPM") {
        decode_prob_mask(&bytes)?
    } else {
        decode_mask(&bytes)?.to_prob()
    };
    let image = read_image(image_path)?;
    let refined = meanfield_refine(&mask, &image, &cfg.crf())?;
    write_prob_mask(&out.join("refined.expm"), &refined)?;
    let fg = refined.values().iter().filter(|&&v| v >= 0.5).count();
    println!("{}x{} refined, {fg} pixels at or above 0.5", refined.width(), refined.height());
    write_run(out, "refine", json!({ "mask": mask_path, "image": image_path }), cfg)
}

/// Labels of one object as written by `pseudo-mask`.
#[derive(Debug, Serialize, Deserialize)]
struct LabelsFile {
    object_id: u64,
    class_id: u32,
    window: BBox,
    target_side: u32,
    patch_side: u32,
    delta_px: u32,
    sinkhorn_iterations: usize,
    fg_seeds: Vec<usize>,
    bg_seeds: Vec<usize>,
    /// Box-interior labels, one character per node.
    labels: String,
    /// Labels with the seeds merged in.
    merged: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss: Option<LossStats>,
}

fn code(labels: &[Label]) -> String {
    labels.iter().map(|l| l.as_char()).collect()
}

fn pseudo_mask(out: &Path, cfg: &RunConfig, scene_dir: &Path) -> Result<()> {
    let (scene, records) = load_scene(scene_dir)?;
    let results: Vec<ObjectResult> = records
        .par_iter()
        .map(|r| {
            let seeds = seeds_for(&r.extreme, cfg)?;
            let sim = similarity_from_scene(
                &scene,
                r.object_id as usize,
                &seeds.window,
                scene.spec.noise_sigma,
                cfg.temperature,
            )?;
            run_object(&scene.image, seeds, &sim, cfg, true)
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(out.join("baseline"))?;
    for (record, res) in records.iter().zip(&results) {
        let id = record.object_id;
        let base = res.baseline.as_ref().expect("baseline requested");
        let file = |labels: &str, merged: &str, loss: Option<LossStats>| LabelsFile {
            object_id: id,
            class_id: record.class_id,
            window: res.seeds.window.rect(),
            target_side: res.seeds.window.target_side(),
            patch_side: res.seeds.window.patch_side() as u32,
            delta_px: res.seeds.delta_px,
            sinkhorn_iterations: res.sinkhorn_iterations,
            fg_seeds: res.seeds.fg.nodes().to_vec(),
            bg_seeds: res.seeds.bg.nodes().to_vec(),
            labels: labels.to_string(),
            merged: merged.to_string(),
            loss,
        };
        write_mask(&out.join(object_file("obj", id, "pgm")), &res.outcome.mask)?;
        write_json(
            &out.join(object_file("labels", id, "json")),
            &file(&res.labels.to_code(), &code(&res.merged), Some(res.loss)),
        )?;
        let base_dir = out.join("baseline");
        write_mask(&base_dir.join(object_file("obj", id, "pgm")), &base.outcome.mask)?;
        write_json(
            &base_dir.join(object_file("labels", id, "json")),
            &file(&base.labels.to_code(), &code(&base.merged), None),
        )?;
        println!(
            "object {id}: fg {} bg {} unlabeled {} mask {} px, baseline fg {} mask {} px, loss {:.6}",
            res.labels.count(Label::Fg),
            res.labels.count(Label::Bg),
            res.labels.count(Label::Unlabeled),
            res.outcome.mask.count(),
            base.labels.count(Label::Fg),
            base.outcome.mask.count(),
            res.loss.overall
        );
    }
    write_run(out, "pseudo-mask", json!({ "scene": scene_dir }), cfg)
}

fn parse_code(code: &str) -> Result<Vec<Label>> {
    code.chars()
        .enumerate()
        .map(|(k, c)| {
            Label::from_char(c).ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("label character {c:?} at node {k}"),
            })
        })
        .collect()
}

fn eval_dir(pred: &Path, scene: &Scene, records: &[AnnotationRecord]) -> Result<EvalReport> {
    let mut ious = Vec::with_capacity(records.len());
    let mut counts = PointCounts::default();
    for r in records {
        let k = r.object_id as usize;
        let mask = read_mask(&pred.join(object_file("obj", r.object_id, "pgm")))?;
        ious.push(iou(&mask, &scene.gt_masks[k])?);
        let file: LabelsFile = read_json(&pred.join(object_file("labels", r.object_id, "json")))?;
        let window = CropWindow::new(file.window, file.target_side, file.patch_side)?;
        let gt_object: Vec<bool> = patch_classes(scene, &window)
            .into_iter()
            .map(|c| u32::from(c) == r.class_id)
            .collect();
        let labels = PseudoPointLabels {
            labels: parse_code(&file.labels)?,
            tau_fg: 0.0,
            tau_bg: 0.0,
            hops: Hops::Power { alpha: 0 },
        };
        counts.add(&point_label_counts(&labels, &gt_object)?);
    }
    Ok(EvalReport::new(ious, &counts))
}

fn eval(out: &Path, cfg: &RunConfig, pred: &Path, gt: &Path, baseline: bool) -> Result<()> {
    let (scene, records) = load_scene(gt)?;
    let mut report = eval_dir(pred, &scene, &records)?;
    if baseline {
        report.baseline = Some(Box::new(eval_dir(&pred.join("baseline"), &scene, &records)?));
    }
    write_json(&out.join("report.json"), &report)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
    print!("objects {} mean_iou {}", report.n_objects, fmt(report.mean_iou));
    if let Some(b) = &report.baseline {
        print!(" baseline_mean_iou {}", fmt(b.mean_iou));
    }
    println!();
    write_run(out, "eval", json!({ "pred": pred, "gt": gt, "baseline": baseline }), cfg)
}
