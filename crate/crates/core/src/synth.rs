//! Synthetic scenes with ground truth, occluders, and similarity matrices that
//! stand in for transformer attention.
//!
//! Semantic classes: 0 is background, 1 the occluder, `2 + k` object `k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crf::GuideImage;
use crate::grid::{
    extract_extreme_points, nodes_centered_in, BBox, BinaryMask, CropWindow, ExtremePoints,
    PointSet,
};
use crate::retrieval::{derive_seed, Hops, Label, PseudoPointLabels};
use crate::tpm::{Matrix, SimilarityMatrix};
use crate::{Error, Result};

pub const BACKGROUND_CLASS: u8 = 0;
pub const OCCLUDER_CLASS: u8 = 1;
pub const MAX_OBJECTS: usize = 200;
pub const PLACEMENT_ATTEMPTS: usize = 1000;

/// Gap kept between object boxes, pixels.
const OBJECT_GAP: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Ellipse,
    Polyomino,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occluder {
    None,
    /// Vertical bar over the full image height through object 0, clear of
    /// its extreme points.
    Bar,
    /// Disk inside object 0.
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub image_side: u32,
    /// Patches per crop side.
    pub patch_side: u32,
    pub n_objects: usize,
    pub shape: Shape,
    pub min_extent: u32,
    pub max_extent: u32,
    pub occluder: Occluder,
    pub occluder_min_width: u32,
    pub occluder_max_width: u32,
    /// Minimum column distance between a bar and the occluded object's
    /// extreme points.
    pub occluder_clearance: u32,
    /// Stddev of the feature noise in [`similarity_from_scene`].
    pub noise_sigma: f64,
    /// Stddev of the per-pixel colour noise, intensity units.
    pub pixel_noise: f64,
    /// Number of scenes the CLI emits from this spec.
    pub scenes: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_side: 64,
            patch_side: 16,
            n_objects: 1,
            shape: Shape::Ellipse,
            min_extent: 26,
            max_extent: 34,
            occluder: Occluder::Bar,
            occluder_min_width: 6,
            occluder_max_width: 7,
            occluder_clearance: 7,
            noise_sigma: 0.0,
            pixel_noise: 6.0,
            scenes: 1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.patch_side == 0 || !self.image_side.is_multiple_of(self.patch_side) {
            return bad(format!(
                "image_side {} not divisible by patch_side {}",
                self.image_side, self.patch_side
            ));
        }
        if self.n_objects == 0 || self.n_objects > MAX_OBJECTS {
            return bad(format!("n_objects {} outside 1..={MAX_OBJECTS}", self.n_objects));
        }
        if self.min_extent < 3 || self.min_extent > self.max_extent || self.max_extent > self.image_side {
            return bad(format!(
                "object extent range {}..={} for a {}-pixel image",
                self.min_extent, self.max_extent, self.image_side
            ));
        }
        if self.occluder != Occluder::None
            && (self.occluder_min_width == 0
                || self.occluder_min_width > self.occluder_max_width
                || self.occluder_max_width * 3 > self.min_extent)
        {
            return bad(format!(
                "occluder width range {}..={} must be nonempty and under a third of the smallest object",
                self.occluder_min_width, self.occluder_max_width
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
            || !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite())
        {
            return bad("noise levels must be finite and nonnegative".into());
        }
        Ok(())
    }

    /// Spec of the `index`-th scene of a batch.
    pub fn for_scene(&self, index: usize) -> SceneSpec {
        SceneSpec {
            scenes: 1,
            seed: derive_seed(self.seed, index as u64, 0),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub image: GuideImage,
    pub gt_masks: Vec<BinaryMask>,
    /// Per-pixel class id, row-major.
    pub semantic: Vec<u8>,
    pub annotations: Vec<ExtremePoints>,
}

impl Scene {
    /// Reassembles a scene from stored parts, re-deriving the annotations.
    pub fn from_parts(
        spec: SceneSpec,
        image: GuideImage,
        semantic: Vec<u8>,
        gt_masks: Vec<BinaryMask>,
    ) -> Result<Self> {
        let side = spec.image_side as usize;
        if image.width() != side || image.height() != side || semantic.len() != side * side {
            return Err(Error::size_mismatch(
                format!("{side}x{side}"),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        let annotations = gt_masks
            .iter()
            .map(extract_extreme_points)
            .collect::<Result<_>>()?;
        Ok(Scene {
            spec,
            image,
            gt_masks,
            semantic,
            annotations,
        })
    }

    pub fn side(&self) -> usize {
        self.spec.image_side as usize
    }

    pub fn class_of_object(k: usize) -> u8 {
        (k + 2) as u8
    }

    fn class_at(&self, x: i32, y: i32) -> u8 {
        let s = self.side() as i32;
        let (x, y) = (x.clamp(0, s - 1), y.clamp(0, s - 1));
        self.semantic[(y * s + x) as usize]
    }
}

/// Fixed, well separated class colours.
pub fn class_color(class: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [200, 60, 60],
        [60, 60, 200],
        [210, 200, 60],
        [60, 200, 200],
        [200, 60, 200],
        [240, 150, 40],
        [120, 220, 120],
        [240, 240, 240],
    ];
    match class {
        BACKGROUND_CLASS => [60, 90, 60],
        OCCLUDER_CLASS => [150, 110, 70],
        c => {
            let k = usize::from(c - 2);
            let base = PALETTE[k % PALETTE.len()];
            // later cycles are darkened so colours stay distinct
            let shade = (k / PALETTE.len()) as u8 * 7;
            base.map(|v| v.saturating_sub(shade))
        }
    }
}

fn shape_mask(shape: Shape, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    match shape {
        Shape::Rect => vec![true; w * h],
        Shape::Ellipse => {
            let (a, b) = (w as f64 / 2.0, h as f64 / 2.0);
            (0..w * h)
                .map(|i| {
                    let dx = ((i % w) as f64 + 0.5 - a) / a;
                    let dy = ((i / w) as f64 + 0.5 - b) / b;
                    dx * dx + dy * dy <= 1.0
                })
                .collect()
        }
        Shape::Polyomino => {
            let cell = 4;
            let (gw, gh) = (w.div_ceil(cell), h.div_ceil(cell));
            let mut on = vec![false; gw * gh];
            let start = (gh / 2) * gw + gw / 2;
            on[start] = true;
            let mut frontier = vec![start];
            let target = (gw * gh * 3).div_ceil(5);
            let mut filled = 1;
            while filled < target && !frontier.is_empty() {
                let pick = frontier[rng.random_range(0..frontier.len())];
                let (cx, cy) = (pick % gw, pick / gw);
                let mut next = Vec::with_capacity(4);
                if cx > 0 {
                    next.push(pick - 1);
                }
                if cx + 1 < gw {
                    next.push(pick + 1);
                }
                if cy > 0 {
                    next.push(pick - gw);
                }
                if cy + 1 < gh {
                    next.push(pick + gw);
                }
                next.retain(|&c| !on[c]);
                if next.is_empty() {
                    frontier.retain(|&c| c != pick);
                    continue;
                }
                let c = next[rng.random_range(0..next.len())];
                on[c] = true;
                frontier.push(c);
                filled += 1;
            }
            (0..w * h)
                .map(|i| on[((i / w) / cell) * gw + (i % w) / cell])
                .collect()
        }
    }
}

/// Left column and width of a vertical bar strictly inside `b` that keeps
/// `occluder_clearance` columns away from every extreme point of the shape.
fn place_bar(
    spec: &SceneSpec,
    b: &BBox,
    shape: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<Option<(i32, i32)>> {
    let (w, h) = (b.width() as usize, b.height() as usize);
    let ep = extract_extreme_points(&BinaryMask::from_vec(
        w,
        h,
        shape.iter().map(|&on| u8::from(on)).collect(),
    )?)?;
    let c = spec.occluder_clearance as i32;
    let bw = rng.random_range(spec.occluder_min_width..=spec.occluder_max_width) as i32;
    let lefts: Vec<i32> = (1..=w as i32 - 1 - bw)
        .filter(|&x| {
            ep.to_array()
                .iter()
                .all(|p| x + bw - 1 <= p.x - c || x >= p.x + c)
        })
        .collect();
    if lefts.is_empty() {
        return Ok(None);
    }
    Ok(Some((b.x_min + lefts[rng.random_range(0..lefts.len())], bw)))
}

/// Draws a scene; identical specs give bit-identical scenes.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.image_side as i32;
    let mut semantic = vec![BACKGROUND_CLASS; (side * side) as usize];

    let mut boxes: Vec<BBox> = Vec::with_capacity(spec.n_objects);
    let mut bar: Option<(i32, i32)> = None;
    for k in 0..spec.n_objects {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(spec.min_extent..=spec.max_extent) as i32;
            let h = rng.random_range(spec.min_extent..=spec.max_extent) as i32;
            let x0 = rng.random_range(0..=side - w);
            let y0 = rng.random_range(0..=side - h);
            let b = BBox::new(x0, y0, x0 + w - 1, y0 + h - 1)?;
            let grown = BBox::new(
                b.x_min - OBJECT_GAP,
                b.y_min - OBJECT_GAP,
                b.x_max + OBJECT_GAP,
                b.y_max + OBJECT_GAP,
            )?;
            if boxes.iter().any(|o| o.intersects(&grown)) {
                continue;
            }
            let shape = shape_mask(spec.shape, w as usize, h as usize, &mut rng);
            if k == 0 && spec.occluder == Occluder::Bar {
                match place_bar(spec, &b, &shape, &mut rng)? {
                    Some(found) => bar = Some(found),
                    None => continue,
                }
            }
            placed = Some((b, shape));
            break;
        }
        let (b, shape) = placed.ok_or(Error::PlacementFailure {
            requested: spec.n_objects,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        let w = b.width() as usize;
        for (i, _) in shape.iter().enumerate().filter(|(_, &on)| on) {
            let (x, y) = (b.x_min + (i % w) as i32, b.y_min + (i / w) as i32);
            semantic[(y * side + x) as usize] = Scene::class_of_object(k);
        }
        boxes.push(b);
    }

    let first = boxes[0];
    match spec.occluder {
        Occluder::None => {}
        Occluder::Bar => {
            let (x0, bw) = bar.expect("bar placed with object 0");
            for y in 0..side {
                for x in x0..x0 + bw {
                    semantic[(y * side + x) as usize] = OCCLUDER_CLASS;
                }
            }
        }
        Occluder::Blob => {
            let r = f64::from(rng.random_range(spec.occluder_min_width..=spec.occluder_max_width)) / 2.0;
            let cx = rng.random_range(first.x_min + r as i32..=first.x_max - r as i32) as f64 + 0.5;
            let cy = rng.random_range(first.y_min + r as i32..=first.y_max - r as i32) as f64 + 0.5;
            for y in 0..side {
                for x in 0..side {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        semantic[(y * side + x) as usize] = OCCLUDER_CLASS;
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.pixel_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut pixels = Vec::with_capacity(semantic.len() * 3);
    for &class in &semantic {
        for c in class_color(class) {
            let jitter = if spec.pixel_noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            pixels.push((f64::from(c) + jitter).round().clamp(0.0, 255.0));
        }
    }
    let s = side as usize;
    let image = GuideImage::new(s, s, 3, pixels)?;
    let gt_masks = (0..spec.n_objects)
        .map(|k| {
            let class = Scene::class_of_object(k);
            BinaryMask::from_vec(s, s, semantic.iter().map(|&c| u8::from(c == class)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Scene::from_parts(spec.clone(), image, semantic, gt_masks)
}

/// Plurality class of each patch; ties go to the smaller class id.
pub fn patch_classes(scene: &Scene, window: &CropWindow) -> Vec<u8> {
    (0..window.n_nodes())
        .map(|node| {
            let r = window.patch_rect(node);
            let mut counts = [0usize; 256];
            for y in r.y_min..=r.y_max {
                for x in r.x_min..=r.x_max {
                    counts[usize::from(scene.class_at(x, y))] += 1;
                }
            }
            let best = counts.iter().copied().max().unwrap_or(0);
            counts.iter().position(|&c| c == best).unwrap_or(0) as u8
        })
        .collect()
}

fn patch_mean_color(scene: &Scene, window: &CropWindow, node: usize) -> [f64; 3] {
    let r = window.patch_rect(node);
    let mut sum = [0.0; 3];
    for y in r.y_min..=r.y_max {
        for x in r.x_min..=r.x_max {
            for (s, v) in sum.iter_mut().zip(scene.image.pixel_clamped(x, y)) {
                *s += v;
            }
        }
    }
    let n = f64::from(r.width() * r.height());
    sum.map(|s| s / n)
}

/// Patch features: centred mean colour, then a one-hot class embedding.
pub fn patch_features(scene: &Scene, window: &CropWindow, sigma: f64, object_index: usize) -> Result<Vec<Vec<f64>>> {
    let classes = patch_classes(scene, window);
    let n_classes = scene.spec.n_objects + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        scene.spec.seed ^ sigma.to_bits(),
        object_index as u64,
        0,
    ));
    rng.set_stream(2);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((0..window.n_nodes())
        .map(|node| {
            let colour = patch_mean_color(scene, window, node);
            let mut f: Vec<f64> = colour.iter().map(|c| 0.5 * (c / 255.0 - 0.5)).collect();
            f.extend((0..n_classes).map(|c| f64::from(u8::from(c == usize::from(classes[node])))));
            if sigma > 0.0 {
                for v in &mut f {
                    *v += noise.sample(&mut rng);
                }
            }
            f
        })
        .collect())
}

/// Row-softmax of scaled feature dot products over the patches of `window`.
pub fn similarity_from_scene(
    scene: &Scene,
    object_index: usize,
    window: &CropWindow,
    sigma: f64,
    temperature: f64,
) -> Result<SimilarityMatrix> {
    if !(temperature > 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature {temperature}, sigma {sigma}"
        )));
    }
    let f = patch_features(scene, window, sigma, object_index)?;
    let n = f.len();
    let mut m = Matrix::zeros(n);
    for i in 0..n {
        let logits: Vec<f64> = f
            .iter()
            .map(|fj| f[i].iter().zip(fj).map(|(a, b)| a * b).sum::<f64>() / temperature)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            m.set(i, j, e / z);
        }
    }
    SimilarityMatrix::new(m)
}

/// Tightness-prior labeler: in every patch row and column crossing the box,
/// the in-box node most similar to the FG seeds is labeled FG. Other in-box
/// nodes stay unlabeled; patches entirely outside the box are BG.
///
/// The threshold fields of the result are unused and set to zero.
pub fn tightness_baseline_labels(
    window: &CropWindow,
    bbox: &BBox,
    similarity: &SimilarityMatrix,
    fg: &PointSet,
) -> Result<PseudoPointLabels> {
    let n = window.n_nodes();
    if similarity.n() != n {
        return Err(Error::size_mismatch(n, similarity.n()));
    }
    if fg.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    let s = similarity.matrix();
    let affinity: Vec<f64> = (0..n)
        .map(|i| fg.nodes().iter().map(|&j| s.get(j, i)).sum::<f64>() / fg.len() as f64)
        .collect();
    let side = window.patch_side();
    let mut labels = vec![Label::Unlabeled; n];
    let mut best_row: Vec<Option<usize>> = vec![None; side];
    let mut best_col: Vec<Option<usize>> = vec![None; side];
    for node in nodes_centered_in(bbox, window) {
        let (c, r) = window.node_xy(node);
        for slot in [&mut best_row[r], &mut best_col[c]] {
            // strict comparison keeps the lowest index on ties
            if slot.is_none_or(|b| affinity[node] > affinity[b]) {
                *slot = Some(node);
            }
        }
    }
    for node in best_row.into_iter().chain(best_col).flatten() {
        labels[node] = Label::Fg;
    }
    for node in 0..n {
        if !window.patch_rect(node).intersects(bbox) {
            labels[node] = Label::Bg;
        }
    }
    Ok(PseudoPointLabels {
        labels,
        tau_fg: 0.0,
        tau_bg: 0.0,
        hops: Hops::Power { alpha: 0 },
    })
}

/// Number of 4-connected components of a mask.
pub fn connected_components(mask: &BinaryMask) -> usize {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || mask.values()[start] == 0 {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if !seen[j] && mask.values()[j] != 0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    count
}
