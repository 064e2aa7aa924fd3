//! Extreme points, boxes, masks, and the pixel to patch-grid mapping.
//!
//! Coordinates are integer pixel indices with the origin at the top-left
//! corner and `y` growing downward. A crop window is resized to
//! `target_side x target_side` and split into `patch_side x patch_side`
//! patches; patch nodes are numbered row-major.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Pixel { x, y }
    }
}

impl From<(i32, i32)> for Pixel {
    fn from((x, y): (i32, i32)) -> Self {
        Pixel { x, y }
    }
}

/// The outermost object pixels along the four cardinal directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremePoints {
    pub top: Pixel,
    pub left: Pixel,
    pub bottom: Pixel,
    pub right: Pixel,
}

impl ExtremePoints {
    pub fn new(top: Pixel, left: Pixel, bottom: Pixel, right: Pixel) -> Result<Self> {
        if top.y > bottom.y {
            return Err(Error::InvalidParameter(format!(
                "top.y ({}) exceeds bottom.y ({})",
                top.y, bottom.y
            )));
        }
        if left.x > right.x {
            return Err(Error::InvalidParameter(format!(
                "left.x ({}) exceeds right.x ({})",
                left.x, right.x
            )));
        }
        Ok(ExtremePoints {
            top,
            left,
            bottom,
            right,
        })
    }

    /// Points in annotation order: top, left, bottom, right.
    pub fn to_array(&self) -> [Pixel; 4] {
        [self.top, self.left, self.bottom, self.right]
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for p in self.to_array() {
            if p.x < 0 || p.y < 0 || p.x as usize >= width || p.y as usize >= height {
                return Err(Error::InvalidParameter(format!(
                    "extreme point ({}, {}) outside {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: i32,
    pub y_min: i32,
    pub x_max: i32,
    pub y_max: i32,
}

impl BBox {
    pub fn new(x_min: i32, y_min: i32, x_max: i32, y_max: i32) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidParameter(format!(
                "degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> i32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> i32 {
        self.y_max - self.y_min + 1
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.x_max <= self.x_max
            && other.y_min >= self.y_min
            && other.y_max <= self.y_max
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x_min <= other.x_max
            && other.x_min <= self.x_max
            && self.y_min <= other.y_max
            && other.y_min <= self.y_max
    }

    fn clamp(&self, p: Pixel) -> Pixel {
        Pixel::new(
            p.x.clamp(self.x_min, self.x_max),
            p.y.clamp(self.y_min, self.y_max),
        )
    }
}

/// A `{0,1}` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        })
    }

    /// Nonzero entries of `values` become 1.
    pub fn from_vec(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::size_mismatch(width * height, values.len()));
        }
        let data = values.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    /// Filled rectangle mask, clipped to the grid.
    pub fn from_box(width: usize, height: usize, bbox: &BBox) -> Result<Self> {
        Self::from_fn(width, height, |x, y| {
            bbox.contains(Pixel::new(x as i32, y as i32))
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Smallest box containing every foreground pixel.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let mut out: Option<BBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let (x, y) = (x as i32, y as i32);
                    out = Some(match out {
                        None => BBox {
                            x_min: x,
                            y_min: y,
                            x_max: x,
                            y_max: y,
                        },
                        Some(b) => BBox {
                            x_min: b.x_min.min(x),
                            y_min: b.y_min.min(y),
                            x_max: b.x_max.max(x),
                            y_max: b.y_max.max(y),
                        },
                    });
                }
            }
        }
        out
    }

    pub fn to_prob(&self) -> ProbMask {
        ProbMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// A grid of probabilities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::size_mismatch(width * height, values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ValueOutOfRange { index, value });
            }
        }
        Ok(ProbMask {
            width,
            height,
            data: values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::size_mismatch(
                format!("{width}x{height}"),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }

    /// Pixels with probability `>= threshold` become foreground.
    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| u8::from(v >= threshold)).collect(),
        }
    }

    /// Entrywise complement `1 - p`.
    pub fn complement(&self) -> ProbMask {
        ProbMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1.0 - v).collect(),
        }
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::BadDimensions(format!("{width}x{height}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointRole {
    InitialFg,
    InitialBg,
    BoxInterior,
}

/// Patch-grid nodes with a role; sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSet {
    role: PointRole,
    nodes: Vec<usize>,
}

impl PointSet {
    /// Sorts and deduplicates `nodes`; every index must be below `n_nodes`.
    pub fn new(role: PointRole, mut nodes: Vec<usize>, n_nodes: usize) -> Result<Self> {
        if let Some(&bad) = nodes.iter().find(|&&i| i >= n_nodes) {
            return Err(Error::InvalidParameter(format!(
                "node {bad} outside grid of {n_nodes} nodes"
            )));
        }
        nodes.sort_unstable();
        nodes.dedup();
        Ok(PointSet { role, nodes })
    }

    pub fn role(&self) -> PointRole {
        self.role
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }
}

/// A source-image rectangle resized to a square grid of patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    rect: BBox,
    target_side: u32,
    patch_side: u32,
}

impl CropWindow {
    pub fn new(rect: BBox, target_side: u32, patch_side: u32) -> Result<Self> {
        if patch_side == 0 || target_side == 0 || !target_side.is_multiple_of(patch_side) {
            return Err(Error::InvalidParameter(format!(
                "target side {target_side} not divisible by patch side {patch_side}"
            )));
        }
        if rect.width() < patch_side as i32 || rect.height() < patch_side as i32 {
            return Err(Error::InvalidParameter(format!(
                "window {}x{} smaller than {patch_side} patches per side",
                rect.width(),
                rect.height()
            )));
        }
        Ok(CropWindow {
            rect,
            target_side,
            patch_side,
        })
    }

    /// Window around an object box: each side dilated by `ceil(pad * extent)`,
    /// then widened symmetrically to at least `patch_side` pixels per axis.
    pub fn around(bbox: &BBox, pad: f64, target_side: u32, patch_side: u32) -> Result<Self> {
        if !(pad >= 0.0 && pad.is_finite()) {
            return Err(Error::InvalidParameter(format!("crop pad {pad}")));
        }
        let grow = |lo: i32, hi: i32| -> (i32, i32) {
            let extent = hi - lo + 1;
            let margin = (pad * f64::from(extent)).ceil() as i32;
            let (mut lo, mut hi) = (lo - margin, hi + margin);
            let short = patch_side as i32 - (hi - lo + 1);
            if short > 0 {
                lo -= short / 2;
                hi += short - short / 2;
            }
            (lo, hi)
        };
        let (x_min, x_max) = grow(bbox.x_min, bbox.x_max);
        let (y_min, y_max) = grow(bbox.y_min, bbox.y_max);
        Self::new(BBox::new(x_min, y_min, x_max, y_max)?, target_side, patch_side)
    }

    pub fn rect(&self) -> BBox {
        self.rect
    }

    pub fn target_side(&self) -> u32 {
        self.target_side
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side as usize
    }

    pub fn n_nodes(&self) -> usize {
        self.patch_side() * self.patch_side()
    }

    pub fn width(&self) -> usize {
        self.rect.width() as usize
    }

    pub fn height(&self) -> usize {
        self.rect.height() as usize
    }

    /// Patch column (or row) of a pixel offset along an axis of `extent` pixels.
    fn axis_patch(&self, offset: i64, extent: i64) -> usize {
        let target = i64::from(self.target_side);
        let cell = target / i64::from(self.patch_side);
        let resized = offset * target / extent;
        (resized / cell) as usize
    }

    /// First pixel offset that maps to patch index `c` along an axis.
    fn axis_start(&self, c: usize, extent: i64) -> i64 {
        // dx lands in patch c iff dx * T >= c * (T/N) * extent
        let target = i64::from(self.target_side);
        let cell = target / i64::from(self.patch_side);
        let bound = c as i64 * cell * extent;
        (bound + target - 1) / target
    }

    pub fn pixel_to_patch(&self, p: Pixel) -> Result<usize> {
        if !self.rect.contains(p) {
            return Err(Error::OutOfWindow { x: p.x, y: p.y });
        }
        Ok(self.node_of(p))
    }

    /// Patch node of a pixel already known to lie in the window.
    pub(crate) fn node_of(&self, p: Pixel) -> usize {
        let col = self.axis_patch(i64::from(p.x - self.rect.x_min), self.width() as i64);
        let row = self.axis_patch(i64::from(p.y - self.rect.y_min), self.height() as i64);
        row * self.patch_side() + col
    }

    /// `(column, row)` of a node.
    pub fn node_xy(&self, node: usize) -> (usize, usize) {
        (node % self.patch_side(), node / self.patch_side())
    }

    /// Source pixels that map to `node`, as an inclusive rectangle.
    pub fn patch_rect(&self, node: usize) -> BBox {
        let (col, row) = self.node_xy(node);
        let (w, h) = (self.width() as i64, self.height() as i64);
        let x0 = self.axis_start(col, w);
        let x1 = self.axis_start(col + 1, w) - 1;
        let y0 = self.axis_start(row, h);
        let y1 = self.axis_start(row + 1, h) - 1;
        BBox {
            x_min: self.rect.x_min + x0 as i32,
            y_min: self.rect.y_min + y0 as i32,
            x_max: self.rect.x_min + x1 as i32,
            y_max: self.rect.y_min + y1 as i32,
        }
    }

    /// Patch centre in continuous coordinates where pixel `x` spans `[x, x+1)`.
    pub fn patch_center(&self, node: usize) -> (f64, f64) {
        let r = self.patch_rect(node);
        (
            f64::from(r.x_min + r.x_max + 1) / 2.0,
            f64::from(r.y_min + r.y_max + 1) / 2.0,
        )
    }
}

pub fn bbox_from_extremes(ep: &ExtremePoints) -> BBox {
    BBox {
        x_min: ep.left.x,
        y_min: ep.top.y,
        x_max: ep.right.x,
        y_max: ep.bottom.y,
    }
}

/// Extreme points pushed `delta` pixels toward the box centre, clamped into the box.
pub fn initial_foreground_points(ep: &ExtremePoints, delta: u32, bbox: &BBox) -> [Pixel; 4] {
    let d = delta as i32;
    [
        Pixel::new(ep.top.x, ep.top.y + d),
        Pixel::new(ep.left.x + d, ep.left.y),
        Pixel::new(ep.bottom.x, ep.bottom.y - d),
        Pixel::new(ep.right.x - d, ep.right.y),
    ]
    .map(|p| bbox.clamp(p))
}

/// Initial foreground seeds as patch nodes; coinciding seeds collapse.
pub fn initial_foreground(
    ep: &ExtremePoints,
    delta: u32,
    bbox: &BBox,
    window: &CropWindow,
) -> Result<PointSet> {
    let nodes = initial_foreground_points(ep, delta, bbox)
        .into_iter()
        .map(|p| window.pixel_to_patch(p))
        .collect::<Result<Vec<_>>>()?;
    PointSet::new(PointRole::InitialFg, nodes, window.n_nodes())
}

/// Patches whose pixels all lie outside the box; straddling patches are excluded.
pub fn initial_background(bbox: &BBox, window: &CropWindow) -> Result<PointSet> {
    if !bbox.intersects(&window.rect()) {
        return Err(Error::InvalidParameter(
            "box does not intersect the crop window".into(),
        ));
    }
    let nodes: Vec<usize> = (0..window.n_nodes())
        .filter(|&node| !window.patch_rect(node).intersects(bbox))
        .collect();
    if nodes.is_empty() {
        return Err(Error::EmptyBackground);
    }
    PointSet::new(PointRole::InitialBg, nodes, window.n_nodes())
}

/// Patches whose centre lies inside the box, minus the foreground seeds.
pub fn box_interior(bbox: &BBox, window: &CropWindow, fg: &PointSet) -> Result<PointSet> {
    let nodes: Vec<usize> = nodes_centered_in(bbox, window)
        .filter(|&node| !fg.contains(node))
        .collect();
    PointSet::new(PointRole::BoxInterior, nodes, window.n_nodes())
}

pub(crate) fn nodes_centered_in<'a>(
    bbox: &'a BBox,
    window: &'a CropWindow,
) -> impl Iterator<Item = usize> + 'a {
    (0..window.n_nodes()).filter(move |&node| {
        let (cx, cy) = window.patch_center(node);
        cx >= f64::from(bbox.x_min)
            && cx < f64::from(bbox.x_max + 1)
            && cy >= f64::from(bbox.y_min)
            && cy < f64::from(bbox.y_max + 1)
    })
}

/// Extreme points of a mask. Ties go to the smaller secondary coordinate.
pub fn extract_extreme_points(mask: &BinaryMask) -> Result<ExtremePoints> {
    // (primary, secondary) keys compared lexicographically
    let mut top: Option<(i32, i32)> = None; // (y, x) min
    let mut bottom: Option<(i32, i32)> = None; // (-y, x) min
    let mut left: Option<(i32, i32)> = None; // (x, y) min
    let mut right: Option<(i32, i32)> = None; // (-x, y) min
    let better = |slot: &mut Option<(i32, i32)>, key: (i32, i32)| {
        if slot.is_none_or(|cur| key < cur) {
            *slot = Some(key);
        }
    };
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                let (x, y) = (x as i32, y as i32);
                better(&mut top, (y, x));
                better(&mut bottom, (-y, x));
                better(&mut left, (x, y));
                better(&mut right, (-x, y));
            }
        }
    }
    match (top, left, bottom, right) {
        (Some(t), Some(l), Some(b), Some(r)) => Ok(ExtremePoints {
            top: Pixel::new(t.1, t.0),
            left: Pixel::new(l.0, l.1),
            bottom: Pixel::new(b.1, -b.0),
            right: Pixel::new(-r.0, r.1),
        }),
        _ => Err(Error::EmptyMask),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(t: (i32, i32), l: (i32, i32), b: (i32, i32), r: (i32, i32)) -> ExtremePoints {
        ExtremePoints::new(t.into(), l.into(), b.into(), r.into()).unwrap()
    }

    fn square_window(side: i32, patches: u32) -> CropWindow {
        CropWindow::new(BBox::new(0, 0, side - 1, side - 1).unwrap(), 512, patches).unwrap()
    }

    #[test]
    fn bbox_examples() {
        let b = bbox_from_extremes(&ep((5, 0), (0, 4), (6, 9), (9, 5)));
        assert_eq!(b, BBox::new(0, 0, 9, 9).unwrap());
        let b = bbox_from_extremes(&ep((3, 3), (3, 3), (3, 3), (3, 3)));
        assert_eq!(b, BBox::new(3, 3, 3, 3).unwrap());
        let b = bbox_from_extremes(&ep((2, 1), (1, 3), (4, 8), (7, 2)));
        assert_eq!(b, BBox::new(1, 1, 7, 8).unwrap());
    }

    #[test]
    fn extreme_points_reject_bad_order() {
        let r = ExtremePoints::new((0, 5).into(), (0, 0).into(), (0, 2).into(), (1, 0).into());
        assert!(r.is_err());
    }

    #[test]
    fn foreground_points_pushed_inward() {
        let e = ep((5, 0), (0, 4), (6, 9), (9, 5));
        let b = bbox_from_extremes(&e);
        assert_eq!(initial_foreground_points(&e, 0, &b), e.to_array());
        let pts = initial_foreground_points(&e, 2, &b);
        assert_eq!(
            pts,
            [(5, 2), (2, 4), (6, 7), (7, 5)].map(Pixel::from)
        );
    }

    #[test]
    fn foreground_points_clamp_in_thin_box() {
        let e = ep((4, 10), (0, 11), (5, 12), (9, 11));
        let b = bbox_from_extremes(&e);
        for p in initial_foreground_points(&e, 5, &b) {
            assert!(b.contains(p));
        }
        let w = square_window(16, 8);
        let fg = initial_foreground(&e, 5, &b, &w).unwrap();
        assert!(fg.len() <= 4);
    }

    #[test]
    fn pixel_to_patch_examples() {
        let w = square_window(512, 8);
        assert_eq!(w.pixel_to_patch(Pixel::new(0, 0)).unwrap(), 0);
        assert_eq!(w.pixel_to_patch(Pixel::new(511, 511)).unwrap(), 63);
        assert_eq!(w.pixel_to_patch(Pixel::new(300, 100)).unwrap(), 12);
        assert!(matches!(
            w.pixel_to_patch(Pixel::new(512, 0)),
            Err(Error::OutOfWindow { .. })
        ));
    }

    #[test]
    fn pixel_to_patch_is_surjective_on_odd_windows() {
        for (w, h) in [(8, 8), (13, 29), (50, 17), (64, 64)] {
            let win = CropWindow::new(BBox::new(3, -2, 3 + w - 1, -2 + h - 1).unwrap(), 64, 8)
                .unwrap();
            let mut seen = vec![false; 64];
            for y in -2..(-2 + h) {
                for x in 3..(3 + w) {
                    let node = win.pixel_to_patch(Pixel::new(x, y)).unwrap();
                    seen[node] = true;
                    assert!(win.patch_rect(node).contains(Pixel::new(x, y)));
                }
            }
            assert!(seen.iter().all(|&s| s), "{w}x{h}");
        }
    }

    #[test]
    fn background_requires_outside_patch() {
        let w = square_window(64, 8);
        assert!(matches!(
            initial_background(&w.rect(), &w),
            Err(Error::EmptyBackground)
        ));
    }

    #[test]
    fn background_is_border_ring_for_central_box() {
        // 8 px patches; box covers patches 1..=6 exactly
        let w = square_window(64, 8);
        let b = BBox::new(8, 8, 55, 55).unwrap();
        let bg = initial_background(&b, &w).unwrap();
        assert_eq!(bg.len(), 4 * 8 - 4);
    }

    #[test]
    fn background_matches_rectangle_oracle() {
        let w = square_window(64, 8);
        let b = BBox::new(16, 16, 47, 47).unwrap();
        let bg = initial_background(&b, &w).unwrap();
        let mut expected = Vec::new();
        for row in 0..8 {
            for col in 0..8 {
                let (x0, y0) = (col * 8, row * 8);
                let disjoint = x0 + 7 < 16 || x0 > 47 || y0 + 7 < 16 || y0 > 47;
                if disjoint {
                    expected.push((row * 8 + col) as usize);
                }
            }
        }
        assert_eq!(expected.len(), 48);
        assert_eq!(bg.nodes(), expected.as_slice());
    }

    #[test]
    fn box_interior_examples() {
        let w = square_window(64, 8);
        let tiny = BBox::new(20, 20, 22, 22).unwrap();
        let none = PointSet::new(PointRole::InitialFg, vec![], 64).unwrap();
        assert!(box_interior(&tiny, &w, &none).unwrap().len() <= 1);
        assert_eq!(box_interior(&w.rect(), &w, &none).unwrap().len(), 64);

        let b = BBox::new(16, 16, 47, 47).unwrap();
        let fg = PointSet::new(PointRole::InitialFg, vec![18, 21, 42, 45], 64).unwrap();
        let interior = box_interior(&b, &w, &fg).unwrap();
        assert_eq!(interior.len(), 12);
        assert!(fg.nodes().iter().all(|&n| !interior.contains(n)));
    }

    #[test]
    fn extreme_point_tie_break() {
        let single = BinaryMask::from_fn(10, 10, |x, y| (x, y) == (3, 3)).unwrap();
        let e = extract_extreme_points(&single).unwrap();
        assert_eq!(e.to_array(), [Pixel::new(3, 3); 4]);

        let row = BinaryMask::from_fn(10, 10, |_, y| y == 2).unwrap();
        let e = extract_extreme_points(&row).unwrap();
        assert_eq!(e.top, Pixel::new(0, 2));
        assert_eq!(e.left, Pixel::new(0, 2));
        assert_eq!(e.bottom, Pixel::new(0, 2));
        assert_eq!(e.right, Pixel::new(9, 2));

        let empty = BinaryMask::new(4, 4).unwrap();
        assert!(matches!(extract_extreme_points(&empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn l_shape_matches_scan_oracle() {
        // L: vertical bar x in 2..=3, y in 1..=8 plus foot y in 7..=8, x in 2..=7
        let m = BinaryMask::from_fn(10, 10, |x, y| {
            ((2..=3).contains(&x) && (1..=8).contains(&y))
                || ((2..=7).contains(&x) && (7..=8).contains(&y))
        })
        .unwrap();
        let e = extract_extreme_points(&m).unwrap();
        let pts: Vec<(i32, i32)> = (0..10)
            .flat_map(|y| (0..10).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x as usize, y as usize))
            .collect();
        let top = pts.iter().min_by_key(|p| (p.1, p.0)).unwrap();
        let bottom = pts.iter().min_by_key(|p| (-p.1, p.0)).unwrap();
        let left = pts.iter().min_by_key(|p| (p.0, p.1)).unwrap();
        let right = pts.iter().min_by_key(|p| (-p.0, p.1)).unwrap();
        assert_eq!(e.top, Pixel::from(*top));
        assert_eq!(e.bottom, Pixel::from(*bottom));
        assert_eq!(e.left, Pixel::from(*left));
        assert_eq!(e.right, Pixel::from(*right));
        assert_eq!(e.right, Pixel::new(7, 7));
    }

    #[test]
    fn window_around_pads_and_widens() {
        let b = BBox::new(10, 10, 19, 29).unwrap();
        let w = CropWindow::around(&b, 0.2, 512, 16).unwrap();
        // x: 10 wide, margin 2 -> 14 wide, widened to 16; y: 20 tall, margin 4
        assert_eq!(w.rect(), BBox::new(7, 6, 22, 33).unwrap());
        assert!(w.rect().contains_box(&b));
    }
}
