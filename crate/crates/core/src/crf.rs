//! Binary dense-CRF refinement by synchronous mean-field updates.
//!
//! Unary energies are `-ln p` and `-ln (1 - p)` of the input mask (clamped to
//! `[1e-6, 1 - 1e-6]`). The pairwise kernel between pixels `i != j` is
//!
//! ```text
//! k(i, j) = w_spatial   · exp(-|Δpos|² / 2θγ²)
//!         + w_bilateral · exp(-|Δpos|² / 2θα² - |ΔI|² / 2θβ²)
//! ```
//!
//! with a Potts compatibility `compat · [l ≠ l']`. Images up to 128x128 use
//! exact dense sums; larger ones truncate each Gaussian at a radius of 3θ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{BBox, ProbMask};
use crate::{Error, Result};

/// Probability clamp applied before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-6;

/// Largest side length refined with exact dense sums.
pub const DENSE_LIMIT: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub iterations: usize,
    pub w_spatial: f64,
    pub w_bilateral: f64,
    /// Spatial stddev of the smoothness kernel, pixels.
    pub theta_gamma: f64,
    /// Spatial stddev of the appearance kernel, pixels.
    pub theta_alpha: f64,
    /// Colour stddev of the appearance kernel, intensity units.
    pub theta_beta: f64,
    pub compat: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            iterations: 5,
            w_spatial: 3.0,
            w_bilateral: 5.0,
            theta_gamma: 3.0,
            theta_alpha: 30.0,
            theta_beta: 13.0,
            compat: 1.0,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.theta_gamma, self.theta_alpha, self.theta_beta];
        if positive.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("CRF stddevs must be positive".into()));
        }
        let weights = [self.w_spatial, self.w_bilateral, self.compat];
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(
                "CRF weights must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Appearance image guiding the bilateral kernel; 1 or 3 channels in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    integral: bool,
}

impl GuideImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadDimensions(format!("{width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::BadDimensions(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::size_mismatch(width * height * channels, data.len()));
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=255.0).contains(*v))
        {
            return Err(Error::InvalidParameter(format!(
                "image value {value} at {index} outside [0, 255]"
            )));
        }
        let integral = data.iter().all(|v| v.fract() == 0.0);
        Ok(GuideImage {
            width,
            height,
            channels,
            data,
            integral,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, channels, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Pixel at possibly out-of-range coordinates, replicating the border.
    pub fn pixel_clamped(&self, x: i32, y: i32) -> &[f64] {
        let x = x.clamp(0, self.width as i32 - 1) as usize;
        let y = y.clamp(0, self.height as i32 - 1) as usize;
        self.pixel(x, y)
    }

    /// Sub-image covering `rect`, replicating the border outside the image.
    pub fn crop(&self, rect: &BBox) -> GuideImage {
        let mut data = Vec::with_capacity((rect.width() * rect.height()) as usize * self.channels);
        for y in rect.y_min..=rect.y_max {
            for x in rect.x_min..=rect.x_max {
                data.extend_from_slice(self.pixel_clamped(x, y));
            }
        }
        GuideImage {
            width: rect.width() as usize,
            height: rect.height() as usize,
            channels: self.channels,
            data,
            integral: self.integral,
        }
    }
}

/// Per-pixel label marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
}

struct Tables {
    spatial: Vec<f64>,
    bilateral: Vec<f64>,
    colour: Option<Vec<f64>>,
    stride: usize,
}

/// A mean-field problem: unaries from one mask, pairwise terms from an image.
pub struct MeanField<'a> {
    image: &'a GuideImage,
    params: CrfParams,
    clamped: Vec<f64>,
    unary_fg: Vec<f64>,
    unary_bg: Vec<f64>,
    tables: Tables,
    radius: Option<(i64, i64)>,
}

impl<'a> MeanField<'a> {
    pub fn new(unary: &ProbMask, image: &'a GuideImage, params: CrfParams) -> Result<Self> {
        params.validate()?;
        unary.same_shape(image.width(), image.height())?;
        let clamped: Vec<f64> = unary
            .values()
            .iter()
            .map(|&p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect();
        let unary_fg = clamped.iter().map(|&p| -p.ln()).collect();
        let unary_bg = clamped.iter().map(|&p| -(1.0 - p).ln()).collect();

        let (w, h) = (image.width(), image.height());
        let dense = w <= DENSE_LIMIT && h <= DENSE_LIMIT;
        let radius = (!dense).then(|| {
            (
                (3.0 * params.theta_gamma).ceil() as i64,
                (3.0 * params.theta_alpha).ceil() as i64,
            )
        });
        let stride = w.max(h);
        let gauss = |d2: f64, theta: f64| (-d2 / (2.0 * theta * theta)).exp();
        let mut spatial = vec![0.0; stride * stride];
        let mut bilateral = vec![0.0; stride * stride];
        for dy in 0..stride {
            for dx in 0..stride {
                let d2 = (dx * dx + dy * dy) as f64;
                spatial[dy * stride + dx] = gauss(d2, params.theta_gamma);
                bilateral[dy * stride + dx] = gauss(d2, params.theta_alpha);
            }
        }
        let colour = image
            .integral
            .then(|| (0..256).map(|d| gauss(f64::from(d * d), params.theta_beta)).collect());
        Ok(MeanField {
            image,
            params,
            clamped,
            unary_fg,
            unary_bg,
            tables: Tables {
                spatial,
                bilateral,
                colour,
                stride,
            },
            radius,
        })
    }

    /// Clamped input probabilities as marginals.
    pub fn initial(&self) -> Marginals {
        Marginals {
            fg: self.clamped.clone(),
            bg: self.clamped.iter().map(|p| 1.0 - p).collect(),
        }
    }

    fn colour_factor(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.tables.colour {
            Some(table) => a
                .iter()
                .zip(b)
                .map(|(x, y)| table[(x - y).abs() as usize])
                .product(),
            None => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let t = self.params.theta_beta;
                (-d2 / (2.0 * t * t)).exp()
            }
        }
    }

    fn kernel(&self, xi: usize, yi: usize, xj: usize, yj: usize) -> f64 {
        let dx = xi.abs_diff(xj);
        let dy = yi.abs_diff(yj);
        let cell = dy * self.tables.stride + dx;
        let (in_spatial, in_bilateral) = match self.radius {
            None => (true, true),
            Some((rg, ra)) => {
                let (dx, dy) = (dx as i64, dy as i64);
                (dx <= rg && dy <= rg, dx <= ra && dy <= ra)
            }
        };
        let mut k = 0.0;
        if in_spatial {
            k += self.params.w_spatial * self.tables.spatial[cell];
        }
        if in_bilateral && self.params.w_bilateral != 0.0 {
            let c = self.colour_factor(self.image.pixel(xi, yi), self.image.pixel(xj, yj));
            k += self.params.w_bilateral * self.tables.bilateral[cell] * c;
        }
        k
    }

    /// One synchronous update of every pixel from the previous marginals.
    pub fn step(&self, q: &Marginals) -> Marginals {
        let (w, h) = (self.image.width(), self.image.height());
        let reach = self.radius.map(|(rg, ra)| rg.max(ra));
        let compat = self.params.compat;
        let updated: Vec<(f64, f64)> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (xi, yi) = (i % w, i / w);
                let (x_range, y_range) = match reach {
                    None => (0..w, 0..h),
                    Some(r) => (
                        xi.saturating_sub(r as usize)..(xi + r as usize + 1).min(w),
                        yi.saturating_sub(r as usize)..(yi + r as usize + 1).min(h),
                    ),
                };
                let (mut to_fg, mut to_bg) = (0.0, 0.0);
                for yj in y_range {
                    for xj in x_range.clone() {
                        let j = yj * w + xj;
                        if j == i {
                            continue;
                        }
                        let k = self.kernel(xi, yi, xj, yj);
                        to_fg += k * q.fg[j];
                        to_bg += k * q.bg[j];
                    }
                }
                // Potts: a label pays for neighbours holding the other label
                let e_fg = self.unary_fg[i] + compat * to_bg;
                let e_bg = self.unary_bg[i] + compat * to_fg;
                let fg = 1.0 / (1.0 + (e_fg - e_bg).exp());
                let bg = 1.0 / (1.0 + (e_bg - e_fg).exp());
                (fg, bg)
            })
            .collect();
        let (fg, bg) = updated.into_iter().unzip();
        Marginals { fg, bg }
    }

    pub fn run(&self) -> Marginals {
        let mut q = self.initial();
        for _ in 0..self.params.iterations {
            q = self.step(&q);
        }
        q
    }
}

/// Refined foreground marginal of `mask` under a dense CRF guided by `image`.
pub fn meanfield_refine(mask: &ProbMask, image: &GuideImage, params: &CrfParams) -> Result<ProbMask> {
    let field = MeanField::new(mask, image, *params)?;
    let q = field.run();
    ProbMask::new(mask.width(), mask.height(), q.fg)
}
