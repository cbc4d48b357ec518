//! Weak and strong stochastic augmentations.
//!
//! Weak: random shift with zero fill plus an optional horizontal flip for
//! images; small Gaussian noise for plain feature vectors. Strong: a few
//! distinct ops drawn from a pool, each with a random magnitude, applied in
//! the drawn order. Image outputs are clamped to `[0, 1]`.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};
use crate::model::InputShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakConfig {
    pub max_shift_px: usize,
    pub hflip: bool,
    /// Noise used instead of flip-and-shift on vector inputs.
    pub vector_noise_std: f64,
}

impl Default for WeakConfig {
    fn default() -> Self {
        Self { max_shift_px: 2, hflip: true, vector_noise_std: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrongOp {
    Identity,
    Shift,
    CropResize,
    Rotate,
    Invert,
    Noise,
    Cutout,
    Dropout,
    Scale,
}

impl StrongOp {
    pub fn applies_to(self, shape: &InputShape) -> bool {
        use StrongOp::*;
        match shape {
            InputShape::Image { .. } => matches!(self, Identity | Shift | CropResize | Rotate | Invert | Noise | Cutout),
            InputShape::Vector { .. } => matches!(self, Identity | Noise | Dropout | Scale),
        }
    }
}

/// Closed magnitude intervals `[lo, hi]` per op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Magnitudes {
    pub shift_px: [f64; 2],
    pub crop_scale: [f64; 2],
    pub rotate_deg: [f64; 2],
    pub image_noise_std: [f64; 2],
    pub cutout_frac: [f64; 2],
    pub vector_noise_std: [f64; 2],
    pub dropout_p: [f64; 2],
    pub scale: [f64; 2],
}

impl Default for Magnitudes {
    fn default() -> Self {
        Self {
            shift_px: [1.0, 4.0],
            crop_scale: [0.6, 1.0],
            rotate_deg: [-30.0, 30.0],
            image_noise_std: [0.05, 0.2],
            cutout_frac: [0.2, 0.5],
            vector_noise_std: [0.2, 0.2],
            dropout_p: [0.05, 0.15],
            scale: [0.8, 1.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrongConfig {
    pub ops_per_sample: usize,
    pub op_pool: Vec<StrongOp>,
    pub magnitudes: Magnitudes,
}

impl Default for StrongConfig {
    fn default() -> Self {
        use StrongOp::*;
        Self {
            ops_per_sample: 2,
            op_pool: vec![Shift, CropResize, Rotate, Invert, Noise, Cutout, Dropout, Scale],
            magnitudes: Magnitudes::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak: WeakConfig,
    pub strong: StrongConfig,
}

impl AugmentConfig {
    pub fn validate(&self, shape: &InputShape) -> Result<()> {
        if self.strong.ops_per_sample == 0 {
            return Err(SsflError::invalid("strong augmentation needs at least one op per sample"));
        }
        if !self.strong.op_pool.iter().any(|op| op.applies_to(shape)) {
            return Err(SsflError::invalid("strong op pool has no op applicable to this input"));
        }
        let m = &self.strong.magnitudes;
        for (name, [lo, hi]) in [
            ("shift_px", m.shift_px),
            ("crop_scale", m.crop_scale),
            ("rotate_deg", m.rotate_deg),
            ("image_noise_std", m.image_noise_std),
            ("cutout_frac", m.cutout_frac),
            ("vector_noise_std", m.vector_noise_std),
            ("dropout_p", m.dropout_p),
            ("scale", m.scale),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SsflError::invalid(format!("magnitude range {name} must satisfy lo <= hi")));
            }
        }
        if !(self.weak.vector_noise_std >= 0.0) {
            return Err(SsflError::invalid("weak noise must be non-negative"));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn image_dims(shape: &InputShape) -> Option<(usize, usize, usize)> {
    match *shape {
        InputShape::Image { channels, height, width } => Some((channels, height, width)),
        InputShape::Vector { .. } => None,
    }
}

pub fn weak_augment(x: &[f64], shape: &InputShape, cfg: &WeakConfig, rng: &mut impl Rng) -> Vec<f64> {
    match image_dims(shape) {
        Some(dims) => {
            let max = cfg.max_shift_px as i64;
            let (dy, dx) = if max > 0 { (rng.random_range(-max..=max), rng.random_range(-max..=max)) } else { (0, 0) };
            let flip = cfg.hflip && rng.random_bool(0.5);
            let mut out = if flip { hflip(x, dims) } else { x.to_vec() };
            if dy != 0 || dx != 0 {
                out = shift_image(&out, dims, dy, dx);
            }
            out
        }
        None => {
            if cfg.vector_noise_std == 0.0 {
                return x.to_vec();
            }
            x.iter().map(|v| v + cfg.vector_noise_std * gaussian(rng)).collect()
        }
    }
}

pub fn strong_augment(x: &[f64], shape: &InputShape, cfg: &StrongConfig, rng: &mut impl Rng) -> Vec<f64> {
    let pool: Vec<StrongOp> = cfg.op_pool.iter().copied().filter(|op| op.applies_to(shape)).collect();
    if pool.is_empty() {
        return x.to_vec();
    }
    let k = cfg.ops_per_sample.min(pool.len());
    let picks = index::sample(rng, pool.len(), k).into_vec();
    let mut out = x.to_vec();
    for i in picks {
        out = apply_op(pool[i], &out, shape, &cfg.magnitudes, rng);
    }
    out
}

fn apply_op(op: StrongOp, x: &[f64], shape: &InputShape, m: &Magnitudes, rng: &mut impl Rng) -> Vec<f64> {
    let clamp = |v: Vec<f64>| v.into_iter().map(|p| p.clamp(0.0, 1.0)).collect::<Vec<f64>>();
    match (op, image_dims(shape)) {
        (StrongOp::Identity, _) => x.to_vec(),
        (StrongOp::Shift, Some(dims)) => {
            let mag = draw(rng, m.shift_px).round() as i64;
            let sy = if rng.random_bool(0.5) { mag } else { -mag };
            let sx = if rng.random_bool(0.5) { mag } else { -mag };
            shift_image(x, dims, sy, sx)
        }
        (StrongOp::CropResize, Some(dims)) => {
            let scale = draw(rng, m.crop_scale);
            crop_resize(x, dims, scale, rng)
        }
        (StrongOp::Rotate, Some(dims)) => rotate(x, dims, draw(rng, m.rotate_deg).to_radians()),
        (StrongOp::Invert, Some(_)) => x.iter().map(|v| 1.0 - v).collect(),
        (StrongOp::Noise, Some(_)) => {
            let sd = draw(rng, m.image_noise_std);
            clamp(x.iter().map(|v| v + sd * gaussian(rng)).collect())
        }
        (StrongOp::Cutout, Some(dims)) => {
            let frac = draw(rng, m.cutout_frac);
            cutout(x, dims, frac, rng)
        }
        (StrongOp::Noise, None) => {
            let sd = draw(rng, m.vector_noise_std);
            x.iter().map(|v| v + sd * gaussian(rng)).collect()
        }
        (StrongOp::Dropout, None) => {
            let p = draw(rng, m.dropout_p).clamp(0.0, 1.0);
            x.iter().map(|&v| if rng.random_bool(p) { 0.0 } else { v }).collect()
        }
        (StrongOp::Scale, None) => {
            let a = draw(rng, m.scale);
            let b = rng.random_range(-0.1..=0.1);
            x.iter().map(|v| a * v + b).collect()
        }
        _ => x.to_vec(),
    }
}

fn hflip(x: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for plane in 0..c * h {
        for col in 0..w {
            out[plane * w + col] = x[plane * w + (w - 1 - col)];
        }
    }
    out
}

/// Moves content by `(dy, dx)` pixels; vacated pixels become zero.
pub fn shift_image(x: &[f64], (c, h, w): (usize, usize, usize), dy: i64, dx: i64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for y in 0..h as i64 {
            let sy = y - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for xx in 0..w as i64 {
                let sx = xx - dx;
                if sx >= 0 && sx < w as i64 {
                    out[(ch * h + y as usize) * w + xx as usize] = x[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}

fn crop_resize(x: &[f64], (c, h, w): (usize, usize, usize), scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    let ch_ = ((h as f64 * scale).round() as usize).clamp(1, h);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch_);
    let left = rng.random_range(0..=w - cw);
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = top + y * ch_ / h;
            for xx in 0..w {
                let sx = left + xx * cw / w;
                out[(ch * h + y) * w + xx] = x[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Nearest-neighbour rotation about the image centre with zero fill.
fn rotate(x: &[f64], (c, h, w): (usize, usize, usize), angle: f64) -> Vec<f64> {
    let (sin, cos) = angle.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let (ry, rx) = (y as f64 - cy, xx as f64 - cx);
            let sy = (cos * ry - sin * rx + cy).round();
            let sx = (sin * ry + cos * rx + cx).round();
            if sy < 0.0 || sx < 0.0 || sy >= h as f64 || sx >= w as f64 {
                continue;
            }
            for ch in 0..c {
                out[(ch * h + y) * w + xx] = x[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

fn cutout(x: &[f64], (c, h, w): (usize, usize, usize), frac: f64, rng: &mut impl Rng) -> Vec<f64> {
    let side = ((h.min(w) as f64 * frac).round() as usize).max(1);
    let cy = rng.random_range(0..h) as i64;
    let cx = rng.random_range(0..w) as i64;
    let half = (side / 2) as i64;
    let mut out = x.to_vec();
    for ch in 0..c {
        for y in (cy - half).max(0)..(cy - half + side as i64).min(h as i64) {
            for xx in (cx - half).max(0)..(cx - half + side as i64).min(w as i64) {
                out[(ch * h + y as usize) * w + xx as usize] = 0.0;
            }
        }
    }
    out
}
