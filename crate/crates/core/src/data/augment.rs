use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::ImageRecord;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Output side in pixels. Not read from config files: the training
    /// image size is the single source for it.
    #[serde(skip)]
    pub target_size: usize,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub max_rotation_deg: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift bound as a fraction of a full turn.
    pub hue: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_size: 62,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            max_rotation_deg: 20.0,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl AugmentConfig {
    /// Resize and normalization only.
    pub fn identity(target_size: usize) -> Self {
        Self {
            target_size,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            max_rotation_deg: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::invalid("augment.target_size must be at least 1"));
        }
        for (name, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("augment.{name} must be in [0, 1], got {p}")));
            }
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::invalid(format!(
                "augment.max_rotation_deg must be in [0, 180], got {}",
                self.max_rotation_deg
            )));
        }
        for (name, s) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!("augment.{name} must be in [0, 1], got {s}")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::invalid(format!("augment.hue must be in [0, 0.5], got {}", self.hue)));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("augment.std entries must be positive"));
        }
        Ok(())
    }
}

fn dims3(t: &Tensor<f32>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(op, "rank", format!("expected [C, H, W], got {s:?}"))),
    }
}

/// Bilinear resize with half-pixel centers and edge clamping. Same-size
/// input is returned unchanged.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(img, "resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let axis = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::from_vec(vec![c, out_h, out_w], out)
}

pub fn hflip(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, _, w) = dims3(img, "hflip")?;
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    Ok(out)
}

pub fn vflip(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(img, "vflip")?;
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in (0..h).rev() {
            let off = (ch * h + y) * w;
            out.extend_from_slice(&src[off..off + w]);
        }
    }
    Tensor::from_vec(vec![c, h, w], out)
}

/// Rotates counter-clockwise by `degrees` about the image center, bilinear
/// sampling, zero outside the source.
pub fn rotate(img: &Tensor<f32>, degrees: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(img, "rotate")?;
    if degrees == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = vec![0f32; src.len()];
    let fetch = |plane: &[f32], x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse map: where in the source does this output pixel come from
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let top = fetch(plane, x0, y0) * (1.0 - fx) + fetch(plane, x0 + 1, y0) * fx;
                let bottom = fetch(plane, x0, y0 + 1) * (1.0 - fx) + fetch(plane, x0 + 1, y0 + 1) * fx;
                out[(ch * h + y) * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], out)
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation, then hue, each sampled only when its
/// strength is non-zero; values are clamped to `[0, 1]` after every step.
fn color_jitter(img: &mut Tensor<f32>, config: &AugmentConfig, rng: &mut SeededRng) {
    let plane = img.len() / 3;
    let clamp = |d: &mut [f32]| d.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let factor = |rng: &mut SeededRng, s: f64| rng.uniform((1.0 - s).max(0.0), 1.0 + s) as f32;
    let data = img.data_mut();
    if config.brightness > 0.0 {
        let b = factor(rng, config.brightness);
        data.iter_mut().for_each(|v| *v *= b);
        clamp(data);
    }
    if config.contrast > 0.0 {
        let k = factor(rng, config.contrast);
        let mean = (0..plane)
            .map(|i| gray(data[i], data[plane + i], data[2 * plane + i]) as f64)
            .sum::<f64>()
            / plane as f64;
        let m = mean as f32;
        data.iter_mut().for_each(|v| *v = (*v - m) * k + m);
        clamp(data);
    }
    if config.saturation > 0.0 {
        let k = factor(rng, config.saturation);
        for i in 0..plane {
            let g = gray(data[i], data[plane + i], data[2 * plane + i]);
            for ch in 0..3 {
                let v = &mut data[ch * plane + i];
                *v = ((*v - g) * k + g).clamp(0.0, 1.0);
            }
        }
    }
    if config.hue > 0.0 {
        let shift = rng.uniform(-config.hue, config.hue) as f32;
        for i in 0..plane {
            let (h, s, v) = rgb_to_hsv(data[i], data[plane + i], data[2 * plane + i]);
            let (r, g, b) = hsv_to_rgb(h + shift, s, v);
            data[i] = r.clamp(0.0, 1.0);
            data[plane + i] = g.clamp(0.0, 1.0);
            data[2 * plane + i] = b.clamp(0.0, 1.0);
        }
    }
}

/// Per-channel `(x - mean) / std`.
pub fn normalize(img: &Tensor<f32>, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(img, "normalize")?;
    if c != 3 {
        return Err(Error::shape("normalize", "channels", format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = img.clone();
    for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let (m, inv) = (mean[ch] as f32, (1.0 / std[ch]) as f32);
        chunk.iter_mut().for_each(|v| *v = (*v - m) * inv);
    }
    Ok(out)
}

/// Geometric and color augmentation in `[0, 1]` space, without normalization.
pub fn augment_pixels(pixels: &Tensor<f32>, config: &AugmentConfig, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    let s = config.target_size;
    let mut img = resize_bilinear(pixels, s, s)?;
    if rng.coin(config.hflip_prob) {
        img = hflip(&img)?;
    }
    if rng.coin(config.vflip_prob) {
        img = vflip(&img)?;
    }
    if config.max_rotation_deg > 0.0 {
        let angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
        img = rotate(&img, angle)?;
    }
    color_jitter(&mut img, config, rng);
    Ok(img)
}

/// Training transform: resize, random flips, rotation, color jitter, normalize.
pub fn augment(record: &ImageRecord, config: &AugmentConfig, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    let img = augment_pixels(&record.pixels, config, rng)?;
    normalize(&img, &config.mean, &config.std)
}

/// Evaluation transform: resize and normalize only.
pub fn eval_transform(record: &ImageRecord, config: &AugmentConfig) -> Result<Tensor<f32>> {
    let s = config.target_size;
    let img = resize_bilinear(&record.pixels, s, s)?;
    normalize(&img, &config.mean, &config.std)
}
