use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::{ImageRecord, Source};

/// One synthetic scan: a dark, softly textured background, plus (label 1)
/// a single bright ellipse of random position, size, orientation and
/// intensity. Values are quantized to 8 bits so a PNG round trip is exact.
pub fn synth_image(size: usize, label: u8, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    if size < 4 {
        return Err(Error::invalid(format!("synthetic image size must be at least 4, got {size}")));
    }
    let s = size as f64;
    let level = rng.uniform(0.08, 0.22);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.uniform(0.01, 0.03),
                rng.uniform(1.0, 5.0) * std::f64::consts::TAU / s,
                rng.uniform(1.0, 5.0) * std::f64::consts::TAU / s,
                rng.uniform(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    let ellipse = (label == 1).then(|| {
        let a = rng.uniform(0.08, 0.2) * s;
        let b = rng.uniform(0.08, 0.2) * s;
        let margin = a.max(b);
        let cx = rng.uniform(margin, s - margin);
        let cy = rng.uniform(margin, s - margin);
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        let intensity = rng.uniform(0.45, 0.75);
        (cx, cy, a, b, theta, intensity)
    });
    let plane = size * size;
    let mut gray = vec![0f32; plane];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = level;
            for &(amp, kx, ky, phase) in &waves {
                v += amp * (kx * fx + ky * fy + phase).sin();
            }
            v += rng.uniform(-0.02, 0.02);
            if let Some((cx, cy, a, b, theta, intensity)) = ellipse {
                let (sin, cos) = theta.sin_cos();
                let (dx, dy) = (fx - cx, fy - cy);
                let u = (cos * dx + sin * dy) / a;
                let w = (-sin * dx + cos * dy) / b;
                let r = (u * u + w * w).sqrt();
                // soft edge over the outer 15 % of the radius
                let weight = ((1.0 - r) / 0.15).clamp(0.0, 1.0);
                v += intensity * weight;
            }
            gray[y * size + x] = ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32;
        }
    }
    let mut data = Vec::with_capacity(3 * plane);
    for _ in 0..3 {
        data.extend_from_slice(&gray);
    }
    Tensor::from_vec(vec![3, size, size], data)
}

/// `n_per_class` images of each class, ids `synthetic/y0000…` and
/// `synthetic/no0000…`. Each image has its own generator derived from the
/// seed, so the output does not depend on generation order.
pub fn synth_generate(n_per_class: usize, size: usize, seed: u64) -> Result<Vec<ImageRecord>> {
    if n_per_class == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one image per class"));
    }
    let base = SeededRng::new(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in [1u8, 0] {
        for i in 0..n_per_class {
            let mut rng = base.derive(((label as u64) << 32) | i as u64);
            let prefix = if label == 1 { "y" } else { "no" };
            out.push(ImageRecord {
                id: format!("synthetic/{prefix}{i:05}"),
                pixels: synth_image(size, label, &mut rng)?,
                label,
                source: Source::Synthetic,
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_range() {
        let recs = synth_generate(10, 62, 3).unwrap();
        assert_eq!(recs.len(), 20);
        assert_eq!(recs.iter().filter(|r| r.label == 1).count(), 10);
        for r in &recs {
            assert_eq!(r.pixels.shape(), &[3, 62, 62]);
            assert!(r.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(synth_generate(0, 62, 3).is_err());
    }
}
