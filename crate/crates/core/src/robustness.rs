//! Seeded perturbations for robustness runs: additive Gaussian noise,
//! a zeroed occlusion patch, and a class-biased test set.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::SplitManifest;
use crate::error::{Error, Result};
use crate::rng::{key_of, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Noise,
    Occlusion,
    Bias,
}

/// Footprint of the occlusion patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionShape {
    /// Covers exactly `round(fraction * H * W)` pixels: an `s x s` square
    /// with `s = floor(sqrt(area))`, extended column by column (top-down)
    /// with the remaining pixels.
    #[default]
    ExactArea,
    /// A square of side `round(sqrt(fraction * H * W))`.
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub noise_std: f64,
    pub occlusion_fraction: f64,
    pub occlusion_shape: OcclusionShape,
    pub bias_positive_fraction: f64,
    /// Test-set size for the biased composition; `None` takes the largest
    /// set the pool supports.
    pub bias_test_size: Option<usize>,
    /// Also perturb training inputs, not just evaluation inputs.
    pub apply_in_training: bool,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            kind: PerturbKind::Noise,
            noise_std: 0.1,
            occlusion_fraction: 0.10,
            occlusion_shape: OcclusionShape::ExactArea,
            bias_positive_fraction: 0.60,
            bias_test_size: None,
            apply_in_training: false,
            seed: 7,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        for (name, f) in [
            ("occlusion_fraction", self.occlusion_fraction),
            ("bias_positive_fraction", self.bias_positive_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("{name} must lie strictly inside (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

fn dims3(img: &Tensor<f32>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(op, "rank", format!("expected [C, H, W], got {s:?}"))),
    }
}

/// Adds independent `N(0, std^2)` noise to every value, then clamps to `[0, 1]`.
pub fn add_gaussian_noise(img: &Tensor<f32>, std: f64, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    dims3(img, "add_gaussian_noise")?;
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!("noise std must be finite and >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(img.clone());
    }
    Ok(img.map(|v| (v as f64 + rng.normal(0.0, std)).clamp(0.0, 1.0) as f32))
}

/// Patch footprint as `(height, width, pixels in the last column)`.
fn patch_footprint(area: usize, shape: OcclusionShape, fraction: f64, h: usize, w: usize) -> (usize, usize, usize) {
    match shape {
        OcclusionShape::Square => {
            let side = (fraction * (h * w) as f64).sqrt().round().max(1.0) as usize;
            (side, side, side)
        }
        OcclusionShape::ExactArea => {
            let side = (area as f64).sqrt().floor() as usize;
            let side = if (side + 1) * (side + 1) <= area { side + 1 } else { side };
            let cols = area.div_ceil(side);
            let last = area - (cols - 1) * side;
            (side, cols, last)
        }
    }
}

/// Zeroes one patch at a uniformly random fully-in-bounds position, in every
/// channel. Pixels outside the patch are copied bit-for-bit.
pub fn occlude_with(img: &Tensor<f32>, fraction: f64, shape: OcclusionShape, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(img, "occlude")?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("occlusion fraction must lie inside (0, 1), got {fraction}")));
    }
    let exact = fraction * (h * w) as f64;
    if exact < 1.0 {
        return Err(Error::invalid(format!(
            "occlusion fraction {fraction} covers less than one pixel of a {h}x{w} image"
        )));
    }
    let area = exact.round() as usize;
    let (ph, pw, last) = patch_footprint(area, shape, fraction, h, w);
    if ph > h || pw > w {
        return Err(Error::invalid(format!("occlusion patch {ph}x{pw} does not fit in a {h}x{w} image")));
    }
    let top = rng.index(h - ph + 1);
    let left = rng.index(w - pw + 1);
    let mut out = img.clone();
    let data = out.data_mut();
    for ch in 0..c {
        for col in 0..pw {
            let rows = if col + 1 == pw { last } else { ph };
            for row in 0..rows {
                data[(ch * h + top + row) * w + left + col] = 0.0;
            }
        }
    }
    Ok(out)
}

/// [`occlude_with`] using the exact-area footprint.
pub fn occlude(img: &Tensor<f32>, fraction: f64, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    occlude_with(img, fraction, OcclusionShape::ExactArea, rng)
}

/// Applies the pixel-level part of `spec` (bias changes no pixels).
pub fn apply_perturbation(img: &Tensor<f32>, spec: &PerturbSpec, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    match spec.kind {
        PerturbKind::Noise => add_gaussian_noise(img, spec.noise_std, rng),
        PerturbKind::Occlusion => occlude_with(img, spec.occlusion_fraction, spec.occlusion_shape, rng),
        PerturbKind::Bias => Ok(img.clone()),
    }
}

/// Largest test size `t` whose `round(t * p)` positives and remaining
/// negatives both fit in the pool. Sizes where `t * p` is a whole number are
/// preferred, so the requested mix is met exactly when it can be.
fn largest_biased_size(pos: usize, neg: usize, p: f64) -> usize {
    let fits = |t: usize| {
        let k = (t as f64 * p).round() as usize;
        k <= pos && t - k.min(t) <= neg
    };
    let whole = |t: usize| {
        let x = t as f64 * p;
        (x - x.round()).abs() < 1e-9
    };
    let sizes = || (1..=pos + neg).rev();
    sizes()
        .find(|&t| whole(t) && fits(t))
        .or_else(|| sizes().find(|&t| fits(t)))
        .unwrap_or(0)
}

/// Redraws the test list so that `round(size * positive_fraction)` of it is
/// positive. Train and val lists are untouched; the chosen ids keep their
/// order from the original test list.
pub fn biased_test_composition(
    manifest: &SplitManifest,
    labels: &HashMap<String, u8>,
    positive_fraction: f64,
    test_size: Option<usize>,
    seed: u64,
) -> Result<SplitManifest> {
    if !(positive_fraction > 0.0 && positive_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "positive fraction must lie inside (0, 1), got {positive_fraction}"
        )));
    }
    let label_of = |id: &String| {
        labels
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no label known for test id `{id}`")))
    };
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, id) in manifest.test.iter().enumerate() {
        if label_of(id)? == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    let size = test_size.unwrap_or_else(|| largest_biased_size(pos.len(), neg.len(), positive_fraction));
    let want_pos = (size as f64 * positive_fraction).round() as usize;
    let want_neg = size - want_pos.min(size);
    if size == 0 || want_pos > pos.len() || want_neg > neg.len() {
        return Err(Error::InsufficientSamples(format!(
            "biased test set of {size} needs {want_pos} positive / {want_neg} negative, pool has {} / {}",
            pos.len(),
            neg.len()
        )));
    }
    let base = SeededRng::new(seed);
    base.derive(key_of("bias/positive")).shuffle(&mut pos);
    base.derive(key_of("bias/negative")).shuffle(&mut neg);
    let mut keep: Vec<usize> = pos[..want_pos].iter().chain(&neg[..want_neg]).copied().collect();
    keep.sort_unstable();
    let mut out = manifest.clone();
    out.test = keep.into_iter().map(|i| manifest.test[i].clone()).collect();
    let mut test_counts: HashMap<String, usize> = HashMap::new();
    for id in &out.test {
        let source = id.split('/').next().unwrap_or_default().to_string();
        *test_counts.entry(source).or_default() += 1;
    }
    for (source, counts) in out.per_source.iter_mut() {
        counts[2] = test_counts.get(source).copied().unwrap_or(0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprints() {
        assert_eq!(patch_footprint(410, OcclusionShape::ExactArea, 0.1, 64, 64), (20, 21, 10));
        assert_eq!(patch_footprint(400, OcclusionShape::ExactArea, 0.0, 64, 64), (20, 20, 20));
        assert_eq!(patch_footprint(1, OcclusionShape::ExactArea, 0.0, 5, 5), (1, 1, 1));
        assert_eq!(patch_footprint(410, OcclusionShape::Square, 0.1, 64, 64), (20, 20, 20));
    }

    #[test]
    fn largest_size() {
        assert_eq!(largest_biased_size(500, 500, 0.6), 830);
        assert_eq!(largest_biased_size(3, 3, 0.6), 5);
        assert_eq!(largest_biased_size(150, 150, 0.5), 300);
    }

    #[test]
    fn spec_validation() {
        assert!(PerturbSpec::default().validate().is_ok());
        let bad = PerturbSpec {
            occlusion_fraction: 1.0,
            ..PerturbSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oversized_patch_rejected() {
        let img = Tensor::full(vec![3, 2, 2], 1.0f32).unwrap();
        let mut rng = SeededRng::new(0);
        assert!(occlude(&img, 0.1, &mut rng).is_err());
    }
}
