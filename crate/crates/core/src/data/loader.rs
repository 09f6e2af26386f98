use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::Batch;
use crate::rng::{key_of, SeededRng};
use crate::robustness::{apply_perturbation, PerturbSpec};
use crate::tensor::Tensor;

use super::augment::{augment_pixels, normalize, resize_bilinear, AugmentConfig};
use super::ImageRecord;

/// How a record becomes a network input: random augmentation (training) or
/// resize only (evaluation), an optional perturbation in `[0, 1]` space,
/// then normalization.
#[derive(Debug, Clone, Copy)]
pub struct SampleTransform<'a> {
    pub augment: &'a AugmentConfig,
    pub train: bool,
    pub perturb: Option<&'a PerturbSpec>,
}

impl<'a> SampleTransform<'a> {
    pub fn train(augment: &'a AugmentConfig) -> Self {
        Self {
            augment,
            train: true,
            perturb: None,
        }
    }

    pub fn eval(augment: &'a AugmentConfig) -> Self {
        Self {
            augment,
            train: false,
            perturb: None,
        }
    }

    pub fn with_perturbation(mut self, spec: Option<&'a PerturbSpec>) -> Self {
        self.perturb = spec;
        self
    }

    /// The sample's generators depend only on (seed, epoch, record id).
    fn prepare(&self, record: &ImageRecord, seed: u64, epoch: u64) -> Result<Tensor<f32>> {
        let s = self.augment.target_size;
        let key = key_of(&record.id);
        let pixels = if self.train {
            let mut rng = SeededRng::new(seed).derive(epoch).derive(key);
            augment_pixels(&record.pixels, self.augment, &mut rng)?
        } else {
            resize_bilinear(&record.pixels, s, s)?
        };
        let pixels = match self.perturb {
            Some(spec) => {
                // evaluation perturbations are a pure function of (image, spec);
                // training-time ones also vary by epoch
                let base = SeededRng::new(spec.seed);
                let base = if self.train { base.derive(epoch) } else { base };
                apply_perturbation(&pixels, spec, &mut base.derive(key))?
            }
            None => pixels,
        };
        normalize(&pixels, &self.augment.mean, &self.augment.std)
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).derive(epoch).derive(key_of("order")).shuffle(&mut order);
    order
}

/// Builds one batch from `records[indices]`. Samples are prepared in
/// parallel and stacked in index order.
pub fn batch_from_indices(
    records: &[ImageRecord],
    indices: &[usize],
    transform: &SampleTransform<'_>,
    seed: u64,
    epoch: u64,
) -> Result<Batch<f32>> {
    if indices.is_empty() {
        return Err(Error::EmptyData("batch with no samples".into()));
    }
    let samples: Vec<Tensor<f32>> = indices
        .par_iter()
        .map(|&i| {
            let record = records
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
            transform.prepare(record, seed, epoch)
        })
        .collect::<Result<_>>()?;
    let s = transform.augment.target_size;
    let mut images = Vec::with_capacity(indices.len() * 3 * s * s);
    for t in &samples {
        images.extend_from_slice(t.data());
    }
    let labels = indices.iter().map(|&i| records[i].label as f32).collect();
    Ok(Batch {
        images: Tensor::from_vec(vec![indices.len(), 3, s, s], images)?,
        labels: Tensor::from_vec(vec![indices.len(), 1], labels)?,
    })
}

/// Lazily yields consecutive batches of `batch_size` over `indices` (the
/// last one may be short).
pub fn epoch_batches<'a>(
    records: &'a [ImageRecord],
    indices: Vec<usize>,
    batch_size: usize,
    transform: SampleTransform<'a>,
    seed: u64,
    epoch: u64,
) -> impl Iterator<Item = Result<Batch<f32>>> + 'a {
    let size = batch_size.max(1);
    let chunks: Vec<Vec<usize>> = indices.chunks(size).map(<[usize]>::to_vec).collect();
    chunks
        .into_iter()
        .map(move |chunk| batch_from_indices(records, &chunk, &transform, seed, epoch))
}
