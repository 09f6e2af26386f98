use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::augment::resize_bilinear;
use super::{ImageRecord, Source};

/// How labels are read off a dataset directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelRule {
    /// `yes/` and `no/` subdirectories, plus `y*` / `no*` files at the root.
    #[default]
    Auto,
    /// Flat directory, label from the file name prefix only.
    FilePrefix,
    /// Only `yes/` and `no/` subdirectories.
    Subdirectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub rule: LabelRule,
    pub source: Source,
    /// Resize every image to a square of this side while loading, which
    /// bounds memory for large scans. `None` keeps native resolution.
    pub resize_to: Option<usize>,
}

impl LoadOptions {
    pub fn new(source: Source) -> Self {
        Self {
            rule: LabelRule::Auto,
            source,
            resize_to: None,
        }
    }
}

/// A file that was not turned into a record, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipEntry {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOutcome {
    pub records: Vec<ImageRecord>,
    pub skipped: Vec<SkipEntry>,
}

impl LoadOutcome {
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.records.iter().filter(|r| r.label == 1).count();
        [self.records.len() - pos, pos]
    }
}

/// Label from a file name: `no…` is 0, `y…` is 1 (case-insensitive).
fn label_from_name(name: &str) -> Option<u8> {
    let lower = name.to_ascii_lowercase();
    if lower.starts_with("no") {
        Some(0)
    } else if lower.starts_with('y') {
        Some(1)
    } else {
        None
    }
}

fn label_from_dir(name: &str) -> Option<u8> {
    match name.to_ascii_lowercase().as_str() {
        "yes" => Some(1),
        "no" => Some(0),
        _ => None,
    }
}

/// Decodes an image into `[3, H, W]` values in `[0, 1]`. Grayscale is
/// replicated to three channels; alpha is dropped.
pub fn pixels_from_image(img: &DynamicImage) -> Result<Tensor<f32>> {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

/// Writes `[3, H, W]` values in `[0, 1]` as an 8-bit PNG. Images whose
/// channels are identical are stored as grayscale.
pub fn save_png(pixels: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = match *pixels.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::shape("save_png", "rank", format!("expected [3, H, W], got {s:?}"))),
    };
    let plane = h * w;
    let d = pixels.data();
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let gray = (0..plane).all(|i| d[i] == d[plane + i] && d[i] == d[2 * plane + i]);
    let img = if gray {
        DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w as u32, h as u32, d[..plane].iter().map(|&v| byte(v)).collect())
                .expect("buffer sized to the image"),
        )
    } else {
        let mut buf = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            buf.extend((0..3).map(|c| byte(d[c * plane + i])));
        }
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to the image"))
    };
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf, bool)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_dir = entry.file_type().map_err(|e| Error::io(&path, e))?.is_dir();
        out.push((entry.file_name().to_string_lossy().into_owned(), path, is_dir));
    }
    out.sort();
    Ok(out)
}

/// Reads every labeled image under `path`. Records come back sorted by id
/// (`<source>/<relative path>`); files without a recognizable label or that
/// fail to decode are listed in the skip report instead.
pub fn load_directory(path: &Path, options: &LoadOptions) -> Result<LoadOutcome> {
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    // (relative id, file path, label)
    let mut candidates: Vec<(String, PathBuf, u8)> = Vec::new();
    let mut skipped = Vec::new();
    for (name, entry_path, is_dir) in sorted_entries(path)? {
        if is_dir {
            let dir_label = match options.rule {
                LabelRule::FilePrefix => None,
                _ => label_from_dir(&name),
            };
            let Some(label) = dir_label else {
                skipped.push(SkipEntry {
                    path: entry_path,
                    reason: "directory is not a yes/no class folder".into(),
                });
                continue;
            };
            for (file, file_path, nested_dir) in sorted_entries(&entry_path)? {
                if nested_dir {
                    skipped.push(SkipEntry {
                        path: file_path,
                        reason: "nested directory inside a class folder".into(),
                    });
                } else {
                    candidates.push((format!("{name}/{file}"), file_path, label));
                }
            }
        } else {
            let label = match options.rule {
                LabelRule::Subdirectory => None,
                _ => label_from_name(&name),
            };
            match label {
                Some(label) => candidates.push((name, entry_path, label)),
                None => skipped.push(SkipEntry {
                    path: entry_path,
                    reason: "unlabeled: file name starts with neither `y` nor `no`".into(),
                }),
            }
        }
    }

    let mut records = Vec::with_capacity(candidates.len());
    for (rel, file_path, label) in candidates {
        let img = match image::open(&file_path) {
            Ok(img) => img,
            Err(e) => {
                skipped.push(SkipEntry {
                    path: file_path,
                    reason: format!("undecodable: {e}"),
                });
                continue;
            }
        };
        let mut pixels = pixels_from_image(&img)?;
        if let Some(side) = options.resize_to {
            pixels = resize_bilinear(&pixels, side, side)?;
        }
        records.push(ImageRecord {
            id: format!("{}/{rel}", options.source.tag()),
            pixels,
            label,
            source: options.source,
        });
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(LoadOutcome { records, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefixes() {
        assert_eq!(label_from_name("y1.png"), Some(1));
        assert_eq!(label_from_name("Y12.jpg"), Some(1));
        assert_eq!(label_from_name("no1.png"), Some(0));
        assert_eq!(label_from_name("No 3.jpeg"), Some(0));
        assert_eq!(label_from_name("scan.png"), None);
        assert_eq!(label_from_dir("YES"), Some(1));
        assert_eq!(label_from_dir("maybe"), None);
    }

    #[test]
    fn grayscale_replicated() {
        let img = DynamicImage::ImageLuma8(image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap());
        let t = pixels_from_image(&img).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
