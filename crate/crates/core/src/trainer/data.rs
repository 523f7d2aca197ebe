use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Labelled images stored as `[n, channels, res, res]` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub resolution: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.resolution * self.resolution
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.image_len()..(i + 1) * self.image_len()]
    }

    /// Copies the selected samples into one contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Gaussian clusters around one random prototype image per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub classes: usize,
    pub train: usize,
    pub eval: usize,
    pub resolution: usize,
    #[serde(default = "three")]
    pub channels: usize,
    /// Prototype scale relative to the unit per-pixel noise.
    pub margin: f64,
    pub seed: u64,
}

fn three() -> usize {
    3
}

/// Source of a toy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Synthetic(SyntheticParams),
    ImageFolder { train: std::path::PathBuf, eval: std::path::PathBuf },
}

/// Balanced train and eval splits drawn from the same class prototypes.
///
/// Each pixel of a sample is `margin * prototype + noise`, with prototype
/// pixels and noise both standard normal, so a larger margin separates the
/// classes further.
pub fn make_synthetic(p: &SyntheticParams) -> Result<(Dataset, Dataset), TrainError> {
    if p.classes < 2 {
        return Err(TrainError::Data(format!("{} class(es); at least two are needed", p.classes)));
    }
    if p.train < p.classes || p.eval < p.classes {
        return Err(TrainError::Data(format!(
            "{}/{} samples cannot cover {} classes",
            p.train, p.eval, p.classes
        )));
    }
    if p.resolution == 0 || p.channels == 0 || !p.margin.is_finite() {
        return Err(TrainError::Data("degenerate synthetic geometry".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let len = p.channels * p.resolution * p.resolution;
    let prototypes: Vec<Vec<f64>> =
        (0..p.classes).map(|_| (0..len).map(|_| normal.sample(&mut rng)).collect()).collect();
    let mut split = |n: usize| {
        let mut labels: Vec<usize> = (0..n).map(|i| i % p.classes).collect();
        labels.shuffle(&mut rng);
        let mut images = Vec::with_capacity(n * len);
        for &l in &labels {
            images.extend(prototypes[l].iter().map(|&v| (p.margin * v + normal.sample(&mut rng)) as f32));
        }
        Dataset { images, labels, channels: p.channels, resolution: p.resolution, classes: p.classes }
    };
    let train = split(p.train);
    let eval = split(p.eval);
    Ok((train, eval))
}

/// Reads `root/<class>/<image>` trees; classes are sorted directory names.
/// Images must already be `resolution` pixels square; pixels are scaled to
/// `[0, 1]` RGB.
#[cfg(feature = "image-folder")]
pub fn load_image_folder(root: &std::path::Path, resolution: usize) -> Result<Dataset, TrainError> {
    let read_dir = |p: &std::path::Path| {
        let mut entries: Vec<std::path::PathBuf> = std::fs::read_dir(p)
            .map_err(|e| TrainError::Data(format!("{}: {e}", p.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        Ok::<_, TrainError>(entries)
    };
    let classes: Vec<std::path::PathBuf> = read_dir(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.len() < 2 {
        return Err(TrainError::Data(format!(
            "{}: found {} class folder(s); at least two are needed",
            root.display(),
            classes.len()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        for file in read_dir(dir)?.into_iter().filter(|p| p.is_file()) {
            let img = image::open(&file)
                .map_err(|e| TrainError::Data(format!("{}: {e}", file.display())))?
                .to_rgb8();
            if img.width() as usize != resolution || img.height() as usize != resolution {
                return Err(TrainError::Data(format!(
                    "{}: {}x{} pixels, expected {resolution}x{resolution}",
                    file.display(),
                    img.width(),
                    img.height()
                )));
            }
            for c in 0..3 {
                for y in 0..resolution {
                    for x in 0..resolution {
                        images.push(img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0);
                    }
                }
            }
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(TrainError::Data(format!("{}: no images", root.display())));
    }
    Ok(Dataset { images, labels, channels: 3, resolution, classes: classes.len() })
}
