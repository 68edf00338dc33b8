//! Labeled image datasets and a seeded synthetic generator.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images of shape `[channels, h, w]` with values in `[0, 1]` and their
/// labels, stored as one flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    pixels: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        sample_shape: Vec<usize>,
        pixels: Vec<f64>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if sample_shape.len() != 3 || sample_shape.contains(&0) {
            return Err(Error::dim(
                "dataset sample shape",
                "[channels, height, width]",
                format!("{sample_shape:?}"),
            ));
        }
        let size: usize = sample_shape.iter().product();
        if pixels.len() != labels.len() * size {
            return Err(Error::dim(
                "dataset pixels",
                format!("{} values for {} samples", labels.len() * size, labels.len()),
                format!("{}", pixels.len()),
            ));
        }
        if classes == 0 {
            return Err(Error::Input("dataset needs at least one class".into()));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Input(format!("label {l} of sample {i} is not below {classes}")));
        }
        Ok(Dataset {
            sample_shape,
            pixels,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// All pixels, sample-major.
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// `[channels, h, w]` of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample(&self, index: usize) -> Tensor {
        let size: usize = self.sample_shape.iter().product();
        let data = self.pixels[index * size..(index + 1) * size].to_vec();
        Tensor::new(self.sample_shape.clone(), data).expect("shape from dataset")
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    /// Rescales every channel to zero mean and unit variance (statistics from
    /// this dataset). Returns the per-channel `(mean, std)` used.
    pub fn standardize(&mut self) -> Vec<(f64, f64)> {
        let stats = self.channel_stats();
        self.apply_standardization(&stats);
        stats
    }

    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let (count, c) = (self.len(), self.sample_shape[0]);
        let plane = self.sample_shape[1] * self.sample_shape[2];
        (0..c)
            .map(|ch| {
                let vals = (0..count).flat_map(|n| {
                    let start = (n * c + ch) * plane;
                    self.pixels[start..start + plane].iter().copied()
                });
                let (mut sum, mut sq, mut k) = (0.0, 0.0, 0usize);
                for v in vals {
                    sum += v;
                    sq += v * v;
                    k += 1;
                }
                let mean = sum / k as f64;
                let var = (sq / k as f64 - mean * mean).max(0.0);
                let std = libm::sqrt(var);
                (mean, if std > 0.0 { std } else { 1.0 })
            })
            .collect()
    }

    pub fn apply_standardization(&mut self, stats: &[(f64, f64)]) {
        let c = self.sample_shape[0];
        let plane = self.sample_shape[1] * self.sample_shape[2];
        for (i, v) in self.pixels.iter_mut().enumerate() {
            let (mean, std) = stats[(i / plane) % c];
            *v = (*v - mean) / std;
        }
    }
}

/// Mirrors a `[c, h, w]` image left to right.
pub fn hflip(image: &Tensor) -> Tensor {
    let s = image.shape();
    let w = s[s.len() - 1];
    let mut out = image.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

/// Parameters of [`synth_blobs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Synthetic classification data: each class has a fixed random template in
/// `[0, 1]`, and every sample is its class template plus Gaussian pixel noise,
/// clipped to `[0, 1]`. Train and test sets hold `per_class` samples per
/// class each, drawn independently from the same seeded stream.
pub fn synth_blobs(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    let BlobSpec {
        classes,
        per_class,
        channels,
        height,
        width,
        noise_sigma,
        seed,
    } = *spec;
    if classes == 0 || per_class == 0 || channels == 0 || height == 0 || width == 0 {
        return Err(Error::Input(format!("synth_blobs needs positive counts, got {spec:?}")));
    }
    let noise =
        Normal::new(0.0, noise_sigma).map_err(|_| Error::Input(format!("invalid noise sigma {noise_sigma}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = channels * height * width;
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..size).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut draw = |split: Split| -> Result<Dataset> {
        let mut data = Vec::with_capacity(classes * per_class * size);
        let mut labels = Vec::with_capacity(classes * per_class);
        for (class, template) in templates.iter().enumerate() {
            for _ in 0..per_class {
                for &t in template {
                    let v = if noise_sigma > 0.0 {
                        t + noise.sample(&mut rng)
                    } else {
                        t
                    };
                    data.push(v.clamp(0.0, 1.0));
                }
                labels.push(class);
            }
        }
        Dataset::new(alloc::vec![channels, height, width], data, labels, classes, split)
    };
    let train = draw(Split::Train)?;
    let test = draw(Split::Test)?;
    Ok((train, test))
}
