//! Dataset ingestion, pixel-to-angle normalisation and synthetic data.

pub mod medmnist;
pub mod npy;
pub mod npz;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use medmnist::{load_medmnist, load_npz_splits, MedMnistInfo, MEDMNIST};
pub use npy::{parse_npy, write_npy, NpyArray, NpyData, NpyError};
pub use npz::{parse_npz, write_npz};
pub use synthetic::{synthetic_dataset, SyntheticOptions};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed archive: {0}")]
    Archive(String),
    #[error("member {name}: {source}")]
    Member { name: String, source: NpyError },
    #[error("incomplete dataset: missing {0}")]
    MissingKey(String),
    #[error("dataset shape: {0}")]
    Shape(String),
    #[error("value range: {0}")]
    Range(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

/// Upper end of the angle interval pixels are mapped onto.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngleRange {
    /// `[0, pi]`
    #[default]
    Pi,
    /// `[0, 2 pi]`
    TwoPi,
}

impl AngleRange {
    pub fn scale(self) -> f64 {
        match self {
            AngleRange::Pi => std::f64::consts::PI,
            AngleRange::TwoPi => 2.0 * std::f64::consts::PI,
        }
    }
}

/// Transform already applied to a split's pixel values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PixelTransform {
    /// Values are raw intensities in `[0, 1]`.
    #[default]
    Unit,
    /// Values are `scale * intensity`.
    Angle { scale: f64 },
}

/// Images `[N, C, H, W]` with integer labels for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub split: SplitName,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub transform: PixelTransform,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let l = self.image_len();
        &self.images[i * l..(i + 1) * l]
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Checks labels and, for unit-range data, pixel bounds.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.images.len() != self.len() * self.image_len() {
            return Err(DataError::Shape(format!(
                "{} split: {} values for {} images of {}x{}x{}",
                self.split,
                self.images.len(),
                self.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(DataError::Range(format!(
                "{} split: label {bad} outside 0..{}",
                self.split, self.n_classes
            )));
        }
        let hi = match self.transform {
            PixelTransform::Unit => 1.0,
            PixelTransform::Angle { scale } => scale,
        };
        if let Some(v) = self.images.iter().find(|v| !(0.0..=hi).contains(*v)) {
            return Err(DataError::Range(format!("{} split: pixel value {v} outside [0, {hi}]", self.split)));
        }
        Ok(())
    }
}

/// The three splits of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn map(self, mut f: impl FnMut(DatasetSplit) -> Result<DatasetSplit, DataError>) -> Result<Self, DataError> {
        Ok(Self { train: f(self.train)?, val: f(self.val)?, test: f(self.test)? })
    }
}

/// Maps unit-range pixels affinely onto `[0, range.scale()]` and records the
/// transform on the split.
pub fn normalize_to_angles(split: &DatasetSplit, range: AngleRange) -> Result<DatasetSplit, DataError> {
    if split.transform != PixelTransform::Unit {
        return Err(DataError::Range(format!("{} split is already normalised", split.split)));
    }
    if let Some(v) = split.images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DataError::Range(format!("pixel value {v} outside [0, 1]")));
    }
    let scale = range.scale();
    Ok(DatasetSplit {
        images: split.images.iter().map(|v| v * scale).collect(),
        transform: PixelTransform::Angle { scale },
        ..split.clone()
    })
}

/// Applies a recorded transform to a single unit-range image.
pub fn apply_transform(transform: PixelTransform, image: &[f64]) -> Vec<f64> {
    match transform {
        PixelTransform::Unit => image.to_vec(),
        PixelTransform::Angle { scale } => image.iter().map(|v| v * scale).collect(),
    }
}

/// Inverse of [`normalize_to_angles`].
pub fn denormalize(split: &DatasetSplit) -> DatasetSplit {
    match split.transform {
        PixelTransform::Unit => split.clone(),
        PixelTransform::Angle { scale } => DatasetSplit {
            images: split.images.iter().map(|v| v / scale).collect(),
            transform: PixelTransform::Unit,
            ..split.clone()
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

/// Resizes every image to `size x size` using half-pixel-centre sampling.
pub fn resize(split: &DatasetSplit, size: usize, interp: Interpolation) -> DatasetSplit {
    if split.height == size && split.width == size {
        return split.clone();
    }
    let mut images = Vec::with_capacity(split.len() * split.channels * size * size);
    for i in 0..split.len() {
        let img = split.image(i);
        for c in 0..split.channels {
            let plane = &img[c * split.height * split.width..(c + 1) * split.height * split.width];
            images.extend(resize_plane(plane, split.height, split.width, size, interp));
        }
    }
    DatasetSplit { images, height: size, width: size, ..split.clone() }
}

fn resize_plane(plane: &[f64], h: usize, w: usize, size: usize, interp: Interpolation) -> Vec<f64> {
    let sy = h as f64 / size as f64;
    let sx = w as f64 / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for oy in 0..size {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
        for ox in 0..size {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
            let v = match interp {
                Interpolation::Nearest => {
                    let y = (((oy as f64 + 0.5) * sy) as usize).min(h - 1);
                    let x = (((ox as f64 + 0.5) * sx) as usize).min(w - 1);
                    plane[y * w + x]
                }
                Interpolation::Bilinear => {
                    let (y0, x0) = ((fy as usize).min(h - 1), (fx as usize).min(w - 1));
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
                    let bot = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
                    top * (1.0 - ty) + bot * ty
                }
            };
            out.push(v);
        }
    }
    out
}
