//! Seeded class-conditional texture images for smoke tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetSplit, PixelTransform, SplitName, Splits};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub seed: u64,
    pub n_classes: usize,
    /// Samples per class in the training split; val and test get a quarter each.
    pub n_per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Weight of the class prototype against uniform noise, in `[0, 1]`.
    pub separability: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self { seed: 0, n_classes: 2, n_per_class: 32, image_size: 28, channels: 1, separability: 0.6 }
    }
}

pub const MAX_SYNTHETIC_CLASSES: usize = 8;

/// Prototype intensity for class `class` at pixel `(y, x)`. Each class owns
/// a distinct on/off pattern over a 2x2 arrangement of cells whose side
/// scales with the image, plus a class-dependent stripe orientation.
fn prototype(class: usize, y: usize, x: usize, size: usize) -> f64 {
    let cell = (size / 2).max(1);
    let unit = (size / 28).max(1);
    let quadrant = (y / cell).min(1) * 2 + (x / cell).min(1);
    let mask = [0b0001u32, 0b0110, 0b1011, 0b1100][class % 4];
    let base = if mask >> quadrant & 1 == 1 { 1.0 } else { 0.0 };
    let stripe = if class < 4 { (y / (4 * unit)) % 2 } else { (x / (4 * unit)) % 2 };
    0.75 * base + 0.25 * stripe as f64
}

fn make_split(split: SplitName, per_class: usize, opts: &SyntheticOptions, rng: &mut ChaCha8Rng) -> DatasetSplit {
    let s = opts.image_size;
    let n = per_class * opts.n_classes;
    let mut images = Vec::with_capacity(n * opts.channels * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % opts.n_classes;
        labels.push(class);
        for _ in 0..opts.channels {
            for y in 0..s {
                for x in 0..s {
                    let noise: f64 = rng.gen();
                    let v = opts.separability * prototype(class, y, x, s) + (1.0 - opts.separability) * noise;
                    images.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    DatasetSplit {
        split,
        images,
        labels,
        channels: opts.channels,
        height: s,
        width: s,
        n_classes: opts.n_classes,
        transform: PixelTransform::Unit,
    }
}

/// Balanced train/val/test splits, deterministic in `opts.seed`.
pub fn synthetic_dataset(opts: &SyntheticOptions) -> Result<Splits, DataError> {
    if opts.n_classes < 2 || opts.n_classes > MAX_SYNTHETIC_CLASSES {
        return Err(DataError::Range(format!(
            "synthetic n_classes must be in 2..={MAX_SYNTHETIC_CLASSES}, got {}",
            opts.n_classes
        )));
    }
    if !(0.0..=1.0).contains(&opts.separability) {
        return Err(DataError::Range(format!("separability {} outside [0, 1]", opts.separability)));
    }
    if opts.image_size < 2 || opts.channels == 0 || opts.n_per_class == 0 {
        return Err(DataError::Shape("synthetic images need size >= 2, channels >= 1, samples >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eval = (opts.n_per_class / 4).max(1);
    let train = make_split(SplitName::Train, opts.n_per_class, opts, &mut rng);
    let val = make_split(SplitName::Val, eval, opts, &mut rng);
    let test = make_split(SplitName::Test, eval, opts, &mut rng);
    Ok(Splits { train, val, test })
}
