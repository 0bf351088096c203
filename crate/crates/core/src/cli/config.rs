//! Resolved run configuration: defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AngleRange, Interpolation};
use crate::model::{AttentionKind, ModelConfig};
use crate::train::{KdConfig, StepSchedule, TrainConfig};

use super::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub tag: Option<String>,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub kd: KdSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tag: None,
            out_dir: PathBuf::from("runs"),
            threads: None,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            kd: KdSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic`, a MedMNIST name such as `retinamnist`, or a path to an
    /// `.npz` file following the MedMNIST key layout.
    pub dataset: String,
    pub root: Option<PathBuf>,
    pub angle_range: AngleRange,
    pub interpolation: Interpolation,
    pub synthetic: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            root: None,
            angle_range: AngleRange::Pi,
            interpolation: Interpolation::Bilinear,
            synthetic: SyntheticSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub separability: f64,
    pub channels: usize,
    /// Defaults to the model's input size.
    pub image_size: Option<usize>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self { n_classes: 2, n_per_class: 64, separability: 0.6, channels: 1, image_size: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    pub image_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub embed_dim: Option<usize>,
    pub depth: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub residual: Option<bool>,
    pub layer_norm: Option<bool>,
    pub scale_attention: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "qvit4_28".into(),
            image_size: None,
            patch_size: None,
            embed_dim: None,
            depth: None,
            mlp_hidden: None,
            residual: None,
            layer_norm: None,
            scale_attention: None,
        }
    }
}

impl ModelSection {
    /// Preset plus overrides, for the given input channels and classes.
    pub fn resolve(&self, in_channels: usize, n_classes: usize) -> Result<ModelConfig, CliError> {
        let mut c = ModelConfig::preset(&self.preset, in_channels, n_classes)?;
        if let Some(v) = self.image_size {
            c.image_size = v;
        }
        if let Some(v) = self.patch_size {
            c.patch_size = v;
        }
        if let Some(v) = self.embed_dim {
            c.embed_dim = v;
            c.mlp_hidden = 2 * v;
        }
        if let Some(v) = self.depth {
            c.depth = v;
        }
        if let Some(v) = self.mlp_hidden {
            c.mlp_hidden = v;
        }
        if let Some(v) = self.residual {
            c.residual = v;
        }
        if let Some(v) = self.layer_norm {
            c.layer_norm = v;
        }
        if let Some(v) = self.scale_attention {
            c.scale_attention = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub keep_best: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = StepSchedule::default();
        Self { epochs: 100, batch_size: 32, lr: s.base_lr, milestones: s.milestones, decay: s.decay, keep_best: true }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            schedule: StepSchedule { base_lr: self.lr, milestones: self.milestones.clone(), decay: self.decay },
            keep_best: self.keep_best,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KdMode {
    /// Match the teacher's bottleneck, then copy its last layer.
    #[default]
    Intermediate,
    /// Match the teacher's logits; no weight transfer.
    DirectLogits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdSection {
    pub mode: KdMode,
    pub epochs: usize,
    pub lr: f64,
    pub match_relu: bool,
    /// Existing teacher bundle; a teacher is trained when absent.
    pub bundle: Option<PathBuf>,
    /// Fine-tuning epochs after distillation; defaults to `train.epochs`.
    pub finetune_epochs: Option<usize>,
    pub teacher: TeacherSection,
}

impl Default for KdSection {
    fn default() -> Self {
        let k = KdConfig::default();
        Self {
            mode: KdMode::Intermediate,
            epochs: k.epochs,
            lr: k.lr,
            match_relu: k.match_relu,
            bundle: None,
            finetune_epochs: None,
            teacher: TeacherSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub embed_dim: usize,
    pub depth: usize,
    pub epochs: usize,
    pub lr: f64,
    pub residual: bool,
    pub layer_norm: bool,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self { embed_dim: 16, depth: 2, epochs: 30, lr: 1e-3, residual: true, layer_norm: true }
    }
}

impl TeacherSection {
    /// Classical teacher sharing the student's geometry, with a bottleneck
    /// head of the student's width.
    pub fn resolve(&self, student: &ModelConfig) -> Result<ModelConfig, CliError> {
        let mut c = ModelConfig::reference(
            student.image_size,
            student.patch_size,
            self.embed_dim,
            AttentionKind::Classical,
            student.in_channels,
            student.n_classes,
        );
        c.depth = self.depth;
        c.residual = self.residual;
        c.layer_norm = self.layer_norm;
        c.head_bottleneck = Some(student.intermediate_dim());
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);

        let partial: RunConfig = toml::from_str("seed = 7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.train.epochs, 3);
        assert_eq!(partial.train.batch_size, 32);

        assert!(toml::from_str::<RunConfig>("sede = 7\n").is_err());
    }

    #[test]
    fn invalid_geometry_caught() {
        let m = ModelSection { patch_size: Some(3), ..Default::default() };
        assert!(matches!(m.resolve(1, 2), Err(CliError::Config(_))));
    }

    #[test]
    fn teacher_width_follows_student() {
        let student = ModelSection::default().resolve(1, 2).unwrap();
        let t = TeacherSection::default().resolve(&student).unwrap();
        assert_eq!(t.head_bottleneck, Some(4));
        assert_eq!(t.attention, AttentionKind::Classical);
    }
}
