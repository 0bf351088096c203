//! Classical ViT and quantum QViT assembly.
//!
//! Both variants share one pipeline:
//! patch embedding + positional embedding, `depth` encoder blocks of
//! self-attention followed by an MLP, mean pooling over tokens, ReLU, and a
//! final linear classifier. The variants differ only in how attention
//! produces Q, K and V: three bias-free `n x n` linear maps, or three
//! independent n-qubit QNNs.

pub mod checkpoint;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::qnn::{ring_topology, QnnError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("image has {got} values, config expects {expected}")]
    ImageSize { expected: usize, got: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {name}: shape {got:?} does not match {expected:?}")]
    ParamShape { name: String, expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Qnn(#[from] QnnError),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Classical,
    Quantum,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Classical => "classical",
            AttentionKind::Quantum => "quantum",
        })
    }
}

/// Largest embedding width accepted for quantum attention.
pub const MAX_QUANTUM_EMBED: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    /// Token width; equals the qubit count for quantum attention.
    pub embed_dim: usize,
    pub depth: usize,
    pub attention: AttentionKind,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub layer_norm: bool,
    /// Divide attention logits by sqrt(embed_dim).
    #[serde(default = "default_true")]
    pub scale_attention: bool,
    /// Two-layer classifier `embed -> bottleneck -> classes` with ReLU in
    /// between. Used by distillation teachers.
    #[serde(default)]
    pub head_bottleneck: Option<usize>,
}

fn default_true() -> bool {
    true
}

/// Named presets: `(name, image_size, patch_size, embed_dim, attention)`.
pub const PRESETS: &[(&str, usize, usize, usize, AttentionKind)] = &[
    ("vit4_28", 28, 2, 4, AttentionKind::Classical),
    ("qvit4_28", 28, 2, 4, AttentionKind::Quantum),
    ("vit4_224", 224, 16, 4, AttentionKind::Classical),
    ("qvit4_224", 224, 16, 4, AttentionKind::Quantum),
    ("vit8_224", 224, 16, 8, AttentionKind::Classical),
    ("qvit8_224", 224, 16, 8, AttentionKind::Quantum),
];

impl ModelConfig {
    /// Reference architecture: depth 1, MLP hidden width `2 * embed_dim`,
    /// no residual or layer norm, scaled attention.
    pub fn reference(
        image_size: usize,
        patch_size: usize,
        embed_dim: usize,
        attention: AttentionKind,
        in_channels: usize,
        n_classes: usize,
    ) -> Self {
        Self {
            image_size,
            in_channels,
            patch_size,
            embed_dim,
            depth: 1,
            attention,
            mlp_hidden: 2 * embed_dim,
            n_classes,
            residual: false,
            layer_norm: false,
            scale_attention: true,
            head_bottleneck: None,
        }
    }

    pub fn preset(name: &str, in_channels: usize, n_classes: usize) -> Result<Self> {
        let &(_, image, patch, embed, kind) = PRESETS
            .iter()
            .find(|p| p.0 == name)
            .ok_or_else(|| ModelError::Config(format!("unknown model preset {name:?}")))?;
        Ok(Self::reference(image, patch, embed, kind, in_channels, n_classes))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.patch_size == 0 || self.image_size == 0 {
            return bad("image_size and patch_size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.in_channels == 0 || self.embed_dim == 0 || self.mlp_hidden == 0 {
            return bad("in_channels, embed_dim and mlp_hidden must be positive".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.attention == AttentionKind::Quantum
            && !(2..=MAX_QUANTUM_EMBED).contains(&self.embed_dim)
        {
            return bad(format!(
                "quantum attention needs embed_dim in 2..={MAX_QUANTUM_EMBED}, got {}",
                self.embed_dim
            ));
        }
        if self.head_bottleneck == Some(0) {
            return bad("head_bottleneck must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch_size * self.patch_size
    }

    pub fn image_len(&self) -> usize {
        self.in_channels * self.image_size * self.image_size
    }

    /// Width of the vector the classifier consumes (the distillation target).
    pub fn intermediate_dim(&self) -> usize {
        self.head_bottleneck.unwrap_or(self.embed_dim)
    }

    /// Shapes of every parameter, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let n = self.embed_dim;
        let mut v = vec![
            ("patch_embed.weight".to_string(), self.patch_dim(), n),
            ("patch_embed.bias".to_string(), 1, n),
            ("pos_embed".to_string(), self.n_tokens(), n),
        ];
        for b in 0..self.depth {
            for proj in ["q", "k", "v"] {
                let shape = match self.attention {
                    AttentionKind::Classical => (n, n),
                    AttentionKind::Quantum => (1, 2 * n),
                };
                v.push((format!("blocks.{b}.attn.{proj}"), shape.0, shape.1));
            }
            let h = self.mlp_hidden;
            v.push((format!("blocks.{b}.mlp.fc1.weight"), n, h));
            v.push((format!("blocks.{b}.mlp.fc1.bias"), 1, h));
            v.push((format!("blocks.{b}.mlp.fc2.weight"), h, n));
            v.push((format!("blocks.{b}.mlp.fc2.bias"), 1, n));
        }
        if let Some(bn) = self.head_bottleneck {
            v.push(("head.bottleneck.weight".to_string(), n, bn));
            v.push(("head.bottleneck.bias".to_string(), 1, bn));
        }
        let d = self.intermediate_dim();
        v.push((HEAD_WEIGHT.to_string(), d, self.n_classes));
        v.push((HEAD_BIAS.to_string(), 1, self.n_classes));
        v
    }
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered named parameter blobs.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn as_slice(&self) -> &[Param] {
        &self.params
    }

    /// Replaces the values of `name`, checking shape.
    pub fn set(&mut self, name: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
        let p = self.get_mut(name).ok_or_else(|| ModelError::UnknownParam(name.to_string()))?;
        if (p.rows, p.cols) != (rows, cols) || values.len() != rows * cols {
            return Err(ModelError::ParamShape {
                name: name.to_string(),
                expected: (p.rows, p.cols),
                got: (rows, cols),
            });
        }
        p.values.copy_from_slice(values);
        Ok(())
    }
}

/// Outputs of one forward pass.
pub struct ForwardOutput {
    /// `[1, n_classes]`
    pub logits: Tensor,
    /// Classifier input before its ReLU, `[1, intermediate_dim]`.
    pub intermediate: Tensor,
    /// The same vector after ReLU.
    pub intermediate_relu: Tensor,
    /// Tape handles of the parameters, aligned with [`ParamStore`] order.
    pub params: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded initialisation. Linear layers draw from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, positional embeddings from
    /// `U(-0.1, 0.1)` and circuit angles from `U(-pi, pi)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut last_fan_in = 1usize;
        for (name, rows, cols) in config.param_shapes() {
            let len = rows * cols;
            let values: Vec<f64> = if name == "pos_embed" {
                (0..len).map(|_| rng.gen_range(-0.1..0.1)).collect()
            } else if name.contains(".attn.") && config.attention == AttentionKind::Quantum {
                (0..len)
                    .map(|_| rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI))
                    .collect()
            } else {
                // a bias follows its weight and shares its fan-in
                if !name.ends_with(".bias") {
                    last_fan_in = rows;
                }
                let bound = 1.0 / (last_fan_in as f64).sqrt();
                (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            params.push(Param { name, rows, cols, values });
        }
        Ok(Self { config, params: ParamStore::new(params) })
    }

    /// Builds a model from a config and stored parameters, validating shapes.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter blobs, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, r, c), p) in shapes.iter().zip(params.iter()) {
            if *name != p.name {
                return Err(ModelError::UnknownParam(p.name.clone()));
            }
            if (*r, *c) != (p.rows, p.cols) || p.values.len() != r * c {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: (*r, *c),
                    got: (p.rows, p.cols),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn n_parameters(&self) -> usize {
        self.params.total()
    }

    /// Records the full forward pass for one `[C, H, W]` image on `tape`.
    pub fn forward(&self, tape: &mut Tape, image: &[f64]) -> Result<ForwardOutput> {
        let cfg = &self.config;
        if image.len() != cfg.image_len() {
            return Err(ModelError::ImageSize { expected: cfg.image_len(), got: image.len() });
        }
        let handles: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| tape.param(p.rows, p.cols, p.values.clone()))
            .collect::<std::result::Result<_, _>>()?;
        let by_name = |name: &str| -> Tensor {
            handles[self.params.index_of(name).expect("config-derived parameter name")]
        };

        let mut x = patch_embed(
            tape,
            image,
            cfg,
            by_name("patch_embed.weight"),
            by_name("patch_embed.bias"),
            by_name("pos_embed"),
        )?;

        let pairs = match cfg.attention {
            AttentionKind::Quantum => ring_topology(cfg.embed_dim)?,
            AttentionKind::Classical => Vec::new(),
        };
        for b in 0..cfg.depth {
            let proj = AttentionProjections {
                q: by_name(&format!("blocks.{b}.attn.q")),
                k: by_name(&format!("blocks.{b}.attn.k")),
                v: by_name(&format!("blocks.{b}.attn.v")),
                kind: cfg.attention,
                pairs: &pairs,
            };
            let sa_in = if cfg.layer_norm { tape.layer_norm_rows(x) } else { x };
            let sa = self_attention_block(tape, sa_in, &proj, cfg.scale_attention)?;
            x = if cfg.residual { tape.add(x, sa)? } else { sa };

            let mlp_in = if cfg.layer_norm { tape.layer_norm_rows(x) } else { x };
            let h = linear(
                tape,
                mlp_in,
                by_name(&format!("blocks.{b}.mlp.fc1.weight")),
                by_name(&format!("blocks.{b}.mlp.fc1.bias")),
            )?;
            let h = tape.relu(h);
            let m = linear(
                tape,
                h,
                by_name(&format!("blocks.{b}.mlp.fc2.weight")),
                by_name(&format!("blocks.{b}.mlp.fc2.bias")),
            )?;
            x = if cfg.residual { tape.add(x, m)? } else { m };
        }

        let pooled = tape.mean_rows(x);
        let intermediate = match cfg.head_bottleneck {
            Some(_) => {
                let r = tape.relu(pooled);
                linear(tape, r, by_name("head.bottleneck.weight"), by_name("head.bottleneck.bias"))?
            }
            None => pooled,
        };
        let intermediate_relu = tape.relu(intermediate);
        let logits = linear(tape, intermediate_relu, by_name(HEAD_WEIGHT), by_name(HEAD_BIAS))?;
        Ok(ForwardOutput { logits, intermediate, intermediate_relu, params: handles })
    }

    /// Logits without gradient tracking.
    pub fn predict(&self, image: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let out = self.forward(&mut tape, image)?;
        Ok(tape.value(out.logits).to_vec())
    }

    /// Pre-ReLU classifier input without gradient tracking.
    pub fn intermediate(&self, image: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let out = self.forward(&mut tape, image)?;
        Ok(tape.value(out.intermediate).to_vec())
    }
}

fn linear(tape: &mut Tape, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row(y, b)?)
}

/// Non-overlapping patches of a `[C, H, W]` image as a `[tokens, C*p*p]`
/// row-major matrix. Tokens run row-major over the patch grid; each row is
/// ordered channel, then patch row, then patch column.
pub fn extract_patches(image: &[f64], channels: usize, size: usize, patch: usize) -> Vec<f64> {
    let grid = size / patch;
    let mut out = Vec::with_capacity(image.len());
    for gy in 0..grid {
        for gx in 0..grid {
            for c in 0..channels {
                let plane = &image[c * size * size..(c + 1) * size * size];
                for dy in 0..patch {
                    let row = (gy * patch + dy) * size + gx * patch;
                    out.extend_from_slice(&plane[row..row + patch]);
                }
            }
        }
    }
    out
}

/// Patch extraction, linear projection to `embed_dim`, plus positional
/// embedding. Equivalent to a stride-`p` convolution with a `p x p` kernel.
pub fn patch_embed(
    tape: &mut Tape,
    image: &[f64],
    cfg: &ModelConfig,
    weight: Tensor,
    bias: Tensor,
    pos: Tensor,
) -> Result<Tensor> {
    if image.len() != cfg.image_len() {
        return Err(ModelError::ImageSize { expected: cfg.image_len(), got: image.len() });
    }
    let patches = extract_patches(image, cfg.in_channels, cfg.image_size, cfg.patch_size);
    let p = tape.constant(cfg.n_tokens(), cfg.patch_dim(), patches)?;
    let e = linear(tape, p, weight, bias)?;
    Ok(tape.add(e, pos)?)
}

/// `softmax(q k^T / sqrt(n)) v`, the scale applied when `scaled`.
pub fn attention(tape: &mut Tape, q: Tensor, k: Tensor, v: Tensor, scaled: bool) -> Result<Tensor> {
    let (sq, sk, sv) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if sq != sk || sk != sv {
        return Err(AutodiffError::Shape { op: "attention", lhs: sq, rhs: sv }.into());
    }
    let logits = tape.matmul_t(q, k)?;
    let logits = if scaled { tape.scale(logits, 1.0 / (sq.1 as f64).sqrt()) } else { logits };
    let w = tape.softmax_rows(logits);
    Ok(tape.matmul(w, v)?)
}

/// Q/K/V parameters of one attention block.
pub struct AttentionProjections<'a> {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub kind: AttentionKind,
    /// Qubit pairs for quantum projections; ignored for classical.
    pub pairs: &'a [(usize, usize)],
}

pub fn self_attention_block(
    tape: &mut Tape,
    x: Tensor,
    proj: &AttentionProjections<'_>,
    scaled: bool,
) -> Result<Tensor> {
    let mut project = |w: Tensor| -> Result<Tensor> {
        Ok(match proj.kind {
            AttentionKind::Classical => tape.matmul(x, w)?,
            AttentionKind::Quantum => tape.quantum_apply(x, w, proj.pairs)?,
        })
    };
    let q = project(proj.q)?;
    let k = project(proj.k)?;
    let v = project(proj.v)?;
    attention(tape, q, k, v, scaled)
}

/// Per-component parameter counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterReport {
    pub components: Vec<(String, usize)>,
    /// Attention parameters in one block for this config.
    pub attention_per_block: usize,
    /// `3 n^2`: bias-free classical Q/K/V projections at this width.
    pub classical_sa_per_block: usize,
    /// `6 n`: three QNNs with `2n` angles each at this width.
    pub quantum_sa_per_block: usize,
    pub total: usize,
}

pub fn count_parameters(config: &ModelConfig) -> ParameterReport {
    let mut components: Vec<(String, usize)> = Vec::new();
    for (name, r, c) in config.param_shapes() {
        let group = if name.starts_with("patch_embed") {
            "patch_embed".to_string()
        } else if name == "pos_embed" {
            "pos_embed".to_string()
        } else if let Some(rest) = name.strip_prefix("blocks.") {
            let idx = rest.split('.').next().unwrap_or("0");
            let part = if name.contains(".attn.") { "attention" } else { "mlp" };
            format!("blocks.{idx}.{part}")
        } else {
            "head".to_string()
        };
        match components.iter_mut().find(|(g, _)| *g == group) {
            Some((_, n)) => *n += r * c,
            None => components.push((group, r * c)),
        }
    }
    let n = config.embed_dim;
    let classical = 3 * n * n;
    let quantum = 6 * n;
    ParameterReport {
        total: components.iter().map(|(_, c)| c).sum(),
        components,
        attention_per_block: match config.attention {
            AttentionKind::Classical => classical,
            AttentionKind::Quantum => quantum,
        },
        classical_sa_per_block: classical,
        quantum_sa_per_block: quantum,
    }
}
