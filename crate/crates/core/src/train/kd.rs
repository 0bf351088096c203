//! Knowledge distillation from a classical teacher with a bottleneck head.
//!
//! The teacher's classifier is `embed -> n -> classes` with ReLU in between,
//! where `n` is the student's width. Its per-sample `n`-dimensional
//! bottleneck outputs become regression targets for the student's
//! classifier input, after which the teacher's last linear layer is copied
//! into the student.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{apply_batch, batch_gradients, epoch_batches, new_optimizer, train_loop, Objective, Result, TrainConfig, TrainError, TrainOutcome};
use crate::autodiff::Tape;
use crate::data::{DatasetSplit, Splits};
use crate::model::{Model, ModelConfig, ModelError, HEAD_BIAS, HEAD_WEIGHT};

pub const BUNDLE_MAGIC: &[u8; 4] = b"QKD1";

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Match post-ReLU activations instead of the raw bottleneck output.
    pub match_relu: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, lr: 1e-3, seed: 0, match_relu: false }
    }
}

/// Teacher outputs packaged for a student of width `width`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherBundle {
    pub width: usize,
    pub n_classes: usize,
    /// Pre-ReLU bottleneck outputs on the training split, `[N, width]`.
    pub targets: Vec<f64>,
    /// Teacher logits on the training split, `[N, n_classes]`.
    pub logits: Vec<f64>,
    /// `[width, n_classes]`
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl TeacherBundle {
    pub fn n_samples(&self) -> usize {
        self.targets.len() / self.width.max(1)
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.width..(i + 1) * self.width]
    }

    /// Extracts targets, logits and the final layer from a trained teacher.
    pub fn from_teacher(teacher: &Model, split: &DatasetSplit) -> Result<Self> {
        let width = match teacher.config.head_bottleneck {
            Some(b) => b,
            None => return Err(TrainError::Format("teacher needs a bottleneck head".into())),
        };
        let rows: Vec<(Vec<f64>, Vec<f64>)> = {
            use rayon::prelude::*;
            (0..split.len())
                .into_par_iter()
                .map(|i| {
                    let mut tape = Tape::no_grad();
                    let out = teacher.forward(&mut tape, split.image(i))?;
                    Ok((tape.value(out.intermediate).to_vec(), tape.value(out.logits).to_vec()))
                })
                .collect::<std::result::Result<_, ModelError>>()?
        };
        let head = |name: &str| teacher.params.get(name).map(|p| p.values.clone()).expect("teacher head present");
        let mut metadata = BTreeMap::new();
        metadata.insert("teacher_embed_dim".into(), teacher.config.embed_dim.to_string());
        metadata.insert("teacher_depth".into(), teacher.config.depth.to_string());
        metadata.insert("teacher_attention".into(), teacher.config.attention.to_string());
        metadata.insert("split".into(), split.split.to_string());
        metadata.insert("n_samples".into(), split.len().to_string());
        Ok(Self {
            width,
            n_classes: teacher.config.n_classes,
            targets: rows.iter().flat_map(|r| r.0.iter().copied()).collect(),
            logits: rows.iter().flat_map(|r| r.1.iter().copied()).collect(),
            head_weight: head(HEAD_WEIGHT),
            head_bias: head(HEAD_BIAS),
            metadata,
        })
    }

    /// The teacher's last layer applied to `relu(row)`, with the same
    /// arithmetic as the model's classifier.
    pub fn head_logits(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let x = tape.constant(1, self.width, row.to_vec()).map_err(ModelError::from)?;
        let x = tape.relu(x);
        let w = tape.constant(self.width, self.n_classes, self.head_weight.clone()).map_err(ModelError::from)?;
        let b = tape.constant(1, self.n_classes, self.head_bias.clone()).map_err(ModelError::from)?;
        let y = tape.matmul(x, w).map_err(ModelError::from)?;
        let y = tape.add_row(y, b).map_err(ModelError::from)?;
        Ok(tape.value(y).to_vec())
    }

    /// Checks widths against a student and, if given, the split it will be
    /// paired with.
    pub fn check_compatible(&self, student: &ModelConfig, split: Option<&DatasetSplit>) -> Result<()> {
        let need = student.intermediate_dim();
        if self.width != need {
            return Err(TrainError::Width { what: "teacher bundle", expected: need, got: self.width });
        }
        if self.n_classes != student.n_classes {
            return Err(TrainError::Width { what: "teacher head", expected: student.n_classes, got: self.n_classes });
        }
        if self.head_weight.len() != self.width * self.n_classes || self.head_bias.len() != self.n_classes {
            return Err(TrainError::Shape("teacher head weights do not match its declared shape".into()));
        }
        if let Some(s) = split {
            if self.n_samples() != s.len() {
                return Err(TrainError::Shape(format!(
                    "bundle holds {} targets for a split of {}",
                    self.n_samples(),
                    s.len()
                )));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n_samples();
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| TrainError::Format(e.to_string()))?;
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&5u32.to_le_bytes())?;
        write_matrix(&mut w, "targets", n, self.width, &self.targets)?;
        write_matrix(&mut w, "head_weights", self.width, self.n_classes, &self.head_weight)?;
        write_matrix(&mut w, "head_bias", 1, self.n_classes, &self.head_bias)?;
        write_matrix(&mut w, "logits", n, self.n_classes, &self.logits)?;
        write_header(&mut w, "metadata", SECTION_TEXT)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(TrainError::Format(format!("not a teacher bundle (magic {magic:?})")));
        }
        let count = read_u32(&mut r)?;
        let mut matrices = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, name_len)?)
                .map_err(|_| TrainError::Format("section name is not UTF-8".into()))?;
            let mut kind = [0u8; 1];
            read_exact(&mut r, &mut kind)?;
            match kind[0] {
                SECTION_MATRIX => {
                    let rows = read_u64(&mut r)? as usize;
                    let cols = read_u64(&mut r)? as usize;
                    let len = rows
                        .checked_mul(cols)
                        .filter(|l| *l <= 1 << 30)
                        .ok_or_else(|| TrainError::Format(format!("{name}: implausible shape")))?;
                    let raw = read_bytes(&mut r, len * 8)?;
                    let vals: Vec<f64> =
                        raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                    matrices.insert(name, (rows, cols, vals));
                }
                SECTION_TEXT => {
                    let len = read_u64(&mut r)? as usize;
                    let bytes = read_bytes(&mut r, len)?;
                    if name == "metadata" {
                        metadata = serde_json::from_slice(&bytes).map_err(|e| TrainError::Format(format!("metadata: {e}")))?;
                    }
                }
                k => return Err(TrainError::Format(format!("{name}: unknown section kind {k}"))),
            }
        }
        let mut take = |name: &str| matrices.remove(name).ok_or_else(|| TrainError::Format(format!("missing section {name}")));
        let (n, width, targets) = take("targets")?;
        let (wr, n_classes, head_weight) = take("head_weights")?;
        let (_, bc, head_bias) = take("head_bias")?;
        let (ln, lc, logits) = take("logits")?;
        if wr != width || bc != n_classes || ln != n || lc != n_classes {
            return Err(TrainError::Format("teacher bundle sections disagree on shape".into()));
        }
        Ok(Self { width, n_classes, targets, logits, head_weight, head_bias, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::read(path)?.as_slice())
    }
}

const SECTION_MATRIX: u8 = 0;
const SECTION_TEXT: u8 = 1;

fn write_header<W: Write>(w: &mut W, name: &str, kind: u8) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[kind])?;
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, name: &str, rows: usize, cols: usize, vals: &[f64]) -> Result<()> {
    write_header(w, name, SECTION_MATRIX)?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TrainError::Format("truncated teacher bundle".into()),
        _ => e.into(),
    })
}

fn read_bytes<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut v = vec![0u8; len];
    read_exact(r, &mut v)?;
    Ok(v)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Trains a teacher with a bottleneck head and packages its outputs on the
/// training split.
pub fn train_teacher(config: ModelConfig, seed: u64, splits: &Splits, cfg: &TrainConfig) -> Result<(TrainOutcome, TeacherBundle)> {
    if config.head_bottleneck.is_none() {
        return Err(TrainError::Format("teacher config needs head_bottleneck set to the student width".into()));
    }
    let outcome = train_loop(Model::init(config, seed)?, splits, cfg)?;
    let bundle = TeacherBundle::from_teacher(&outcome.model, &splits.train)?;
    Ok((outcome, bundle))
}

enum KdTarget<'a> {
    Intermediate(&'a [f64], usize, bool),
    Logits(&'a [f64], usize),
}

/// Returns the trained student and the mean loss of each epoch.
fn kd_loop(student: Model, split: &DatasetSplit, target: KdTarget<'_>, cfg: &KdConfig) -> Result<(Model, Vec<f64>)> {
    let mut model = student;
    let mut opt = new_optimizer(&model);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let relu_targets: Vec<f64>;
    let (data, width, relu) = match target {
        KdTarget::Intermediate(t, w, true) => {
            relu_targets = t.iter().map(|v| v.max(0.0)).collect();
            (relu_targets.as_slice(), w, true)
        }
        KdTarget::Intermediate(t, w, false) => (t, w, false),
        KdTarget::Logits(t, c) => (t, c, false),
    };
    let logits_mode = matches!(target, KdTarget::Logits(..));
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for batch in epoch_batches(split.len(), cfg.batch_size, cfg.seed, epoch) {
            let items: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let t = &data[i * width..(i + 1) * width];
                    let obj = if logits_mode { Objective::Logits(t) } else { Objective::Intermediate { target: t, relu } };
                    (split.image(i), obj)
                })
                .collect();
            let bg = batch_gradients(&model, &items)?;
            sum += bg.loss_sum;
            apply_batch(&mut model, &mut opt, bg, batch.len(), cfg.lr)?;
        }
        let mean = sum / split.len() as f64;
        log::info!("kd epoch {epoch:3} mse {mean:.6}");
        losses.push(mean);
    }
    Ok((model, losses))
}

/// Regresses the student's classifier input onto the teacher targets.
pub fn kd_pretrain(student: Model, bundle: &TeacherBundle, split: &DatasetSplit, cfg: &KdConfig) -> Result<(Model, Vec<f64>)> {
    bundle.check_compatible(&student.config, Some(split))?;
    kd_loop(student, split, KdTarget::Intermediate(&bundle.targets, bundle.width, cfg.match_relu), cfg)
}

/// Regresses the student's logits onto the teacher's logits.
pub fn kd_direct_logits(student: Model, bundle: &TeacherBundle, split: &DatasetSplit, cfg: &KdConfig) -> Result<(Model, Vec<f64>)> {
    if bundle.n_classes != student.config.n_classes {
        return Err(TrainError::Width { what: "teacher logits", expected: student.config.n_classes, got: bundle.n_classes });
    }
    if bundle.logits.len() != split.len() * bundle.n_classes {
        return Err(TrainError::Shape("bundle logits do not cover the split".into()));
    }
    kd_loop(student, split, KdTarget::Logits(&bundle.logits, bundle.n_classes), cfg)
}

/// Overwrites the student's classifier with the teacher's last layer.
pub fn transfer_head(mut student: Model, bundle: &TeacherBundle) -> Result<Model> {
    bundle.check_compatible(&student.config, None)?;
    student.params.set(HEAD_WEIGHT, bundle.width, bundle.n_classes, &bundle.head_weight)?;
    student.params.set(HEAD_BIAS, 1, bundle.n_classes, &bundle.head_bias)?;
    Ok(student)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize_to_angles, synthetic_dataset, AngleRange, SyntheticOptions};
    use crate::model::AttentionKind;

    fn splits() -> Splits {
        let opts = SyntheticOptions { n_per_class: 4, image_size: 8, ..Default::default() };
        synthetic_dataset(&opts).unwrap().map(|s| normalize_to_angles(&s, AngleRange::Pi)).unwrap()
    }

    fn student() -> Model {
        Model::init(ModelConfig::reference(8, 2, 4, AttentionKind::Quantum, 1, 2), 1).unwrap()
    }

    fn teacher_bundle(s: &Splits) -> TeacherBundle {
        let mut cfg = ModelConfig::reference(8, 2, 6, AttentionKind::Classical, 1, 2);
        cfg.head_bottleneck = Some(4);
        let teacher = Model::init(cfg, 2).unwrap();
        TeacherBundle::from_teacher(&teacher, &s.train).unwrap()
    }

    #[test]
    fn bundle_round_trip_bit_exact() {
        let s = splits();
        let b = teacher_bundle(&s);
        assert_eq!(b.width, 4);
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        let back = TeacherBundle::read(buf.as_slice()).unwrap();
        assert_eq!(back, b);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(buf, again);
        assert!(TeacherBundle::read(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn fixed_point_leaves_student_unchanged() {
        let s = splits();
        let st = student();
        let mut b = teacher_bundle(&s);
        b.targets = (0..s.train.len()).flat_map(|i| st.intermediate(s.train.image(i)).unwrap()).collect();
        let cfg = KdConfig { epochs: 2, batch_size: 3, ..Default::default() };
        let (after, losses) = kd_pretrain(st.clone(), &b, &s.train, &cfg).unwrap();
        assert_eq!(losses, vec![0.0, 0.0]);
        assert_eq!(after, st);

        b.logits = (0..s.train.len()).flat_map(|i| st.predict(s.train.image(i)).unwrap()).collect();
        let (after, losses) = kd_direct_logits(st.clone(), &b, &s.train, &cfg).unwrap();
        assert_eq!(losses, vec![0.0, 0.0]);
        assert_eq!(after, st);
    }

    #[test]
    fn transfer_touches_only_head_and_is_idempotent() {
        let s = splits();
        let b = teacher_bundle(&s);
        let st = student();
        let once = transfer_head(st.clone(), &b).unwrap();
        let twice = transfer_head(once.clone(), &b).unwrap();
        assert_eq!(once, twice);
        for (p, q) in st.params.iter().zip(once.params.iter()) {
            if p.name == HEAD_WEIGHT || p.name == HEAD_BIAS {
                continue;
            }
            assert_eq!(p, q);
        }
        assert_eq!(once.params.get(HEAD_WEIGHT).unwrap().values, b.head_weight);
    }

    #[test]
    fn composition_identity() {
        let s = splits();
        let mut b = teacher_bundle(&s);
        let st = transfer_head(student(), &b).unwrap();
        let row = st.intermediate(s.train.image(0)).unwrap();
        b.targets[..4].copy_from_slice(&row);
        assert_eq!(st.predict(s.train.image(0)).unwrap(), b.head_logits(b.target(0)).unwrap());
    }

    #[test]
    fn width_mismatch_is_reported() {
        let s = splits();
        let b = teacher_bundle(&s);
        let wide = Model::init(ModelConfig::reference(8, 2, 8, AttentionKind::Quantum, 1, 2), 1).unwrap();
        assert!(matches!(transfer_head(wide.clone(), &b), Err(TrainError::Width { .. })));
        assert!(kd_pretrain(wide, &b, &s.train, &KdConfig::default()).is_err());
    }
}
