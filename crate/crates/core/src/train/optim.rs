//! Adam and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Every gradient entry was exactly zero; nothing changed.
    ZeroGradient,
    /// A gradient entry was NaN or infinite; nothing changed.
    NonFinite,
}

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// Moment buffers sized to the given parameter tensor lengths.
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = shapes.into_iter().collect();
        Self {
            config,
            step: 0,
            m: lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: lens.iter().map(|&l| vec![0.0; l]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` (aligned with the buffers) from `grads`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut [f64]>,
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<StepOutcome, TrainError> {
        let mut params: Vec<&mut [f64]> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Shape(format!(
                "optimizer holds {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(TrainError::Shape(format!(
                    "tensor {i}: buffer {} vs parameter {} vs gradient {}",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient at step {}; update skipped", self.step + 1);
            return Ok(StepOutcome::NonFinite);
        }
        if grads.iter().flatten().all(|&g| g == 0.0) {
            return Ok(StepOutcome::ZeroGradient);
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let g = grads[i][j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

/// Piecewise-constant decay: `base_lr / decay^k` after the k-th milestone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { base_lr: 1e-3, milestones: vec![50, 75], decay: 10.0 }
    }
}

impl StepSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { base_lr: lr, milestones: Vec::new(), decay: 1.0 }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| epoch >= m).count();
        // dividing keeps 1e-3 / 10 == 1e-4 exact in binary floating point
        self.base_lr / self.decay.powi(k as i32)
    }
}

/// 1e-3 before epoch 50, 1e-4 before epoch 75, 1e-5 afterwards.
pub fn lr_schedule(epoch: usize) -> f64 {
    match epoch {
        0..=49 => 1e-3,
        50..=74 => 1e-4,
        _ => 1e-5,
    }
}
