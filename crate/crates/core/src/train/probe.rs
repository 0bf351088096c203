//! Linear probe: multinomial logistic regression on frozen features.
//!
//! Self-contained (no tape) so it can serve as an independent yardstick for
//! representations produced by the model.

use super::metrics::{argmax, softmax};
use super::{Adam, AdamConfig, Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Fits a softmax classifier on standardised `train` features with
/// full-batch Adam from zero weights, then scores both sets.
pub fn linear_probe(
    train: (&[f64], &[usize]),
    test: (&[f64], &[usize]),
    dim: usize,
    n_classes: usize,
    steps: usize,
) -> Result<ProbeResult> {
    let (xs, ys) = train;
    let n = ys.len();
    if n == 0 {
        return Err(TrainError::EmptySplit);
    }
    if xs.len() != n * dim || test.0.len() != test.1.len() * dim {
        return Err(TrainError::Shape(format!("probe features do not have width {dim}")));
    }
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for row in xs.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    for row in xs.chunks(dim) {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let standardise = |x: &[f64]| -> Vec<f64> {
        x.chunks(dim).flat_map(|r| r.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s)).collect()
    };
    let xtr = standardise(xs);
    let xte = standardise(test.0);

    // weights [dim, C] then bias [C]
    let mut w = vec![0.0; dim * n_classes];
    let mut b = vec![0.0; n_classes];
    let mut opt = Adam::new(AdamConfig::default(), [w.len(), b.len()]);
    let logits = |x: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
        (0..n_classes).map(|c| b[c] + (0..dim).map(|d| x[d] * w[d * n_classes + c]).sum::<f64>()).collect()
    };
    for _ in 0..steps {
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        for (x, &y) in xtr.chunks(dim).zip(ys) {
            let mut p = softmax(&logits(x, &w, &b));
            p[y] -= 1.0;
            for c in 0..n_classes {
                gb[c] += p[c] / n as f64;
                for d in 0..dim {
                    gw[d * n_classes + c] += x[d] * p[c] / n as f64;
                }
            }
        }
        opt.step([w.as_mut_slice(), b.as_mut_slice()], &[gw, gb], 0.05)?;
    }
    let acc = |x: &[f64], y: &[usize]| -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let hits = x.chunks(dim).zip(y).filter(|(r, &l)| argmax(&logits(r, &w, &b)) == l).count();
        hits as f64 / y.len() as f64
    };
    Ok(ProbeResult { train_accuracy: acc(&xtr, ys), test_accuracy: acc(&xte, test.1) })
}
