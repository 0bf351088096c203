//! Accuracy and macro one-vs-rest ROC AUC.

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_samples: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean of the per-class AUCs that are defined.
    pub auc: f64,
    /// `None` for a class with no positive or no negative samples.
    pub per_class_auc: Vec<Option<f64>>,
    pub per_class_accuracy: Vec<Option<f64>>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Area under the ROC curve from the Mann-Whitney rank statistic, using
/// midranks so tied scores count one half. `None` when either class is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Metrics from per-sample class scores (`[N, C]`, row-major).
pub fn compute_metrics(scores: &[f64], labels: &[usize], n_classes: usize, loss: f64) -> Result<Metrics, TrainError> {
    let n = labels.len();
    if n == 0 {
        return Err(TrainError::EmptySplit);
    }
    if scores.len() != n * n_classes {
        return Err(TrainError::Shape(format!("{} scores for {n} samples x {n_classes} classes", scores.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(TrainError::Shape(format!("label {l} out of range for {n_classes} classes")));
    }
    let mut hits = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        if argmax(&scores[i * n_classes..(i + 1) * n_classes]) == l {
            hits[l] += 1;
        }
    }
    let accuracy = hits.iter().sum::<usize>() as f64 / n as f64;
    let per_class_accuracy =
        (0..n_classes).map(|c| (counts[c] > 0).then(|| hits[c] as f64 / counts[c] as f64)).collect();

    let per_class_auc: Vec<Option<f64>> = (0..n_classes)
        .map(|c| {
            let col: Vec<f64> = (0..n).map(|i| scores[i * n_classes + c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&col, &pos)
        })
        .collect();
    let defined: Vec<f64> = per_class_auc.iter().flatten().copied().collect();
    let auc = if defined.is_empty() {
        log::warn!("AUC undefined: every sample has the same label; reporting 0.5");
        0.5
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(Metrics { n_samples: n, loss, accuracy, auc, per_class_auc, per_class_accuracy })
}
