//! Training objectives evaluated at the logits.
//!
//! Logits are flat `(batch, classes)` row-major buffers. Every loss is a sum
//! over samples divided by the full mini-batch size, so confidence-gated
//! losses shrink when few samples pass the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};

/// Default confidence threshold for pseudo-labeling.
pub const DEFAULT_THRESHOLD: f64 = 0.95;

/// What users optimize on their unlabeled data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Weak-view pseudo-labels supervise the strong view.
    #[default]
    Crl,
    /// Weak-view pseudo-labels supervise the weak view.
    SelfTraining,
    /// Ground-truth labels, for upper-bound comparisons.
    SupervisedOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient with respect to the supervised logits (the strong view for
    /// the consistency loss).
    pub logit_gradients: Vec<f64>,
    /// Samples that contributed to the loss.
    pub active_count: usize,
}

fn batch_size(logits: &[f64], classes: usize) -> Result<usize> {
    if classes < 2 {
        return Err(SsflError::invalid("need at least two classes"));
    }
    if logits.is_empty() || logits.len() % classes != 0 {
        return Err(SsflError::invalid(format!(
            "{} logits do not form rows of {classes} classes",
            logits.len()
        )));
    }
    Ok(logits.len() / classes)
}

fn check_threshold(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SsflError::invalid(format!("confidence threshold {tau} outside (0, 1)")));
    }
    Ok(())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(row)[label]`, computed stably.
fn nll(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[label]
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Pseudo-label per sample, or `None` when the top probability is below `tau`.
pub fn pseudo_labels(weak_logits: &[f64], classes: usize, tau: f64) -> Result<Vec<Option<usize>>> {
    check_threshold(tau)?;
    batch_size(weak_logits, classes)?;
    Ok(weak_logits
        .chunks(classes)
        .map(|row| {
            let p = softmax(row);
            let label = argmax(&p);
            (p[label] >= tau).then_some(label)
        })
        .collect())
}

/// Cross-entropy of `logits` against per-sample targets; samples without a
/// target contribute nothing. Divides by the full batch.
fn gated_cross_entropy(logits: &[f64], classes: usize, targets: &[Option<usize>]) -> LossOutput {
    let n = targets.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let mut active = 0;
    for (s, target) in targets.iter().enumerate() {
        let Some(label) = *target else { continue };
        let row = &logits[s * classes..(s + 1) * classes];
        value += nll(row, label);
        let p = softmax(row);
        let g = &mut grad[s * classes..(s + 1) * classes];
        for (c, (gc, pc)) in g.iter_mut().zip(&p).enumerate() {
            *gc = (pc - f64::from(u8::from(c == label))) / n as f64;
        }
        active += 1;
    }
    LossOutput { value: value / n as f64, logit_gradients: grad, active_count: active }
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(SsflError::invalid(format!("{} labels for {n} samples", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(SsflError::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy on the server's labeled (weakly augmented) batch.
pub fn server_supervised_loss(logits: &[f64], labels: &[usize], classes: usize) -> Result<LossOutput> {
    let n = batch_size(logits, classes)?;
    check_labels(labels, n, classes)?;
    let targets: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    Ok(gated_cross_entropy(logits, classes, &targets))
}

/// User loss with oracle ground-truth labels: plain empirical risk.
pub fn supervised_user_loss(logits: &[f64], oracle_labels: &[usize], classes: usize) -> Result<LossOutput> {
    server_supervised_loss(logits, oracle_labels, classes)
}

/// Consistency loss: confident predictions on the weak view supervise the
/// strong view. Pseudo-labels are constants, so only `strong_logits`
/// receives gradient.
pub fn crl_user_loss(weak_logits: &[f64], strong_logits: &[f64], classes: usize, tau: f64) -> Result<LossOutput> {
    if weak_logits.len() != strong_logits.len() {
        return Err(SsflError::invalid("weak and strong logits differ in shape"));
    }
    batch_size(strong_logits, classes)?;
    let targets = pseudo_labels(weak_logits, classes, tau)?;
    Ok(gated_cross_entropy(strong_logits, classes, &targets))
}

/// Self-training: confident predictions on the weak view supervise that
/// same view.
pub fn self_training_loss(weak_logits: &[f64], classes: usize, tau: f64) -> Result<LossOutput> {
    let targets = pseudo_labels(weak_logits, classes, tau)?;
    Ok(gated_cross_entropy(weak_logits, classes, &targets))
}
