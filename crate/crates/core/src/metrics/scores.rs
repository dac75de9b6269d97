//! Overlap and ranking metrics: dice, best-achievable dice over a threshold
//! sweep, and pixel-level AUROC / AUPRC.

use crate::numerics::Tensor;

use super::MetricsError;

fn check_binary(name: &str, t: &Tensor) -> Result<(), MetricsError> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(MetricsError::NonBinary(name.to_string()));
    }
    Ok(())
}

/// Dice overlap 2|m∩l| / (|m|+|l|); two empty masks count as a perfect
/// match (1.0) so degenerate healthy cases don't poison dataset means.
pub fn dice(m: &Tensor, l: &Tensor) -> Result<f64, MetricsError> {
    if m.shape() != l.shape() {
        return Err(MetricsError::Shape(format!(
            "dice: shapes {:?} and {:?} differ",
            m.shape(),
            l.shape()
        )));
    }
    check_binary("dice prediction", m)?;
    check_binary("dice label", l)?;
    let mut inter = 0u64;
    let mut total = 0u64;
    for (&a, &b) in m.data().iter().zip(l.data()) {
        inter += (a == 1.0 && b == 1.0) as u64;
        total += (a == 1.0) as u64 + (b == 1.0) as u64;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

fn pooled_range(
    filtered: &[&Tensor],
    masks: &[&Tensor],
) -> Result<(f32, f32), MetricsError> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (f, m) in filtered.iter().zip(masks) {
        for (&v, &mv) in f.data().iter().zip(m.data()) {
            if mv > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() {
        return Err(MetricsError::EmptyInput("no in-mask pixels in sweep".into()));
    }
    Ok((lo, hi))
}

fn dice_at(tau: f32, filtered: &Tensor, label: &Tensor, mask: &Tensor) -> f64 {
    let mut inter = 0u64;
    let mut total = 0u64;
    for ((&v, &lv), &mv) in filtered.data().iter().zip(label.data()).zip(mask.data()) {
        let pred = mv > 0.0 && v >= tau;
        let pos = lv > 0.0;
        inter += (pred && pos) as u64;
        total += pred as u64 + pos as u64;
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

fn sweep_grid(lo: f32, hi: f32, n: usize) -> impl Iterator<Item = f32> {
    let step = if n > 1 { (hi as f64 - lo as f64) / (n as f64 - 1.0) } else { 0.0 };
    (0..n).map(move |i| (lo as f64 + step * i as f64) as f32)
}

/// Best mean dice over the dataset achievable with one global threshold,
/// swept over `n_thresholds` evenly spaced points spanning the pooled
/// in-mask score range. `filtered`, `labels`, `masks` index the same samples.
pub fn best_dice_dataset(
    filtered: &[&Tensor],
    labels: &[&Tensor],
    masks: &[&Tensor],
    n_thresholds: usize,
) -> Result<f64, MetricsError> {
    if filtered.is_empty() || filtered.len() != labels.len() || filtered.len() != masks.len() {
        return Err(MetricsError::EmptyInput("best_dice sample slices disagree".into()));
    }
    if n_thresholds < 2 {
        return Err(MetricsError::Config("threshold sweep needs at least 2 points".into()));
    }
    let (lo, hi) = pooled_range(filtered, masks)?;
    let mut best = f64::NEG_INFINITY;
    for tau in sweep_grid(lo, hi, n_thresholds) {
        let mean: f64 = filtered
            .iter()
            .zip(labels)
            .zip(masks)
            .map(|((f, l), m)| dice_at(tau, f, l, m))
            .sum::<f64>()
            / filtered.len() as f64;
        best = best.max(mean);
    }
    Ok(best)
}

/// Per-sample variant: each sample picks its own best threshold over its own
/// in-mask score range. Reported as the mean of those per-sample maxima.
pub fn best_dice_per_sample(
    filtered: &[&Tensor],
    labels: &[&Tensor],
    masks: &[&Tensor],
    n_thresholds: usize,
) -> Result<f64, MetricsError> {
    if filtered.is_empty() || filtered.len() != labels.len() || filtered.len() != masks.len() {
        return Err(MetricsError::EmptyInput("best_dice sample slices disagree".into()));
    }
    let mut sum = 0.0;
    for ((f, l), m) in filtered.iter().zip(labels).zip(masks) {
        sum += best_dice_sample(f, l, m, n_thresholds)?;
    }
    Ok(sum / filtered.len() as f64)
}

pub fn best_dice_sample(
    filtered: &Tensor,
    label: &Tensor,
    mask: &Tensor,
    n_thresholds: usize,
) -> Result<f64, MetricsError> {
    if n_thresholds < 2 {
        return Err(MetricsError::Config("threshold sweep needs at least 2 points".into()));
    }
    let (lo, hi) = pooled_range(&[filtered], &[mask])?;
    let mut best = f64::NEG_INFINITY;
    for tau in sweep_grid(lo, hi, n_thresholds) {
        best = best.max(dice_at(tau, filtered, label, mask));
    }
    Ok(best)
}

fn class_counts(labels: &[bool]) -> Result<(f64, f64), MetricsError> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((pos as f64, neg as f64))
}

fn descending_order(scores: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve by trapezoidal integration, processing tied
/// scores as one group (equivalent to the midrank Mann-Whitney statistic).
pub fn auroc(scores: &[f32], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(MetricsError::EmptyInput("auroc wants matched non-empty slices".into()));
    }
    let (n_pos, n_neg) = class_counts(labels)?;
    let idx = descending_order(scores);
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let (mut prev_tp, mut prev_fp) = (0.0f64, 0.0f64);
    let mut area = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area / (n_pos * n_neg))
}

/// Area under the precision-recall curve by step-wise summation: precision
/// is sampled after each tied-score group and weighted by the recall gain.
pub fn auprc(scores: &[f32], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(MetricsError::EmptyInput("auprc wants matched non-empty slices".into()));
    }
    let (n_pos, _) = class_counts(labels)?;
    let idx = descending_order(scores);
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut prev_recall = 0.0f64;
    let mut ap = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / n_pos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}
