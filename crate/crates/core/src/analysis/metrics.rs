use super::MetricError;

fn check_lengths(a: usize, b: usize, min: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::Invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a < min {
        return Err(MetricError::Invalid(format!("need at least {min} entries, got {a}")));
    }
    Ok(())
}

fn check_labels(labels: &[f64]) -> Result<(), MetricError> {
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(y) => Err(MetricError::Invalid(format!("label {y} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve, `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, from the rank sum
/// of the positives.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_lengths(scores.len(), labels.len(), 1)?;
    check_labels(labels)?;
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("single class"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1.0).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: `Σ (Rₖ − Rₖ₋₁) Pₖ` over descending score thresholds,
/// tied scores forming one threshold.
pub fn auprc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_lengths(scores.len(), labels.len(), 1)?;
    check_labels(labels)?;
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    if pos == 0 {
        return Err(MetricError::Undefined("no positives"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            tp += (labels[order[j]] == 1.0) as usize;
            j += 1;
        }
        seen += j - i;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), target.len(), 1)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_lengths(x.len(), y.len(), 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined("zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_lengths(x.len(), y.len(), 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}
