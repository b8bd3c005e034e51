//! Ranking and loss metrics: AUC, LogLoss, RMSE.
//!
//! AUC is the Mann-Whitney statistic computed by rank sum with averaged
//! ranks for ties (ties credit 0.5), in O(n log n). A quadratic
//! pair-counting oracle is exported for tests to check it against.

/// Clamp applied to probabilities before logs so LogLoss stays finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Metric values for one dataset pass.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_positive: Option<usize>,
    pub auc: Option<f64>,
    /// Set when AUC was requested but one class is empty.
    pub auc_undefined: bool,
    pub logloss: Option<f64>,
    pub rmse: Option<f64>,
}

impl MetricsReport {
    pub fn ctr(scores: &[f64], labels: &[f64]) -> Self {
        let n_positive = labels.iter().filter(|&&y| y == 1.0).count();
        let auc = auc(scores, labels);
        MetricsReport {
            n_samples: scores.len(),
            n_positive: Some(n_positive),
            auc,
            auc_undefined: auc.is_none(),
            logloss: Some(logloss(scores, labels)),
            rmse: None,
        }
    }

    pub fn regression(preds: &[f64], targets: &[f64]) -> Self {
        MetricsReport {
            n_samples: preds.len(),
            n_positive: None,
            auc: None,
            auc_undefined: false,
            logloss: None,
            rmse: Some(rmse(preds, targets)),
        }
    }

    /// Stable one-line summary, 6 decimal places.
    pub fn summary_line(&self) -> String {
        match (self.auc, self.logloss, self.rmse) {
            (_, Some(ll), None) => {
                let auc = match self.auc {
                    Some(a) => format!("{a:.6}"),
                    None => "undefined".to_string(),
                };
                format!("auc={auc}\tlogloss={ll:.6}")
            }
            (_, _, Some(r)) => format!("rmse={r:.6}"),
            _ => String::new(),
        }
    }
}

/// Probability that a random positive outscores a random negative, ties
/// half-credited. `None` when either class is empty. Panics on length
/// mismatch or NaN scores.
pub fn auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: length mismatch");
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("auc: NaN score")
    });

    // average 1-based ranks within tie blocks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let np = n_pos as f64;
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// O(n^2) pair-counting reference for [`auc`]; test oracle only.
pub fn auc_pair_counting(scores: &[f64], labels: &[f64]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: length mismatch");
    let mut concordant = 0.0;
    let mut pairs = 0.0;
    for (i, (&si, &yi)) in scores.iter().zip(labels).enumerate() {
        if yi != 1.0 {
            continue;
        }
        for (j, (&sj, &yj)) in scores.iter().zip(labels).enumerate() {
            if i == j || yj == 1.0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                concordant += 1.0;
            } else if si == sj {
                concordant += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        None
    } else {
        Some(concordant / pairs)
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`. Panics on length mismatch.
pub fn logloss(probs: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(probs.len(), labels.len(), "logloss: length mismatch");
    assert!(!probs.is_empty(), "logloss: empty input");
    let mut sum = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        sum += -y * p.ln() - (1.0 - y) * (1.0 - p).ln();
    }
    sum / probs.len() as f64
}

/// Root mean squared error. Panics on length mismatch.
pub fn rmse(preds: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(preds.len(), targets.len(), "rmse: length mismatch");
    assert!(!preds.is_empty(), "rmse: empty input");
    let mut sum = 0.0;
    for (&p, &y) in preds.iter().zip(targets) {
        sum += (p - y) * (p - y);
    }
    (sum / preds.len() as f64).sqrt()
}
