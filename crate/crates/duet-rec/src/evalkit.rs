//! Click-prediction metrics — AUC, MAE, RMSE, F1 — and the evaluation
//! report written next to checkpoints.

use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub user: u32,
    pub item: u32,
    pub label: u8,
    pub score: f64,
}

fn validate(examples: &[ScoredExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Argument("metrics need at least one example".into()));
    }
    for e in examples {
        if !e.score.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite score {} for (user {}, item {})",
                e.score, e.user, e.item
            )));
        }
        if e.label > 1 {
            return Err(Error::Argument(format!("label must be 0/1, got {}", e.label)));
        }
    }
    Ok(())
}

/// Mann–Whitney AUC with the 0.5-per-tied-pair convention, via average
/// ranks: (Σ ranks of positives − P(P+1)/2) / (P·N).
pub fn auc(examples: &[ScoredExample]) -> Result<f64> {
    validate(examples)?;
    let n = examples.len();
    let positives = examples.iter().filter(|e| e.label == 1).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Argument(
            "AUC is undefined on single-class examples".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| examples[a].score.partial_cmp(&examples[b].score).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && examples[idx[j + 1]].score == examples[idx[i]].score {
            j += 1;
        }
        // 1-based average rank of the tie group [i, j].
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if examples[k].label == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Mean |score − label|.
pub fn mae(examples: &[ScoredExample]) -> Result<f64> {
    validate(examples)?;
    let total: f64 = examples
        .iter()
        .map(|e| (e.score - e.label as f64).abs())
        .sum();
    Ok(total / examples.len() as f64)
}

/// √(mean (score − label)²).
pub fn rmse(examples: &[ScoredExample]) -> Result<f64> {
    validate(examples)?;
    let total: f64 = examples
        .iter()
        .map(|e| (e.score - e.label as f64).powi(2))
        .sum();
    Ok((total / examples.len() as f64).sqrt())
}

/// F1 of the classifier `score ≥ threshold`, as 2tp/(2tp+fp+fn); 0 when the
/// denominator vanishes (no true positives and nothing to trade off).
pub fn f1(examples: &[ScoredExample], threshold: f64) -> Result<f64> {
    validate(examples)?;
    if !threshold.is_finite() {
        return Err(Error::Argument(format!("bad threshold {threshold}")));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for e in examples {
        let predicted = e.score >= threshold;
        match (predicted, e.label) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 1) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub auc: f64,
    pub mae: f64,
    pub rmse: f64,
    pub f1: f64,
    pub n_examples: usize,
    pub seed: u64,
    pub config_hash: String,
    pub timestamp_unix: u64,
}

/// All four metrics over scored test examples; `threshold` is the F1
/// decision boundary (0.5 unless the run config says otherwise).
pub fn report_from_scores(
    examples: &[ScoredExample],
    threshold: f64,
    seed: u64,
    config_hash: &str,
) -> Result<MetricsReport> {
    let report = MetricsReport {
        auc: auc(examples)?,
        mae: mae(examples)?,
        rmse: rmse(examples)?,
        f1: f1(examples, threshold)?,
        n_examples: examples.len(),
        seed,
        config_hash: config_hash.to_string(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    debug_assert!(report.rmse >= report.mae);
    Ok(report)
}

impl MetricsReport {
    /// Fixed key order, 6-decimal metrics; the timestamp is the only
    /// run-varying field, on its own line for easy exclusion in diffs.
    pub fn to_json(&self) -> String {
        format!(
            "{{\n  \"auc\": {:.6},\n  \"mae\": {:.6},\n  \"rmse\": {:.6},\n  \"f1\": {:.6},\n  \"n_examples\": {},\n  \"seed\": {},\n  \"config_hash\": \"{}\",\n  \"timestamp_unix\": {}\n}}\n",
            self.auc,
            self.mae,
            self.rmse,
            self.f1,
            self.n_examples,
            self.seed,
            self.config_hash,
            self.timestamp_unix
        )
    }

    /// One `metric,value` row per metric, for plotting pipelines.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nauc,{:.6}\nmae,{:.6}\nrmse,{:.6}\nf1,{:.6}\n",
            self.auc, self.mae, self.rmse, self.f1
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::seeds::substream;

    fn ex(label: u8, score: f64) -> ScoredExample {
        ScoredExample {
            user: 0,
            item: 0,
            label,
            score,
        }
    }

    fn scored(labels: &[u8], scores: &[f64]) -> Vec<ScoredExample> {
        labels
            .iter()
            .zip(scores)
            .map(|(&l, &s)| ex(l, s))
            .collect()
    }

    /// (wins + half-ties) / (P·N) over every positive–negative pair.
    fn brute_force_auc(examples: &[ScoredExample]) -> f64 {
        let pos: Vec<f64> = examples
            .iter()
            .filter(|e| e.label == 1)
            .map(|e| e.score)
            .collect();
        let neg: Vec<f64> = examples
            .iter()
            .filter(|e| e.label == 0)
            .map(|e| e.score)
            .collect();
        let mut num = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    num += 1.0;
                } else if p == n {
                    num += 0.5;
                }
            }
        }
        num / (pos.len() as f64 * neg.len() as f64)
    }

    #[test]
    fn auc_frozen_and_degenerate_cases() {
        let e = scored(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]);
        assert_eq!(auc(&e).unwrap(), 0.75);
        // Perfect separation and all-ties.
        let e = scored(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]);
        assert_eq!(auc(&e).unwrap(), 1.0);
        let e = scored(&[0, 1, 0, 1], &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(auc(&e).unwrap(), 0.5);
        // Single class, empty, and non-finite inputs are rejected.
        assert!(auc(&scored(&[1, 1], &[0.1, 0.2])).is_err());
        assert!(auc(&[]).is_err());
        assert!(auc(&scored(&[0, 1], &[f64::NAN, 0.2])).is_err());
    }

    #[test]
    fn auc_matches_brute_force_exactly() {
        let mut rng = substream(101, "auc-oracle");
        for _ in 0..100 {
            let n = rng.random_range(2..=200);
            let mut examples: Vec<ScoredExample> = (0..n)
                .map(|_| {
                    // Quantized scores force plenty of exact ties.
                    let q: u32 = rng.random_range(0..=8);
                    ex(rng.random_range(0..2u8), q as f64 / 8.0)
                })
                .collect();
            examples[0].label = 1;
            examples[1].label = 0;
            assert_eq!(auc(&examples).unwrap(), brute_force_auc(&examples));
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = substream(102, "auc-mono");
        for _ in 0..20 {
            let n = rng.random_range(2..=60);
            let mut examples: Vec<ScoredExample> = (0..n)
                .map(|_| {
                    let q: u32 = rng.random_range(0..=16);
                    ex(rng.random_range(0..2u8), q as f64 / 16.0)
                })
                .collect();
            examples[0].label = 1;
            examples[1].label = 0;
            let base = auc(&examples).unwrap();
            let transformed: Vec<ScoredExample> = examples
                .iter()
                .map(|e| ex(e.label, 2.0 * e.score + 1.0))
                .collect();
            assert_eq!(auc(&transformed).unwrap(), base);
        }
    }

    #[test]
    fn mae_and_rmse_hand_values() {
        let e = scored(&[1, 0], &[1.0, 0.0]);
        assert_eq!(mae(&e).unwrap(), 0.0);
        assert_eq!(rmse(&e).unwrap(), 0.0);
        let e = scored(&[1], &[0.3]);
        assert!((mae(&e).unwrap() - 0.7).abs() < 1e-15);
        let e = scored(&[1, 1], &[1.0, 0.0]);
        assert!((rmse(&e).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(mae(&[]).is_err());
        assert!(rmse(&[]).is_err());

        // Direct-sum oracle on a random batch, and the power-mean bound.
        let mut rng = substream(103, "err-oracle");
        let examples: Vec<ScoredExample> = (0..10)
            .map(|_| ex(rng.random_range(0..2u8), rng.random_range(0.0..1.0)))
            .collect();
        let direct: f64 = examples
            .iter()
            .map(|e| (e.score - e.label as f64).abs())
            .sum::<f64>()
            / 10.0;
        assert!((mae(&examples).unwrap() - direct).abs() < 1e-12);
        assert!(rmse(&examples).unwrap() >= mae(&examples).unwrap());
    }

    #[test]
    fn f1_hand_values_and_threshold_behavior() {
        // predictions [1,1,0,0] vs labels [1,0,1,0]: P = R = 0.5.
        let e = scored(&[1, 0, 1, 0], &[0.9, 0.8, 0.2, 0.1]);
        assert_eq!(f1(&e, 0.5).unwrap(), 0.5);
        // All correct.
        let e = scored(&[1, 0], &[0.9, 0.1]);
        assert_eq!(f1(&e, 0.5).unwrap(), 1.0);
        // No positive predictions while positives exist.
        let e = scored(&[1, 1, 0], &[0.2, 0.3, 0.1]);
        assert_eq!(f1(&e, 0.5).unwrap(), 0.0);
        // Threshold is inclusive.
        let e = scored(&[1, 0], &[0.5, 0.2]);
        assert_eq!(f1(&e, 0.5).unwrap(), 1.0);
        // Perturbations that do not cross the threshold change nothing.
        let e = scored(&[1, 0, 1, 0], &[0.9, 0.8, 0.2, 0.1]);
        let p = scored(&[1, 0, 1, 0], &[0.63, 0.51, 0.49, 0.02]);
        assert_eq!(f1(&e, 0.5).unwrap(), f1(&p, 0.5).unwrap());
    }

    #[test]
    fn report_oracle_scorers() {
        let labels: Vec<u8> = vec![1, 0, 1, 0, 1, 0];
        let oracle: Vec<ScoredExample> =
            labels.iter().map(|&l| ex(l, l as f64)).collect();
        let r = report_from_scores(&oracle, 0.5, 7, "abc").unwrap();
        assert_eq!((r.auc, r.mae, r.rmse, r.f1), (1.0, 0.0, 0.0, 1.0));
        assert_eq!(r.n_examples, 6);
        assert_eq!(r.seed, 7);

        let anti: Vec<ScoredExample> =
            labels.iter().map(|&l| ex(l, 1.0 - l as f64)).collect();
        let r = report_from_scores(&anti, 0.5, 7, "abc").unwrap();
        assert_eq!((r.auc, r.f1), (0.0, 0.0));
        assert_eq!(r.mae, 1.0);

        let constant: Vec<ScoredExample> = labels.iter().map(|&l| ex(l, 0.5)).collect();
        let r = report_from_scores(&constant, 0.5, 7, "abc").unwrap();
        assert_eq!((r.auc, r.mae, r.rmse), (0.5, 0.5, 0.5));
        assert!(r.auc >= 0.0 && r.auc <= 1.0 && r.f1 >= 0.0 && r.f1 <= 1.0);
        assert!(r.rmse >= r.mae && r.mae >= 0.0);
    }

    #[test]
    fn report_serialization_shapes() {
        let labels: Vec<u8> = vec![1, 0, 0, 1];
        let scores = [0.75, 0.25, 0.5, 0.5];
        let examples = scored(&labels, &scores);
        let mut r = report_from_scores(&examples, 0.5, 11, "deadbeef01234567").unwrap();
        r.timestamp_unix = 1_700_000_000;
        let json = r.to_json();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["config_hash"], "deadbeef01234567");
        assert_eq!(parsed["seed"], 11);
        assert_eq!(parsed["n_examples"], 4);
        assert_eq!(parsed["timestamp_unix"], 1_700_000_000);
        let auc_line = json.lines().find(|l| l.contains("\"auc\"")).unwrap();
        assert_eq!(auc_line, "  \"auc\": 0.875000,");
        // Timestamp sits alone on its line.
        assert_eq!(
            json.lines()
                .filter(|l| l.contains("timestamp_unix"))
                .count(),
            1
        );

        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,value");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("auc,0.875000"));
    }
}
