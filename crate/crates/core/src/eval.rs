//! AUC and per-user AUC over prediction records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::error::{Error, Result};
use crate::recommender::PredictionRecord;

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auc needs both label classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
    // sum of 1-based average ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserAuc {
    pub value: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Mean per-user AUC over users with both label classes.
pub fn uauc(records: &[PredictionRecord]) -> Result<UserAuc> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("no records".into()));
    }
    let mut by_user: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for r in records {
        let e = by_user.entry(r.user.as_str()).or_default();
        e.0.push(r.prob);
        e.1.push(r.label);
    }
    let (mut total, mut evaluated, mut skipped) = (0.0, 0, 0);
    for (scores, labels) in by_user.values() {
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            skipped += 1;
            continue;
        }
        total += auc(scores, labels)?;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::UndefinedMetric("no user has both label classes".into()));
    }
    Ok(UserAuc {
        value: total / evaluated as f64,
        evaluated,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub uauc: f64,
    pub n_pairs: usize,
    pub n_users_evaluated: usize,
    pub n_users_skipped: usize,
    pub config_digest: String,
    pub seed: u64,
}

pub fn evaluate(records: &[PredictionRecord], config_digest: &str, seed: u64) -> Result<EvalReport> {
    let scores: Vec<f64> = records.iter().map(|r| r.prob).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
    let user = uauc(records)?;
    Ok(EvalReport {
        auc: auc(&scores, &labels)?,
        uauc: user.value,
        n_pairs: records.len(),
        n_users_evaluated: user.evaluated,
        n_users_skipped: user.skipped,
        config_digest: config_digest.to_string(),
        seed,
    })
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    fn rec(user: &str, prob: f64, label: bool) -> PredictionRecord {
        PredictionRecord {
            user: user.into(),
            item: format!("{prob}"),
            ci_users: vec![],
            prompt: String::new(),
            prob,
            label,
        }
    }

    #[test]
    fn worked_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(auc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn uauc_examples() {
        let one = [rec("a", 0.9, true), rec("a", 0.1, false)];
        assert_eq!(uauc(&one).unwrap().value, 1.0);
        let two = [
            rec("a", 0.9, true),
            rec("a", 0.1, false),
            rec("b", 0.5, true),
            rec("b", 0.5, false),
            rec("c", 0.7, true),
        ];
        let u = uauc(&two).unwrap();
        assert_eq!((u.value, u.evaluated, u.skipped), (0.75, 2, 1));
        assert!(matches!(uauc(&[rec("c", 0.7, true)]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn report_has_exactly_the_documented_keys() {
        let recs = [rec("a", 0.9, true), rec("a", 0.1, false)];
        let r = evaluate(&recs, "abc", 7).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(
            keys,
            vec!["auc", "config_digest", "n_pairs", "n_users_evaluated", "n_users_skipped", "seed", "uauc"]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_pairwise_and_complements(seed in any::<u64>(), n in 2usize..120) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((a - pairwise(&scores, &labels)).abs() < 1e-12);
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 3.0).collect();
            prop_assert!((auc(&cubed, &labels).unwrap() - a).abs() < 1e-12);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let tie_free: Vec<f64> = (0..n).map(|i| scores[i] + i as f64 * 1e-6).collect();
            prop_assert!((auc(&tie_free, &labels).unwrap() + auc(&tie_free, &flipped).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
