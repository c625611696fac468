//! Similarity of mismatched values and size-weighted aggregates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MismatchRecord, Snapshot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("weights sum to zero over {0} non-empty items")]
    ZeroWeightSum(usize),
}

/// Multiset overlap of two byte strings: `2·M / (|a| + |b|)` with `M` the
/// number of bytes the two have in common regardless of order. Two empty
/// inputs are identical (1.0).
pub fn similarity_ratio(a: &[u8], b: &[u8]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let mut counts = [0i64; 256];
    for &x in b {
        counts[x as usize] += 1;
    }
    let mut matches = 0u64;
    for &x in a {
        let c = &mut counts[x as usize];
        if *c > 0 {
            *c -= 1;
            matches += 1;
        }
    }
    2.0 * matches as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedRatio {
    pub s: f64,
    pub r: f64,
}

impl WeightedRatio {
    pub fn new(s: f64, r: f64) -> Self {
        WeightedRatio { s, r }
    }
}

fn weight_sum(items: &[WeightedRatio]) -> Result<f64, SimError> {
    let total: f64 = items.iter().map(|i| i.s).sum();
    if total == 0.0 {
        return Err(SimError::ZeroWeightSum(items.len()));
    }
    Ok(total)
}

/// `Σ s·r / Σ s`; 0.0 for no items.
pub fn weighted_mean_ratio(items: &[WeightedRatio]) -> Result<f64, SimError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let total = weight_sum(items)?;
    Ok(items.iter().map(|i| i.s * i.r).sum::<f64>() / total)
}

/// `sqrt(Σ s·(r − r̄)² / Σ s)`; 0.0 for no items.
pub fn weighted_std_ratio(items: &[WeightedRatio]) -> Result<f64, SimError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let total = weight_sum(items)?;
    let mean = weighted_mean_ratio(items)?;
    let var = items.iter().map(|i| i.s * (i.r - mean).powi(2)).sum::<f64>() / total;
    Ok(var.sqrt())
}

/// Which value's length is used as the weight of a mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSide {
    #[default]
    Pre,
    Backup,
}

impl std::str::FromStr for WeightSide {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pre" => Ok(WeightSide::Pre),
            "backup" => Ok(WeightSide::Backup),
            other => Err(format!("weight side must be pre or backup, not {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSimilarity {
    pub r_w_mean: f64,
    pub r_w_std: f64,
    /// Records left without `r` because a value could not be loaded.
    pub excluded: Vec<String>,
    pub zero_weight: bool,
}

/// Loads both value versions of every record, fills `r` and `s`, and
/// returns the weighted aggregates. Records whose values cannot be loaded
/// keep `r = None` and do not contribute.
pub fn aggregate_run_similarity(
    records: &mut [MismatchRecord],
    pre: &Snapshot,
    backup: &Snapshot,
    side: WeightSide,
) -> RunSimilarity {
    let mut out = RunSimilarity::default();
    let mut items = Vec::with_capacity(records.len());
    for rec in records.iter_mut() {
        let load = |snap: &Snapshot| snap.get(&rec.name).map(|e| e.load());
        match (load(pre), load(backup)) {
            (Some(Ok(a)), Some(Ok(b))) => {
                rec.r = Some(similarity_ratio(&a, &b));
                rec.s = match side {
                    WeightSide::Pre => a.len() as u64,
                    WeightSide::Backup => b.len() as u64,
                };
                items.push(WeightedRatio::new(rec.s as f64, rec.r.unwrap()));
            }
            _ => {
                log::warn!("value of {} no longer loadable; left out of the similarity", rec.name);
                rec.r = None;
                out.excluded.push(rec.name.clone());
            }
        }
    }
    match (weighted_mean_ratio(&items), weighted_std_ratio(&items)) {
        (Ok(m), Ok(s)) => {
            out.r_w_mean = m;
            out.r_w_std = s;
        }
        _ => {
            log::warn!("all mismatch weights are zero; similarity reported as 0");
            out.zero_weight = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(similarity_ratio(b"abc", b"abc"), 1.0);
        assert_eq!(similarity_ratio(b"abcd", b"bcde"), 0.75);
        assert_eq!(similarity_ratio(b"", b""), 1.0);
        assert_eq!(similarity_ratio(b"", b"x"), 0.0);
        assert_eq!(similarity_ratio(b"aab", b"abb"), 2.0 * 2.0 / 6.0);
    }

    #[test]
    fn weighted_examples() {
        let one = [WeightedRatio::new(5.0, 0.7951)];
        assert_eq!(weighted_mean_ratio(&one).unwrap(), 0.7951);
        assert_eq!(weighted_std_ratio(&one).unwrap(), 0.0);
        let two = [WeightedRatio::new(1.0, 1.0), WeightedRatio::new(1.0, 0.0)];
        assert!((weighted_mean_ratio(&two).unwrap() - 0.5).abs() < 1e-12);
        assert!((weighted_std_ratio(&two).unwrap() - 0.5).abs() < 1e-12);
        let skew = [WeightedRatio::new(3.0, 1.0), WeightedRatio::new(1.0, 0.0)];
        assert!((weighted_std_ratio(&skew).unwrap() - 0.4330).abs() < 1e-4);
        assert_eq!(weighted_mean_ratio(&[]).unwrap(), 0.0);
        assert_eq!(weighted_std_ratio(&[]).unwrap(), 0.0);
        assert_eq!(
            weighted_mean_ratio(&[WeightedRatio::new(0.0, 0.5)]),
            Err(SimError::ZeroWeightSum(1))
        );
    }
}
