use serde::{Deserialize, Serialize};

use crate::error::{PunError, Result};

/// Counts plus precision, recall and F1 in percent. A ratio with a zero
/// denominator is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let p = ratio(tp as f64, (tp + fp) as f64);
        let r = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * p * r, p + r);
        MetricsReport {
            tp,
            fp,
            fn_,
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
        }
    }

    /// Sums counts and recomputes the ratios (micro average).
    pub fn merge(&self, other: &Self) -> Self {
        Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(PunError::arg(format!(
            "{a} predictions for {b} gold labels"
        )));
    }
    Ok(())
}

/// Positive class is label 1.
pub fn score_detection(preds: &[usize], golds: &[usize]) -> Result<MetricsReport> {
    check_lengths(preds.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in preds.iter().zip(golds) {
        if p > 1 || g > 1 {
            return Err(PunError::arg(format!(
                "labels must be 0 or 1, got {p} and {g}"
            )));
        }
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_))
}

/// Each sentence contributes its predicted token set against the gold pun
/// position (none for sentences without one): matches are true positives,
/// extra predictions false positives, a missed gold index a false negative.
pub fn score_location(preds: &[Vec<usize>], golds: &[Option<usize>]) -> Result<MetricsReport> {
    check_lengths(preds.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let mut p = p.clone();
        p.sort_unstable();
        p.dedup();
        let hit = g.is_some_and(|g| p.contains(&g));
        tp += usize::from(hit);
        fp += p.len() - usize::from(hit);
        fn_ += usize::from(g.is_some() && !hit);
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_))
}

/// Fraction of equal labels, in percent.
pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(100.0 * ratio(hits as f64, golds.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn two_thirds() {
        let r = MetricsReport::from_counts(2, 1, 1);
        for v in [r.precision, r.recall, r.f1] {
            assert_relative_eq!(v, 200.0 / 3.0, max_relative = 1e-12);
        }
        let d = score_detection(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]).unwrap();
        assert_eq!((d.tp, d.fp, d.fn_), (2, 1, 1));
    }

    #[test]
    fn all_correct() {
        let d = score_detection(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((d.precision, d.recall, d.f1), (100.0, 100.0, 100.0));
        let l = score_location(&[vec![2], vec![0]], &[Some(2), Some(0)]).unwrap();
        assert_eq!(l.f1, 100.0);
    }

    #[test]
    fn no_positive_predictions() {
        let d = score_detection(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((d.precision, d.recall, d.f1), (0.0, 0.0, 0.0));
        assert_eq!(d.fn_, 2);
        let empty = score_detection(&[], &[]).unwrap();
        assert_eq!(empty.f1, 0.0);
    }

    #[test]
    fn location_counts() {
        let l = score_location(
            &[vec![1], vec![3], vec![], vec![0, 2, 2], vec![4]],
            &[Some(1), Some(0), Some(2), Some(2), None],
        )
        .unwrap();
        // hit; miss (fp+fn); fn; hit + 1 fp; fp
        assert_eq!((l.tp, l.fp, l.fn_), (2, 3, 2));
    }

    #[test]
    fn errors() {
        assert!(score_detection(&[1], &[1, 0]).is_err());
        assert!(score_detection(&[2], &[1]).is_err());
        assert!(score_location(&[], &[None]).is_err());
    }

    #[test]
    fn json_uses_fn_key() {
        let j = serde_json::to_string(&MetricsReport::from_counts(1, 0, 0)).unwrap();
        assert!(j.contains("\"fn\":0"), "{j}");
    }

    proptest! {
        #[test]
        fn formulas_hold(tp in 0usize..1000, fp in 0usize..1000, fn_ in 0usize..1000) {
            let r = MetricsReport::from_counts(tp, fp, fn_);
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
            prop_assert!((r.precision - 100.0 * p).abs() < 1e-9);
            prop_assert!((r.recall - 100.0 * rc).abs() < 1e-9);
            prop_assert!((r.f1 - 100.0 * f).abs() < 1e-9);
            prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-9);
            prop_assert!(r.f1 >= r.precision.min(r.recall) - 1e-9);
            prop_assert!((0.0..=100.0).contains(&r.f1));
        }

        #[test]
        fn detection_matches_counts(pairs in proptest::collection::vec((0usize..2, 0usize..2), 0..200)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let r = score_detection(&p, &g).unwrap();
            let tp = pairs.iter().filter(|&&(a, b)| a == 1 && b == 1).count();
            let fp = pairs.iter().filter(|&&(a, b)| a == 1 && b == 0).count();
            let fn_ = pairs.iter().filter(|&&(a, b)| a == 0 && b == 1).count();
            prop_assert_eq!((r.tp, r.fp, r.fn_), (tp, fp, fn_));
        }
    }
}
