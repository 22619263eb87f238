//! Confusion-matrix accounting and the accuracy / precision / recall / F1
//! evaluation metrics, plus per-family accuracy breakdowns.

use crate::label::{Family, Label};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("truth has {truth} entries but predictions have {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("metric undefined: {0} denominator is zero")]
    DegenerateDenominator(&'static str),
}

/// TP/TN/FP/FN counts under an explicitly declared positive class.
///
/// Standard orientation: TP counts records whose truth and prediction both
/// equal the positive class. Evaluating with the opposite positive class
/// swaps TP with TN and FP with FN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub positive_class: Label,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::DegenerateDenominator("accuracy"));
        }
        Ok((self.tp + self.tn) as f64 / total as f64)
    }

    pub fn precision(&self) -> Result<f64, MetricsError> {
        let den = self.tp + self.fp;
        if den == 0 {
            return Err(MetricsError::DegenerateDenominator("precision"));
        }
        Ok(self.tp as f64 / den as f64)
    }

    pub fn recall(&self) -> Result<f64, MetricsError> {
        let den = self.tp + self.fn_;
        if den == 0 {
            return Err(MetricsError::DegenerateDenominator("recall"));
        }
        Ok(self.tp as f64 / den as f64)
    }

    pub fn f1(&self) -> Result<f64, MetricsError> {
        f1_score(self.precision()?, self.recall()?)
    }
}

/// F1 = 2PR / (P + R).
pub fn f1_score(precision: f64, recall: f64) -> Result<f64, MetricsError> {
    if precision + recall <= 0.0 {
        return Err(MetricsError::DegenerateDenominator("f1"));
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Tally a confusion matrix from parallel truth/prediction lists.
pub fn confusion(
    truth: &[Label],
    predicted: &[Label],
    positive_class: Label,
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cm = ConfusionMatrix {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
        positive_class,
    };
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t == positive_class, p == positive_class) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Fraction of correct predictions per family tag.
pub fn per_family_accuracy(
    records: &[(Family, Label, Label)],
) -> Result<BTreeMap<Family, f64>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut totals: BTreeMap<Family, (u64, u64)> = BTreeMap::new();
    for &(family, truth, predicted) in records {
        let entry = totals.entry(family).or_insert((0, 0));
        entry.1 += 1;
        if truth == predicted {
            entry.0 += 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(family, (correct, total))| (family, correct as f64 / total as f64))
        .collect())
}

/// Evaluation report rows: the four headline metrics, per-family accuracy,
/// and an aggregate line in A,P,R,F1 column order.
pub fn report_csv(cm: &ConfusionMatrix, families: &BTreeMap<Family, f64>) -> Result<String, MetricsError> {
    let a = cm.accuracy()?;
    let p = cm.precision()?;
    let r = cm.recall()?;
    let f1 = cm.f1()?;
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("accuracy,{a:.6}\n"));
    out.push_str(&format!("precision,{p:.6}\n"));
    out.push_str(&format!("recall,{r:.6}\n"));
    out.push_str(&format!("f1,{f1:.6}\n"));
    for (family, acc) in families {
        out.push_str(&format!("family,{family},accuracy,{acc:.6}\n"));
    }
    out.push_str(&format!("aggregate,{a:.6},{p:.6},{r:.6},{f1:.6}\n"));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use Label::{Benign as B, Malicious as M};

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[M, M, B, B], &[M, B, B, M], M).unwrap();
        assert_eq!((cm.tp, cm.fn_, cm.tn, cm.fp), (1, 1, 1, 1));
    }

    #[test]
    fn confusion_perfect_predictions() {
        let cm = confusion(&[M, B, M], &[M, B, M], M).unwrap();
        assert_eq!(cm.fp, 0);
        assert_eq!(cm.fn_, 0);
        assert_eq!(cm.accuracy().unwrap(), 1.0);
        assert_eq!(cm.precision().unwrap(), 1.0);
        assert_eq!(cm.recall().unwrap(), 1.0);
        assert_eq!(cm.f1().unwrap(), 1.0);
    }

    #[test]
    fn confusion_input_errors() {
        assert_eq!(
            confusion(&[M, B], &[M], M),
            Err(MetricsError::LengthMismatch { truth: 2, predicted: 1 })
        );
        assert_eq!(confusion(&[], &[], M), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn metric_formulas() {
        let cm = ConfusionMatrix { tp: 3, fp: 1, fn_: 2, tn: 4, positive_class: M };
        assert!((cm.accuracy().unwrap() - 0.7).abs() < 1e-12);
        assert!((cm.precision().unwrap() - 0.75).abs() < 1e-12);
        assert!((cm.recall().unwrap() - 0.6).abs() < 1e-12);
        assert!((cm.f1().unwrap() - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-12);
    }

    #[test]
    fn f1_consistent_with_reported_aggregate() {
        let f1 = f1_score(0.9167, 0.9103).unwrap();
        assert!((f1 - 0.9135).abs() < 1e-4, "got {f1}");
    }

    #[test]
    fn degenerate_denominators_are_typed() {
        let cm = ConfusionMatrix { tp: 0, fp: 0, fn_: 0, tn: 5, positive_class: M };
        assert_eq!(cm.precision(), Err(MetricsError::DegenerateDenominator("precision")));
        assert_eq!(cm.recall(), Err(MetricsError::DegenerateDenominator("recall")));
        assert_eq!(cm.f1(), Err(MetricsError::DegenerateDenominator("precision")));
        assert_eq!(f1_score(0.0, 0.0), Err(MetricsError::DegenerateDenominator("f1")));
    }

    #[test]
    fn swapping_positive_class_swaps_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let truth: Vec<Label> = (0..200).map(|_| if rng.random::<bool>() { M } else { B }).collect();
        let pred: Vec<Label> = (0..200).map(|_| if rng.random::<bool>() { M } else { B }).collect();
        let cm_m = confusion(&truth, &pred, M).unwrap();
        let cm_b = confusion(&truth, &pred, B).unwrap();
        assert_eq!(cm_m.tp, cm_b.tn);
        assert_eq!(cm_m.tn, cm_b.tp);
        assert_eq!(cm_m.fp, cm_b.fn_);
        assert_eq!(cm_m.fn_, cm_b.fp);
        assert_eq!(cm_m.accuracy().unwrap(), cm_b.accuracy().unwrap());
    }

    #[test]
    fn f1_bounded_by_precision_and_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let cm = ConfusionMatrix {
                tp: rng.random_range(0..50),
                tn: rng.random_range(0..50),
                fp: rng.random_range(0..50),
                fn_: rng.random_range(0..50),
                positive_class: M,
            };
            if let (Ok(p), Ok(r)) = (cm.precision(), cm.recall()) {
                if let Ok(f1) = cm.f1() {
                    assert!(f1 <= p.max(r) + 1e-12);
                    assert!(f1 >= p.min(r) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn metrics_scale_invariant() {
        let base = ConfusionMatrix { tp: 6, tn: 9, fp: 2, fn_: 3, positive_class: M };
        for k in [2u64, 5, 17] {
            let scaled = ConfusionMatrix {
                tp: base.tp * k,
                tn: base.tn * k,
                fp: base.fp * k,
                fn_: base.fn_ * k,
                positive_class: M,
            };
            assert!((base.accuracy().unwrap() - scaled.accuracy().unwrap()).abs() < 1e-12);
            assert!((base.precision().unwrap() - scaled.precision().unwrap()).abs() < 1e-12);
            assert!((base.recall().unwrap() - scaled.recall().unwrap()).abs() < 1e-12);
            assert!((base.f1().unwrap() - scaled.f1().unwrap()).abs() < 1e-12);
        }
    }

    /// Accuracy equals the prevalence-weighted mean of per-class recalls,
    /// checked against an independent counting oracle on random vectors.
    #[test]
    fn accuracy_is_prevalence_weighted_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.random_range(2..40usize);
            let truth: Vec<Label> = (0..n).map(|_| if rng.random::<bool>() { M } else { B }).collect();
            let pred: Vec<Label> = (0..n).map(|_| if rng.random::<bool>() { M } else { B }).collect();
            let cm = confusion(&truth, &pred, M).unwrap();

            // Oracle: count by direct scan, no matrix involved.
            let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
            let m_total = truth.iter().filter(|&&t| t == M).count();
            let b_total = n - m_total;
            let m_correct = truth.iter().zip(&pred).filter(|(&t, &p)| t == M && p == M).count();
            let b_correct = truth.iter().zip(&pred).filter(|(&t, &p)| t == B && p == B).count();

            let acc = cm.accuracy().unwrap();
            assert!((acc - correct as f64 / n as f64).abs() < 1e-12);
            let weighted = (m_correct + b_correct) as f64 / n as f64;
            assert!((acc - weighted).abs() < 1e-12);
            if m_total > 0 {
                assert_eq!(cm.recall().unwrap_or(0.0), m_correct as f64 / m_total as f64);
            }
            let _ = b_total;
        }
    }

    #[test]
    fn per_family_counts() {
        let records = vec![
            (Family::Ddos, M, M),
            (Family::Ddos, M, M),
            (Family::Ddos, M, B),
            (Family::Ddos, M, M),
            (Family::Benign, B, B),
        ];
        let acc = per_family_accuracy(&records).unwrap();
        assert_eq!(acc[&Family::Ddos], 0.75);
        assert_eq!(acc[&Family::Benign], 1.0);
        assert_eq!(acc.len(), 2);
    }

    #[test]
    fn per_family_single_family_all_correct() {
        let records = vec![(Family::Trojan, M, M); 5];
        let acc = per_family_accuracy(&records).unwrap();
        assert_eq!(acc[&Family::Trojan], 1.0);
    }

    #[test]
    fn per_family_empty_is_error() {
        assert_eq!(per_family_accuracy(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn report_has_fixed_column_order() {
        let cm = confusion(&[M, M, B, B], &[M, M, B, M], M).unwrap();
        let fams = per_family_accuracy(&[(Family::Ddos, M, M), (Family::Benign, B, B)]).unwrap();
        let csv = report_csv(&cm, &fams).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,value");
        assert!(lines[1].starts_with("accuracy,"));
        assert!(lines[2].starts_with("precision,"));
        assert!(lines[3].starts_with("recall,"));
        assert!(lines[4].starts_with("f1,"));
        assert!(lines.iter().any(|l| l.starts_with("family,ddos,accuracy,")));
        let agg = lines.last().unwrap();
        let a: f64 = cm.accuracy().unwrap();
        assert!(agg.starts_with(&format!("aggregate,{a:.6}")));
    }
}
