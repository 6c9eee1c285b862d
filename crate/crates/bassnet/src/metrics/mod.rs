//! Evaluation statistics: confusion matrices, one-vs-rest reductions,
//! precision/recall/F with micro and macro averaging, Cohen's kappa,
//! and the combined report.

pub mod map;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// C x C count table, `count(t, p)` = samples of true class `t`
/// predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<ConfusionMatrix> {
        if num_classes == 0 {
            return Err(Error::config("confusion matrix needs at least one class"));
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            names: (0..num_classes).map(|i| format!("class {}", i)).collect(),
        })
    }

    pub fn from_pairs(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
        if truth.len() != pred.len() {
            return Err(Error::data(format!(
                "{} truth labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(num_classes)?;
        for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
            cm.record(t, p).map_err(|e| Error::data(format!("sample {}: {}", i, e)))?;
        }
        Ok(cm)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<ConfusionMatrix> {
        let mut cm = ConfusionMatrix::new(rows.len())?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != rows.len() {
                return Err(Error::data(format!(
                    "confusion row {} has {} entries, expected {}",
                    t,
                    row.len(),
                    rows.len()
                )));
            }
            for (p, &n) in row.iter().enumerate() {
                cm.counts[t * cm.num_classes + p] = n;
            }
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.num_classes || pred >= self.num_classes {
            return Err(Error::data(format!(
                "class pair ({}, {}) outside [0, {})",
                truth, pred, self.num_classes
            )));
        }
        self.counts[truth * self.num_classes + pred] += 1;
        Ok(())
    }

    pub fn set_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.num_classes {
            return Err(Error::config(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.names = names;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.count(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.num_classes).map(|p| self.count(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.num_classes).map(|t| self.count(t, pred)).sum()
    }
}

/// One-vs-rest reduction of a confusion matrix for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
}

pub fn per_class_binary(cm: &ConfusionMatrix, class: usize) -> Result<BinaryCounts> {
    if class >= cm.num_classes() {
        return Err(Error::config(format!(
            "class {} outside [0, {})",
            class,
            cm.num_classes()
        )));
    }
    let tp = cm.count(class, class);
    let fp = cm.col_sum(class) - tp;
    let fnn = cm.row_sum(class) - tp;
    let tn = cm.total() - tp - fp - fnn;
    Ok(BinaryCounts {
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fnn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfValues {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    // 0/0 is defined as 0 so degenerate classes stay finite
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision TP/(TP+FP), recall TP/(TP+FN), F = 2TP/(2TP+FP+FN).
pub fn prf(tp: u64, fp: u64, fnn: u64) -> PrfValues {
    PrfValues {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fnn),
        f_score: ratio(2 * tp, 2 * tp + fp + fnn),
    }
}

/// Micro aggregates the binary counts over classes before applying the
/// metric; macro averages the per-class metric values over all C
/// classes, absent ones included.
pub fn micro_macro(cm: &ConfusionMatrix) -> Result<(PrfValues, PrfValues)> {
    let c = cm.num_classes();
    let mut tp = 0;
    let mut fp = 0;
    let mut fnn = 0;
    let mut sums = PrfValues {
        precision: 0.0,
        recall: 0.0,
        f_score: 0.0,
    };
    for class in 0..c {
        let b = per_class_binary(cm, class)?;
        tp += b.true_positive;
        fp += b.false_positive;
        fnn += b.false_negative;
        let v = prf(b.true_positive, b.false_positive, b.false_negative);
        sums.precision += v.precision;
        sums.recall += v.recall;
        sums.f_score += v.f_score;
    }
    let macro_values = PrfValues {
        precision: sums.precision / c as f64,
        recall: sums.recall / c as f64,
        f_score: sums.f_score / c as f64,
    };
    Ok((prf(tp, fp, fnn), macro_values))
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::data("no samples evaluated"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Cohen's kappa (p0 - pe) / (1 - pe) with pe from the marginal
/// products. The degenerate pe = 1 case (all mass in one diagonal
/// cell) is defined as 1.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::data("kappa undefined for an empty confusion matrix"));
    }
    let total2 = (total as u128) * (total as u128);
    let marginal: u128 = (0..cm.num_classes())
        .map(|c| cm.row_sum(c) as u128 * cm.col_sum(c) as u128)
        .sum();
    if marginal == total2 {
        return if cm.trace() == total {
            Ok(1.0)
        } else {
            Err(Error::numeric("kappa undefined: chance agreement is 1"))
        };
    }
    let p0 = cm.trace() as f64 / total as f64;
    let pe = marginal as f64 / total2 as f64;
    Ok((p0 - pe) / (1.0 - pe))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub support: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassReport>,
    pub overall_accuracy: f64,
    pub micro: PrfValues,
    #[serde(rename = "macro")]
    pub macro_avg: PrfValues,
    pub kappa: f64,
    pub total_samples: u64,
}

pub fn metrics_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let oa = overall_accuracy(cm)?;
    let (micro, macro_avg) = micro_macro(cm)?;
    let kappa = kappa(cm)?;
    let classes = (0..cm.num_classes())
        .map(|c| {
            let b = per_class_binary(cm, c)?;
            let v = prf(b.true_positive, b.false_positive, b.false_negative);
            Ok(ClassReport {
                name: cm.names()[c].clone(),
                support: cm.row_sum(c),
                // class-specific accuracy is the recall of the class
                accuracy: v.recall,
                precision: v.precision,
                recall: v.recall,
                f_score: v.f_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        classes,
        overall_accuracy: oa,
        micro,
        macro_avg,
        kappa,
        total_samples: cm.total(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::data(format!("report: {}", e)))
    }

    /// Aligned plain-text table: one row per class, then the aggregate
    /// block.
    pub fn to_table(&self) -> String {
        let name_width = self
            .classes
            .iter()
            .map(|c| c.name.len())
            .chain(["class".len()].into_iter())
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_width$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>8}\n",
            "class", "support", "accuracy", "precision", "recall", "f_score"
        ));
        for c in &self.classes {
            out.push_str(&format!(
                "{:<name_width$}  {:>8}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}\n",
                c.name, c.support, c.accuracy, c.precision, c.recall, c.f_score
            ));
        }
        out.push('\n');
        for (label, value) in [
            ("overall_accuracy", self.overall_accuracy),
            ("micro_precision", self.micro.precision),
            ("micro_recall", self.micro.recall),
            ("micro_f_score", self.micro.f_score),
            ("macro_precision", self.macro_avg.precision),
            ("macro_recall", self.macro_avg.recall),
            ("macro_f_score", self.macro_avg.f_score),
            ("kappa", self.kappa),
        ] {
            out.push_str(&format!("{:<17} {:>8.4}\n", label, value));
        }
        out.push_str(&format!("{:<17} {:>8}\n", "total_samples", self.total_samples));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Expand a matrix into explicit (truth, pred) pairs and recount
    /// everything the slow way.
    fn brute_force(cm: &ConfusionMatrix) -> (Vec<BinaryCounts>, PrfValues, PrfValues, f64, f64) {
        let c = cm.num_classes();
        let mut pairs = Vec::new();
        for t in 0..c {
            for p in 0..c {
                for _ in 0..cm.count(t, p) {
                    pairs.push((t, p));
                }
            }
        }
        let total = pairs.len() as f64;
        let mut per_class = Vec::new();
        for class in 0..c {
            let tp = pairs.iter().filter(|&&(t, p)| t == class && p == class).count() as u64;
            let fp = pairs.iter().filter(|&&(t, p)| t != class && p == class).count() as u64;
            let fnn = pairs.iter().filter(|&&(t, p)| t == class && p != class).count() as u64;
            let tn = pairs.iter().filter(|&&(t, p)| t != class && p != class).count() as u64;
            per_class.push(BinaryCounts {
                true_positive: tp,
                false_positive: fp,
                true_negative: tn,
                false_negative: fnn,
            });
        }
        let micro = prf(
            per_class.iter().map(|b| b.true_positive).sum(),
            per_class.iter().map(|b| b.false_positive).sum(),
            per_class.iter().map(|b| b.false_negative).sum(),
        );
        let mut macro_avg = PrfValues {
            precision: 0.0,
            recall: 0.0,
            f_score: 0.0,
        };
        for b in &per_class {
            let v = prf(b.true_positive, b.false_positive, b.false_negative);
            macro_avg.precision += v.precision / c as f64;
            macro_avg.recall += v.recall / c as f64;
            macro_avg.f_score += v.f_score / c as f64;
        }
        let agree = pairs.iter().filter(|&&(t, p)| t == p).count() as f64;
        let p0 = agree / total;
        // integer products stay exact in f64 at these sizes
        let mut pe_num = 0.0;
        for class in 0..c {
            let row = pairs.iter().filter(|&&(t, _)| t == class).count() as f64;
            let col = pairs.iter().filter(|&&(_, p)| p == class).count() as f64;
            pe_num += row * col;
        }
        let pe = pe_num / (total * total);
        let kappa = if pe == 1.0 {
            // same convention as the implementation
            if p0 == 1.0 {
                1.0
            } else {
                f64::NAN
            }
        } else {
            (p0 - pe) / (1.0 - pe)
        };
        (per_class, micro, macro_avg, p0, kappa)
    }

    fn random_matrix(rng: &mut Rng, max_classes: usize) -> ConfusionMatrix {
        let c = 1 + rng.next_below(max_classes);
        let mut cm = ConfusionMatrix::new(c).unwrap();
        // bias toward the diagonal so matrices resemble real evaluations
        for t in 0..c {
            for p in 0..c {
                let n = if t == p {
                    rng.next_below(40)
                } else {
                    rng.next_below(6)
                };
                for _ in 0..n {
                    cm.record(t, p).unwrap();
                }
            }
        }
        cm
    }

    #[test]
    fn confusion_counts_hand_example() {
        let cm = ConfusionMatrix::from_pairs(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 0), 0);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn confusion_is_order_independent() {
        let a = ConfusionMatrix::from_pairs(&[0, 1, 2, 1], &[0, 1, 1, 0], 3).unwrap();
        let b = ConfusionMatrix::from_pairs(&[1, 2, 1, 0], &[0, 1, 1, 0], 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_lists_give_a_zero_matrix() {
        let cm = ConfusionMatrix::from_pairs(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let err = ConfusionMatrix::from_pairs(&[0, 2], &[0, 0], 2).unwrap_err();
        assert!(err.to_string().contains("sample 1"), "{}", err);
        assert!(ConfusionMatrix::from_pairs(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn binary_reduction_hand_example() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 2]]).unwrap();
        let b = per_class_binary(&cm, 1).unwrap();
        assert_eq!(b.true_positive, 2);
        assert_eq!(b.false_positive, 1);
        assert_eq!(b.false_negative, 0);
        assert_eq!(b.true_negative, 1);
        assert!(per_class_binary(&cm, 2).is_err());
    }

    #[test]
    fn single_class_reduction_has_no_negatives() {
        let cm = ConfusionMatrix::from_rows(&[vec![7]]).unwrap();
        let b = per_class_binary(&cm, 0).unwrap();
        assert_eq!(b.true_negative, 0);
        assert_eq!(b.false_positive, 0);
    }

    #[test]
    fn prf_hand_values() {
        let v = prf(2, 1, 0);
        assert_eq!(v.precision, 2.0 / 3.0);
        assert_eq!(v.recall, 1.0);
        assert_eq!(v.f_score, 0.8);
        assert_eq!(prf(0, 0, 0), PrfValues { precision: 0.0, recall: 0.0, f_score: 0.0 });
        assert_eq!(prf(5, 0, 0), PrfValues { precision: 1.0, recall: 1.0, f_score: 1.0 });
    }

    #[test]
    fn diagonal_matrix_scores_ones_everywhere() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0], vec![0, 4]]).unwrap();
        let (micro, macro_avg) = micro_macro(&cm).unwrap();
        for v in [micro, macro_avg] {
            assert_eq!(v.precision, 1.0);
            assert_eq!(v.recall, 1.0);
            assert_eq!(v.f_score, 1.0);
        }
        assert_eq!(kappa(&cm).unwrap(), 1.0);
        assert_eq!(overall_accuracy(&cm).unwrap(), 1.0);
    }

    #[test]
    fn kappa_hand_values() {
        let even = ConfusionMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(kappa(&even).unwrap(), 0.0);
        let flipped = ConfusionMatrix::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(kappa(&flipped).unwrap(), -1.0);
    }

    #[test]
    fn kappa_degenerate_cases() {
        let one_cell = ConfusionMatrix::from_rows(&[vec![9, 0], vec![0, 0]]).unwrap();
        assert_eq!(kappa(&one_cell).unwrap(), 1.0);
        let empty = ConfusionMatrix::new(2).unwrap();
        assert!(kappa(&empty).is_err());
        // all mass in one off-diagonal cell: pe = 0, kappa = 0
        let off = ConfusionMatrix::from_rows(&[vec![0, 5], vec![0, 0]]).unwrap();
        assert_eq!(kappa(&off).unwrap(), 0.0);
    }

    #[test]
    fn kappa_is_scale_invariant() {
        let base = ConfusionMatrix::from_rows(&[vec![8, 2, 0], vec![1, 6, 1], vec![0, 3, 9]]).unwrap();
        let scaled = ConfusionMatrix::from_rows(&[
            vec![56, 14, 0],
            vec![7, 42, 7],
            vec![0, 21, 63],
        ])
        .unwrap();
        assert!((kappa(&base).unwrap() - kappa(&scaled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn random_matrices_match_brute_force() {
        let mut rng = Rng::new(416);
        let mut nonempty = 0;
        while nonempty < 200 {
            let cm = random_matrix(&mut rng, 16);
            if cm.total() == 0 {
                continue;
            }
            nonempty += 1;
            let (bf_binary, bf_micro, bf_macro, bf_p0, bf_kappa) = brute_force(&cm);
            for (class, expected) in bf_binary.iter().enumerate() {
                assert_eq!(per_class_binary(&cm, class).unwrap(), *expected);
            }
            let (micro, macro_avg) = micro_macro(&cm).unwrap();
            for (a, b) in [
                (micro.precision, bf_micro.precision),
                (micro.recall, bf_micro.recall),
                (micro.f_score, bf_micro.f_score),
                (macro_avg.precision, bf_macro.precision),
                (macro_avg.recall, bf_macro.recall),
                (macro_avg.f_score, bf_macro.f_score),
            ] {
                assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
            }
            let oa = overall_accuracy(&cm).unwrap();
            assert!((oa - bf_p0).abs() < 1e-12);
            // single-label identities
            assert!((micro.precision - oa).abs() < 1e-12);
            assert!((micro.recall - oa).abs() < 1e-12);
            assert!((micro.f_score - oa).abs() < 1e-12);
            let tp_sum: u64 = bf_binary.iter().map(|b| b.true_positive).sum();
            let fp_sum: u64 = bf_binary.iter().map(|b| b.false_positive).sum();
            let fn_sum: u64 = bf_binary.iter().map(|b| b.false_negative).sum();
            assert_eq!(tp_sum, cm.trace());
            assert_eq!(fp_sum, cm.total() - cm.trace());
            assert_eq!(fn_sum, cm.total() - cm.trace());
            match kappa(&cm) {
                Ok(k) => assert!((k - bf_kappa).abs() < 1e-12, "{} vs {}", k, bf_kappa),
                Err(_) => assert!(bf_kappa.is_nan()),
            }
            // per-class accuracy = recall, asserted through the report
            let report = metrics_report(&cm).unwrap();
            for row in &report.classes {
                assert_eq!(row.accuracy, row.recall);
            }
        }
    }

    /// A 9-class matrix built to have overall accuracy exactly 0.9677,
    /// mirroring the published micro row; micro P/R/F must coincide
    /// with it.
    #[test]
    fn published_style_micro_row_is_consistent() {
        let mut rows = vec![vec![0u64; 9]; 9];
        let diag = [1400, 1200, 1100, 1150, 1050, 1000, 900, 877, 1000];
        assert_eq!(diag.iter().sum::<u64>(), 9677);
        for (c, &n) in diag.iter().enumerate() {
            rows[c][c] = n;
        }
        // distribute 323 errors off-diagonal
        let errs = [50, 45, 40, 40, 38, 35, 30, 25, 20];
        assert_eq!(errs.iter().sum::<u64>(), 323);
        for (c, &n) in errs.iter().enumerate() {
            rows[c][(c + 1) % 9] += n;
        }
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        assert_eq!(cm.total(), 10_000);
        let report = metrics_report(&cm).unwrap();
        assert!((report.overall_accuracy - 0.9677).abs() < 1e-12);
        assert!((report.micro.precision - 0.9677).abs() < 1e-12);
        assert!((report.micro.recall - 0.9677).abs() < 1e-12);
        assert!((report.micro.f_score - 0.9677).abs() < 1e-12);
        assert!(report.kappa > 0.9 && report.kappa < 1.0);
        let table = report.to_table();
        assert!(table.contains("overall_accuracy    0.9677"), "{}", table);
    }

    #[test]
    fn report_serializes_and_renders() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 1], vec![0, 3]]).unwrap();
        let report = metrics_report(&cm).unwrap();
        let json = report.to_json().unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(value["macro"]["precision"].is_number());
        let table = report.to_table();
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("class"));
        assert!(header.contains("precision"));
        assert_eq!(lines.next().unwrap().split_whitespace().next(), Some("class"));
        assert!(table.contains("kappa"));
        assert!(table.contains("total_samples"));
    }

    #[test]
    fn report_requires_samples() {
        let cm = ConfusionMatrix::new(3).unwrap();
        assert!(metrics_report(&cm).is_err());
    }
}
