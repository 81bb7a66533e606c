//! Confusion matrices, per-class metrics, and per-user evaluation.

use crate::attack::AdversarialBatch;
use crate::error::Error;
use crate::features::{FeatureVector, LabeledDataset};
use crate::forest::FederatedForest;
use crate::seeding::derive_seed;
use crate::types::TrafficClass;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Confusion counts: `counts[t][p]` is rows of true class `t`
/// predicted as class `p` (indices into `classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    /// Class list, in model order.
    pub classes: Vec<TrafficClass>,
    /// Row-major counts, true class by predicted class.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Total rows counted.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Rows on the diagonal.
    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Evaluates a model on labeled rows.
///
/// Every row label must appear in the model's class list; rows of a
/// class the model cannot name would otherwise vanish from the counts.
pub fn confusion(model: &FederatedForest, test: &LabeledDataset) -> Result<ConfusionMatrix, Error> {
    confusion_of_rows(model, &test.rows)
}

/// Evaluates a model on a bare row slice.
pub fn confusion_of_rows(
    model: &FederatedForest,
    rows: &[FeatureVector],
) -> Result<ConfusionMatrix, Error> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no rows to evaluate"));
    }
    let n = model.classes.len();
    let mut counts = vec![vec![0u64; n]; n];
    for row in rows {
        let t = model
            .classes
            .iter()
            .position(|&c| c == row.label)
            .ok_or_else(|| {
                Error::ClassMismatch(format!("test label {} unknown to the model", row.label))
            })?;
        let p = model.predict_index(&row.values);
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: model.classes.clone(),
        counts,
    })
}

/// One class's precision/recall/F1 breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    /// The class.
    pub class: TrafficClass,
    /// True rows of this class.
    pub support: u64,
    /// Correctly claimed rows.
    pub tp: u64,
    /// Rows of other classes claimed as this one.
    pub fp: u64,
    /// Rows of this class claimed as another.
    pub fn_count: u64,
    /// `tp / (tp + fp)`; 0 when undefined.
    pub precision: f64,
    /// `tp / (tp + fn)`; 0 when undefined.
    pub recall: f64,
    /// Harmonic mean of precision and recall; 0 when undefined.
    pub f1: f64,
    /// True when any of the ratios above hit a 0/0 and were zeroed.
    pub degenerate: bool,
}

/// Full evaluation summary for one model on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// The underlying confusion matrix.
    pub matrix: ConfusionMatrix,
    /// Per-class breakdown, in class-list order.
    pub per_class: Vec<ClassMetrics>,
    /// Diagonal fraction.
    pub accuracy: f64,
    /// Mean precision over classes with support.
    pub macro_precision: f64,
    /// Mean recall over classes with support.
    pub macro_recall: f64,
    /// Mean F1 over classes with support.
    pub macro_f1: f64,
}

/// Derives all metrics from a confusion matrix.
///
/// Macro averages run over classes with nonzero support so that a
/// class absent from the test set does not drag the mean to zero;
/// its per-class entry is still present and flagged degenerate.
pub fn metrics(matrix: &ConfusionMatrix) -> MetricsReport {
    let n = matrix.classes.len();
    let total = matrix.total();
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = matrix.counts[c][c];
        let support: u64 = matrix.counts[c].iter().sum();
        let fn_count = support - tp;
        let fp: u64 = (0..n).filter(|&r| r != c).map(|r| matrix.counts[r][c]).sum();
        let mut degenerate = false;
        let mut ratio = |num: u64, den: u64| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            degenerate = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            class: matrix.classes[c],
            support,
            tp,
            fp,
            fn_count,
            precision,
            recall,
            f1,
            degenerate,
        });
    }
    let supported: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let macro_of = |f: fn(&ClassMetrics) -> f64| {
        if supported.is_empty() {
            0.0
        } else {
            supported.iter().map(|m| f(m)).sum::<f64>() / supported.len() as f64
        }
    };
    let macro_precision = macro_of(|m| m.precision);
    let macro_recall = macro_of(|m| m.recall);
    let macro_f1 = macro_of(|m| m.f1);
    drop(supported);
    MetricsReport {
        matrix: matrix.clone(),
        per_class,
        accuracy: if total == 0 {
            0.0
        } else {
            matrix.correct() as f64 / total as f64
        },
        macro_precision,
        macro_recall,
        macro_f1,
    }
}

/// Renders a report as plain text.
pub fn render_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "rows {} accuracy {:.4}", report.matrix.total(), report.accuracy).unwrap();
    out.push_str("confusion (rows true, columns predicted):\n");
    let names: Vec<&str> = report.matrix.classes.iter().map(|c| c.name()).collect();
    writeln!(out, "{:>16} {}", "", names.join(" ")).unwrap();
    for (c, row) in report.matrix.counts.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&names)
            .map(|(v, n)| format!("{v:>width$}", width = n.len()))
            .collect();
        writeln!(out, "{:>16} {}", names[c], cells.join(" ")).unwrap();
    }
    for m in &report.per_class {
        writeln!(
            out,
            "class {} support {} precision {:.4} recall {:.4} f1 {:.4}{}",
            m.class.name(),
            m.support,
            m.precision,
            m.recall,
            m.f1,
            if m.degenerate { " (degenerate)" } else { "" }
        )
        .unwrap();
    }
    writeln!(
        out,
        "macro precision {:.4} recall {:.4} f1 {:.4}",
        report.macro_precision, report.macro_recall, report.macro_f1
    )
    .unwrap();
    out
}

/// Per-user evaluation: every user sees a disjoint slice of benign
/// traffic plus a disjoint slice of each adversarial batch.
#[derive(Debug, Clone)]
pub struct PerUserEval {
    /// One report per user.
    pub users: Vec<MetricsReport>,
    /// Mean accuracy across users.
    pub mean_accuracy: f64,
    /// Mean macro F1 across users.
    pub mean_macro_f1: f64,
}

/// Splits `n` items into `users` near-equal contiguous chunk sizes.
fn chunk_sizes(n: usize, users: usize) -> Vec<usize> {
    let base = n / users;
    let extra = n % users;
    (0..users).map(|u| base + usize::from(u < extra)).collect()
}

/// Evaluates the model from the viewpoint of `n_users` vehicles, each
/// holding disjoint shuffled shares of benign rows and of every
/// adversarial batch's perturbed rows.
///
/// Ground truth for perturbed rows follows the same asymmetry as
/// detection_rate: a model whose class set contains Adversarial is
/// expected to call them Adversarial; any other model is expected to
/// recover the original class.
pub fn per_user_eval(
    model: &FederatedForest,
    benign: &LabeledDataset,
    batches: &[&AdversarialBatch],
    n_users: usize,
    seed: u64,
) -> Result<PerUserEval, Error> {
    if n_users == 0 {
        return Err(Error::InvalidInput("need at least one user".into()));
    }
    if benign.len() < n_users {
        return Err(Error::InvalidInput(format!(
            "{} benign rows cannot cover {} users",
            benign.len(),
            n_users
        )));
    }
    for (b, batch) in batches.iter().enumerate() {
        if batch.perturbed.len() < n_users {
            return Err(Error::InvalidInput(format!(
                "batch {b} has {} rows, fewer than {} users",
                batch.perturbed.len(),
                n_users
            )));
        }
    }

    let knows_adversarial = model.classes.contains(&TrafficClass::Adversarial);
    let mut per_user_rows: Vec<Vec<FeatureVector>> = vec![Vec::new(); n_users];
    let mut deal = |rows: &[FeatureVector], stream: &str, relabel: Option<TrafficClass>| {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
        order.shuffle(&mut rng);
        let mut cursor = 0;
        for (u, size) in chunk_sizes(rows.len(), n_users).into_iter().enumerate() {
            for &i in &order[cursor..cursor + size] {
                let mut row = rows[i].clone();
                if let Some(label) = relabel {
                    row.label = label;
                }
                per_user_rows[u].push(row);
            }
            cursor += size;
        }
    };
    deal(&benign.rows, "users/benign", None);
    let batch_truth = knows_adversarial.then_some(TrafficClass::Adversarial);
    for (b, batch) in batches.iter().enumerate() {
        deal(&batch.perturbed, &format!("users/batch/{b}"), batch_truth);
    }

    let users: Vec<MetricsReport> = per_user_rows
        .iter()
        .map(|rows| Ok(metrics(&confusion_of_rows(model, rows)?)))
        .collect::<Result<_, Error>>()?;
    let mean_accuracy = users.iter().map(|u| u.accuracy).sum::<f64>() / n_users as f64;
    let mean_macro_f1 = users.iter().map(|u| u.macro_f1).sum::<f64>() / n_users as f64;
    Ok(PerUserEval {
        users,
        mean_accuracy,
        mean_macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn matrix(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        let classes = TrafficClass::ALL[..counts.len()].to_vec();
        ConfusionMatrix { classes, counts }
    }

    #[test]
    fn metrics_match_hand_computation() {
        // True AttackFree: 8 right, 2 to DoS. True DoS: 1 wrong, 9 right.
        let report = metrics(&matrix(vec![vec![8, 2], vec![1, 9]]));
        assert_relative_eq!(report.accuracy, 17.0 / 20.0);
        let af = &report.per_class[0];
        assert_eq!((af.tp, af.fp, af.fn_count, af.support), (8, 1, 2, 10));
        assert_relative_eq!(af.precision, 8.0 / 9.0);
        assert_relative_eq!(af.recall, 0.8);
        let expect_f1 = 2.0 * (8.0 / 9.0) * 0.8 / (8.0 / 9.0 + 0.8);
        assert_relative_eq!(af.f1, expect_f1);
        assert!(!af.degenerate);
        let dos = &report.per_class[1];
        assert_relative_eq!(dos.precision, 9.0 / 11.0);
        assert_relative_eq!(dos.recall, 0.9);
        assert_relative_eq!(
            report.macro_f1,
            (af.f1 + dos.f1) / 2.0
        );
    }

    #[test]
    fn perfect_prediction_scores_one_everywhere() {
        let report = metrics(&matrix(vec![vec![5, 0], vec![0, 7]]));
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_precision, 1.0);
        assert_eq!(report.macro_recall, 1.0);
        assert_eq!(report.macro_f1, 1.0);
    }

    #[test]
    fn zero_support_class_is_degenerate_and_skipped_in_macro() {
        // Third class never appears in truth and is never predicted.
        let report = metrics(&matrix(vec![
            vec![5, 0, 0],
            vec![0, 5, 0],
            vec![0, 0, 0],
        ]));
        let ghost = &report.per_class[2];
        assert!(ghost.degenerate);
        assert_eq!((ghost.precision, ghost.recall, ghost.f1), (0.0, 0.0, 0.0));
        // Macro is over the two supported classes only.
        assert_eq!(report.macro_f1, 1.0);
    }

    #[test]
    fn never_predicted_class_zeroes_without_nan() {
        // Second class exists in truth but is never predicted.
        let report = metrics(&matrix(vec![vec![5, 0], vec![3, 0]]));
        let missed = &report.per_class[1];
        assert!(missed.degenerate);
        assert_eq!(missed.f1, 0.0);
        assert!(report.macro_f1.is_finite());
        // Supported classes still average: (f1_a + 0) / 2.
        let af = &report.per_class[0];
        assert_relative_eq!(report.macro_f1, af.f1 / 2.0);
    }

    #[test]
    fn chunk_sizes_cover_all_items_evenly() {
        assert_eq!(chunk_sizes(10, 3), vec![4, 3, 3]);
        assert_eq!(chunk_sizes(9, 3), vec![3, 3, 3]);
        assert_eq!(chunk_sizes(2, 2), vec![1, 1]);
        let sizes = chunk_sizes(103, 7);
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn render_report_is_stable_text() {
        let report = metrics(&matrix(vec![vec![8, 2], vec![1, 9]]));
        let text = render_report(&report);
        assert!(text.contains("accuracy 0.8500"));
        assert!(text.contains("class AttackFree"));
        assert!(text.contains("macro precision"));
        assert_eq!(text, render_report(&report));
    }
}
