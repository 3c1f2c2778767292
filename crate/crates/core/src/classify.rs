//! Linear SVM, confusion-matrix metrics and leave-one-subject-out
//! cross-validation.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::transfer::Label;

pub const DEFAULT_C: f64 = 1.0;
pub const SVM_TOLERANCE: f64 = 1e-6;
pub const SVM_MAX_EPOCHS: usize = 10_000;

/// Linear decision function `w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c_param: f64,
}

impl LinearModel {
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Trained model together with its dual solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub model: LinearModel,
    pub dual: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

/// Soft-margin linear SVM with hinge loss.
///
/// The bias is learned as the weight of an extra constant-one feature, so the
/// dual is `min ½ αᵀQα − Σα` over the box `0 ≤ α ≤ C` with
/// `Q_ij = y_i y_j (x_i·x_j + 1)`. Coordinates are visited in index order
/// until the largest projected gradient is at most [`SVM_TOLERANCE`].
pub fn fit_linear_svm(x: ArrayView2<f64>, y: &[f64], c: f64) -> Result<SvmFit> {
    let (m, q) = x.dim();
    if y.len() != m {
        return Err(Error::shape(format!("{m} rows but {} labels", y.len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("labels must be -1 or +1"));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::invalid("training data contains a single class"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }

    let diag: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r) + 1.0).collect();
    let mut alpha = vec![0.0; m];
    let mut w = vec![0.0; q];
    let mut b = 0.0;
    let mut epochs = 0;
    let mut converged = false;

    while epochs < SVM_MAX_EPOCHS {
        epochs += 1;
        let mut worst: f64 = 0.0;
        for i in 0..m {
            let xi = x.row(i);
            let margin = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let g = y[i] * margin - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            worst = worst.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / diag[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(xi.iter()) {
                        *wj += step * xj;
                    }
                    b += step;
                }
            }
        }
        if worst <= SVM_TOLERANCE {
            converged = true;
            break;
        }
    }

    Ok(SvmFit {
        model: LinearModel {
            weights: w,
            bias: b,
            c_param: c,
        },
        dual: alpha,
        epochs,
        converged,
    })
}

/// Trains on `{−1, +1}` labels and returns the model.
pub fn train_linear_svm(x: ArrayView2<f64>, y: &[f64], c: f64) -> Result<LinearModel> {
    fit_linear_svm(x, y, c).map(|f| f.model)
}

/// `½ αᵀQα − Σα` for the dual solved by [`fit_linear_svm`].
pub fn svm_dual_objective(x: ArrayView2<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let (_, q) = x.dim();
    let mut w = vec![0.0; q];
    let mut b = 0.0;
    for (i, row) in x.rows().into_iter().enumerate() {
        let s = alpha[i] * y[i];
        for (wj, xj) in w.iter_mut().zip(row.iter()) {
            *wj += s * xj;
        }
        b += s;
    }
    0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b) - alpha.iter().sum::<f64>()
}

/// `sign(w·x + b)` per row, with the boundary counted as positive.
pub fn predict(model: &LinearModel, x: ArrayView2<f64>) -> Result<Vec<Label>> {
    if x.ncols() != model.weights.len() {
        return Err(Error::shape(format!(
            "model has {} weights, data has {} columns",
            model.weights.len(),
            x.ncols()
        )));
    }
    Ok(x.rows()
        .into_iter()
        .map(|r| Label::from_sign(model.decision(r)))
        .collect())
}

/// Confusion counts with the positive class as label 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn record(&mut self, truth: Label, pred: Label) {
        match (truth, pred) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
        }
    }

    pub fn metrics(self) -> Metrics {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
            confusion: self,
        }
    }
}

/// Accuracy, sensitivity and specificity. `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub confusion: Confusion,
}

impl Metrics {
    /// Rates as percentages with one decimal, `"n/a"` when undefined.
    pub fn percentages(&self) -> [String; 3] {
        [self.accuracy, self.sensitivity, self.specificity].map(format_percent)
    }

    /// `accuracy,sensitivity,specificity,tp,fn,tn,fp`; undefined rates are empty.
    pub fn csv_line(&self) -> String {
        let rate = |r: Option<f64>| r.map(|v| v.to_string()).unwrap_or_default();
        let c = self.confusion;
        format!(
            "{},{},{},{},{},{},{}",
            rate(self.accuracy),
            rate(self.sensitivity),
            rate(self.specificity),
            c.tp,
            c.fn_,
            c.tn,
            c.fp
        )
    }
}

pub const METRICS_CSV_HEADER: &str = "accuracy,sensitivity,specificity,tp,fn,tn,fp";

pub fn format_percent(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{:.1}", r * 100.0),
        None => "n/a".to_string(),
    }
}

pub fn confusion_metrics(pred: &[Label], truth: &[Label]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        c.record(t, p);
    }
    Ok(c.metrics())
}

/// Outcome of one held-out subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub held_out: String,
    pub held_out_index: usize,
    pub truth: Label,
    /// `None` when the fold could not be trained.
    pub prediction: Option<Label>,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub train_ids: Vec<String>,
}

/// Aggregated LOSO result. Invalid folds are listed but not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub metrics: Metrics,
    pub invalid_folds: usize,
    pub per_fold: Vec<FoldRecord>,
}

impl LosoReport {
    /// Checks that no fold trained on its own held-out subject.
    pub fn audit(&self) -> bool {
        self.per_fold
            .iter()
            .all(|f| !f.train_ids.iter().any(|id| *id == f.held_out))
    }
}

/// Leave-one-subject-out harness. `fold(train, test)` predicts the row at
/// `test` from the rows in `train`; it is only called when `train` holds
/// both classes. Folds run concurrently and are merged in subject order.
pub fn loso_with<F>(labels: &[Label], subject_ids: &[String], fold: F) -> Result<LosoReport>
where
    F: Fn(&[usize], usize) -> Result<Label> + Sync + Send,
{
    let m = labels.len();
    if subject_ids.len() != m {
        return Err(Error::shape("labels and subject ids differ in length"));
    }
    if m < 2 {
        return Err(Error::invalid("LOSO needs at least two subjects"));
    }
    if !labels.contains(&Label::Positive) || !labels.contains(&Label::Negative) {
        return Err(Error::invalid("LOSO needs both classes"));
    }

    let outcomes = par::map_range(m, |held| -> Result<FoldRecord> {
        let train: Vec<usize> = (0..m).filter(|&i| subject_ids[i] != subject_ids[held]).collect();
        let has_pos = train.iter().any(|&i| labels[i] == Label::Positive);
        let has_neg = train.iter().any(|&i| labels[i] == Label::Negative);
        let (prediction, note) = if has_pos && has_neg {
            (Some(fold(&train, held)?), None)
        } else {
            (None, Some("training split holds a single class".to_string()))
        };
        Ok(FoldRecord {
            held_out: subject_ids[held].clone(),
            held_out_index: held,
            truth: labels[held],
            prediction,
            valid: prediction.is_some(),
            note,
            train_ids: train.iter().map(|&i| subject_ids[i].clone()).collect(),
        })
    });

    let mut per_fold = Vec::with_capacity(m);
    let mut confusion = Confusion::default();
    let mut invalid = 0;
    for rec in outcomes {
        let rec = rec?;
        match rec.prediction {
            Some(p) => confusion.record(rec.truth, p),
            None => invalid += 1,
        }
        per_fold.push(rec);
    }
    Ok(LosoReport {
        metrics: confusion.metrics(),
        invalid_folds: invalid,
        per_fold,
    })
}

/// LOSO with a linear SVM on fixed feature rows.
pub fn loso_cv(rows: &Array2<f64>, labels: &[Label], subject_ids: &[String], c: f64) -> Result<LosoReport> {
    if rows.nrows() != labels.len() {
        return Err(Error::shape("rows and labels differ in length"));
    }
    loso_with(labels, subject_ids, |train, test| {
        let x = rows.select(ndarray::Axis(0), train);
        let y: Vec<f64> = train.iter().map(|&i| labels[i].sign()).collect();
        let model = train_linear_svm(x.view(), &y, c)?;
        Ok(Label::from_sign(model.decision(rows.row(test))))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_pair_splits_at_zero() {
        let x = array![[-1.0], [1.0]];
        let m = train_linear_svm(x.view(), &[-1.0, 1.0], 10.0).unwrap();
        assert!(m.bias.abs() < 1e-6);
        assert_eq!(predict(&m, x.view()).unwrap(), vec![Label::Negative, Label::Positive]);
    }

    #[test]
    fn boundary_is_positive() {
        let m = LinearModel {
            weights: vec![1.0, -1.0],
            bias: 0.0,
            c_param: 1.0,
        };
        assert_eq!(predict(&m, array![[2.0, 2.0]].view()).unwrap(), vec![Label::Positive]);
        assert!(predict(&m, array![[1.0]].view()).is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        let x = array![[0.0], [1.0]];
        assert!(train_linear_svm(x.view(), &[1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn table_two_arithmetic() {
        let c = Confusion {
            tp: 9,
            fn_: 1,
            tn: 10,
            fp: 0,
        };
        let m = c.metrics();
        assert_eq!(m.accuracy, Some(0.95));
        assert_eq!(m.sensitivity, Some(0.9));
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.percentages(), ["95.0", "90.0", "100.0"].map(String::from));
    }

    #[test]
    fn undefined_rates_are_none() {
        use Label::*;
        let m = confusion_metrics(&[Positive, Negative], &[Positive, Positive]).unwrap();
        assert_eq!(m.sensitivity, Some(0.5));
        assert_eq!(m.specificity, None);
        assert!(confusion_metrics(&[Positive], &[]).is_err());
        let json = serde_json::to_value(m).unwrap();
        assert!(json["specificity"].is_null());
        assert_eq!(json["confusion"]["fn"], 1);
    }

    #[test]
    fn oracle_classifier_scores_one() {
        use Label::*;
        let labels = vec![Positive, Negative, Positive, Negative];
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let r = loso_with(&labels, &ids, |_, test| Ok(labels[test])).unwrap();
        assert_eq!(r.per_fold.len(), 4);
        assert_eq!(r.metrics.accuracy, Some(1.0));
        assert!(r.audit());
    }

    #[test]
    fn degenerate_fold_is_reported() {
        use Label::*;
        let labels = vec![Positive, Negative, Negative];
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let r = loso_with(&labels, &ids, |_, test| Ok(labels[test])).unwrap();
        assert_eq!(r.invalid_folds, 1);
        assert!(!r.per_fold[0].valid);
        assert_eq!(r.metrics.confusion.total(), 2);
    }
}
