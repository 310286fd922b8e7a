//! Confusion matrices, balanced accuracy, precision / recall / F1, ROC AUC
//! and fold aggregation.
//!
//! Balanced accuracy is the mean of per-class recall. The two-class formula
//! sometimes printed as `(TP/(TP+FN) + TN/(TN+TP)) / 2` has a misprint in its
//! second term (it should be the specificity `TN/(TN+FP)`); the recall-mean
//! form used here reduces to the corrected formula for two classes and is the
//! only sensible reading for more.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn new(truths: &[usize], preds: &[usize], classes: usize) -> Result<Self> {
        if truths.len() != preds.len() {
            return Err(Error::invalid(format!(
                "{} truths but {} predictions",
                truths.len(),
                preds.len()
            )));
        }
        let mut cm = Self::zeros(classes);
        for (&t, &p) in truths.iter().zip(preds) {
            if t >= classes || p >= classes {
                return Err(Error::invalid(format!(
                    "class index ({t}, {p}) out of range for {classes} classes"
                )));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::invalid(
                "confusion counts must be a nonempty square grid",
            ));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn column_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..self.classes()).map(|c| self.counts[c][c]).sum()
    }

    /// Ground-truth classes with no samples.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.classes())
            .filter(|c| self.row_sum(*c) == 0)
            .collect()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|v| if s == 0 { 0.0 } else { *v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Elementwise sum, used to pool predictions of several models.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::invalid(
                "cannot merge confusion matrices of different sizes",
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Comma-separated grid with a header row and a leading label column.
    pub fn counts_csv(&self, labels: &[String]) -> String {
        grid_csv(
            labels,
            self.counts
                .iter()
                .map(|r| r.iter().map(u64::to_string).collect()),
        )
    }

    pub fn normalized_csv(&self, labels: &[String]) -> String {
        grid_csv(
            labels,
            self.row_normalized()
                .iter()
                .map(|r| r.iter().map(|v| format!("{v:.6}")).collect()),
        )
    }
}

fn grid_csv(labels: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = String::from("truth\\pred");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (label, row) in labels.iter().zip(rows) {
        out.push_str(label);
        for v in row {
            out.push(',');
            out.push_str(&v);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroRowPolicy {
    #[default]
    Error,
    ExcludeAndWarn,
}

pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    balanced_accuracy_with(cm, ZeroRowPolicy::Error)
}

pub fn balanced_accuracy_with(cm: &ConfusionMatrix, policy: ZeroRowPolicy) -> Result<f64> {
    let empty = cm.empty_rows();
    if !empty.is_empty() {
        match policy {
            ZeroRowPolicy::Error => {
                return Err(Error::InvalidState(format!(
                    "classes {empty:?} have no ground-truth samples"
                )))
            }
            ZeroRowPolicy::ExcludeAndWarn => {
                log::warn!("balanced accuracy excludes classes {empty:?} with no samples")
            }
        }
    }
    let recalls: Vec<f64> = (0..cm.classes())
        .filter(|c| cm.row_sum(*c) > 0)
        .map(|c| cm.get(c, c) as f64 / cm.row_sum(c) as f64)
        .collect();
    if recalls.is_empty() {
        return Err(Error::InvalidState("confusion matrix is empty".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Macro,
    #[default]
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// A denominator was zero and the score was set to 0.
    pub zero_division: bool,
}

/// One-vs-rest scores per class.
pub fn per_class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let predicted = cm.column_sum(c) as f64;
            let support = cm.row_sum(c);
            let mut zero_division = false;
            let mut ratio = |num: f64, den: f64| {
                if den == 0.0 {
                    zero_division = true;
                    0.0
                } else {
                    num / den
                }
            };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassScores {
                precision,
                recall,
                f1,
                support,
                zero_division,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: bool,
}

pub fn precision_recall_f1(
    cm: &ConfusionMatrix,
    averaging: Averaging,
) -> Result<PrecisionRecallF1> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid(
            "precision/recall of an empty confusion matrix",
        ));
    }
    let scores = per_class_scores(cm);
    let weight = |s: &ClassScores| match averaging {
        Averaging::Macro => 1.0 / scores.len() as f64,
        Averaging::Weighted => s.support as f64 / total as f64,
    };
    let mut out = PrecisionRecallF1 {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        zero_division: false,
    };
    for s in &scores {
        let w = weight(s);
        out.precision += w * s.precision;
        out.recall += w * s.recall;
        out.f1 += w * s.f1;
        out.zero_division |= s.zero_division;
    }
    if out.zero_division {
        log::warn!("some per-class precision/recall/F1 values were undefined and set to 0");
    }
    Ok(out)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks in O(n log n).
pub fn binary_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid(
            "AUC needs at least one positive and one negative",
        ));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|s| (*s, true))
        .chain(negatives.iter().map(|s| (*s, false)))
        .collect();
    if all.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::invalid("AUC scores must be finite"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let p = positives.len() as f64;
    let n = negatives.len() as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub macro_auc: f64,
    /// `None` for classes without both positives and negatives.
    pub per_class: Vec<Option<f64>>,
}

impl AucResult {
    pub fn excluded(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|c| self.per_class[*c].is_none())
            .collect()
    }
}

/// Macro one-vs-rest AUC over the columns of `scores`.
pub fn auc_roc(scores: &[Vec<f64>], truths: &[usize], classes: usize) -> Result<AucResult> {
    if scores.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} score rows but {} truths",
            scores.len(),
            truths.len()
        )));
    }
    for (row, &t) in scores.iter().zip(truths) {
        if row.len() != classes || t >= classes {
            return Err(Error::invalid(format!(
                "score row of length {} or truth {t} does not fit {classes} classes",
                row.len()
            )));
        }
    }
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let (pos, neg): (Vec<_>, Vec<_>) = scores
            .iter()
            .zip(truths)
            .map(|(row, &t)| (row[c], t == c))
            .partition(|x| x.1);
        if pos.is_empty() || neg.is_empty() {
            log::warn!("class {c} lacks positives or negatives; excluded from AUC");
            per_class.push(None);
            continue;
        }
        let pos: Vec<f64> = pos.into_iter().map(|x| x.0).collect();
        let neg: Vec<f64> = neg.into_iter().map(|x| x.0).collect();
        per_class.push(Some(binary_auc(&pos, &neg)?));
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::InvalidState(
            "no class has both positives and negatives".into(),
        ));
    }
    Ok(AucResult {
        macro_auc: valid.iter().sum::<f64>() / valid.len() as f64,
        per_class,
    })
}

/// Arithmetic mean and sample standard deviation (divisor `k - 1`).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    let k = values.len();
    if k < 2 {
        return Err(Error::invalid(format!(
            "aggregation needs at least 2 values, got {k}"
        )));
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    Ok((mean, var.sqrt()))
}

/// `"0.6457 ± 0.0430"`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

/// Scores of one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub bacc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
}

impl MetricSet {
    /// Named values in report order; absent AUC is omitted.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("bacc", self.bacc),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("macro_precision", self.macro_precision),
            ("macro_recall", self.macro_recall),
            ("macro_f1", self.macro_f1),
        ];
        if let Some(a) = self.auc {
            v.push(("auc", a));
        }
        v
    }
}

/// Every metric from predictions and probability rows.
pub fn compute_metrics(
    truths: &[usize],
    preds: &[usize],
    probs: &[Vec<f64>],
    classes: usize,
    policy: ZeroRowPolicy,
) -> Result<(MetricSet, ConfusionMatrix)> {
    let cm = ConfusionMatrix::new(truths, preds, classes)?;
    let weighted = precision_recall_f1(&cm, Averaging::Weighted)?;
    let macro_ = precision_recall_f1(&cm, Averaging::Macro)?;
    let auc = match auc_roc(probs, truths, classes) {
        Ok(a) => Some(a.macro_auc),
        Err(Error::InvalidState(msg)) => {
            log::warn!("AUC undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok((
        MetricSet {
            bacc: balanced_accuracy_with(&cm, policy)?,
            precision: weighted.precision,
            recall: weighted.recall,
            f1: weighted.f1,
            macro_precision: macro_.precision,
            macro_recall: macro_.recall,
            macro_f1: macro_.f1,
            auc,
        },
        cm,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
    /// `"mean ± std"` strings.
    pub formatted: BTreeMap<String, String>,
}

/// Mean and sample std of each metric across `sets`. A metric missing from
/// any set (AUC) is left out.
pub fn aggregate_folds(sets: &[MetricSet]) -> Result<Aggregate> {
    if sets.len() < 2 {
        return Err(Error::invalid(format!(
            "aggregation needs at least 2 metric sets, got {}",
            sets.len()
        )));
    }
    let mut agg = Aggregate {
        mean: BTreeMap::new(),
        std: BTreeMap::new(),
        formatted: BTreeMap::new(),
    };
    for (name, _) in sets[0].named() {
        let values: Vec<f64> = sets
            .iter()
            .filter_map(|s| s.named().into_iter().find(|(n, _)| *n == name).map(|x| x.1))
            .collect();
        if values.len() != sets.len() {
            continue;
        }
        let (m, s) = mean_std(&values)?;
        agg.mean.insert(name.to_string(), m);
        agg.std.insert(name.to_string(), s);
        agg.formatted
            .insert(name.to_string(), format_mean_std(m, s));
    }
    Ok(agg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub samples: usize,
    pub metrics: MetricSet,
    pub confusion: ConfusionMatrix,
}

/// Per-model results, their aggregate and the pooled confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub models: Vec<ModelReport>,
    pub aggregate: Option<Aggregate>,
    pub pooled_confusion: ConfusionMatrix,
    pub pooled_row_normalized: Vec<Vec<f64>>,
}

impl EvalReport {
    /// Aggregates when there are at least two models.
    pub fn new(classes: Vec<String>, models: Vec<ModelReport>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("report needs at least one model"));
        }
        let mut pooled = ConfusionMatrix::zeros(classes.len());
        for m in &models {
            pooled.merge(&m.confusion)?;
        }
        let aggregate = if models.len() >= 2 {
            let sets: Vec<MetricSet> = models.iter().map(|m| m.metrics.clone()).collect();
            Some(aggregate_folds(&sets)?)
        } else {
            None
        };
        Ok(Self {
            classes,
            pooled_row_normalized: pooled.row_normalized(),
            pooled_confusion: pooled,
            models,
            aggregate,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::malformed("report", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::malformed("report", e))
    }

    /// Plain-text table: one row per model, then `mean ± std`.
    pub fn summary(&self) -> String {
        let names: Vec<&str> = self.models[0].metrics.named().iter().map(|x| x.0).collect();
        let mut out = format!("{:<12}", "model");
        for n in &names {
            out.push_str(&format!(" {n:>17}"));
        }
        out.push('\n');
        for m in &self.models {
            out.push_str(&format!("{:<12}", m.name));
            for (_, v) in m.metrics.named() {
                out.push_str(&format!(" {v:>17.4}"));
            }
            out.push('\n');
        }
        if let Some(agg) = &self.aggregate {
            out.push_str(&format!("{:<12}", "mean ± std"));
            for n in &names {
                let cell = agg.formatted.get(*n).map(String::as_str).unwrap_or("-");
                out.push_str(&format!(" {cell:>17}"));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.json`, `summary.txt` and confusion grids into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("report.json", self.to_json()?)?;
        write("summary.txt", self.summary())?;
        write(
            "confusion_pooled_counts.csv",
            self.pooled_confusion.counts_csv(&self.classes),
        )?;
        write(
            "confusion_pooled_normalized.csv",
            self.pooled_confusion.normalized_csv(&self.classes),
        )?;
        for m in &self.models {
            write(
                &format!("confusion_{}_counts.csv", m.name),
                m.confusion.counts_csv(&self.classes),
            )?;
            write(
                &format!("confusion_{}_normalized.csv", m.name),
                m.confusion.normalized_csv(&self.classes),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let perfect = ConfusionMatrix::new(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(
            perfect.counts(),
            [vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]
        );
        for (c, row) in perfect.row_normalized().iter().enumerate() {
            assert_eq!(row[c], 1.0);
        }
        let m = ConfusionMatrix::new(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.counts(), [vec![1, 1], vec![0, 2]]);
        let empty = ConfusionMatrix::new(&[], &[], 3).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.empty_rows(), vec![0, 1, 2]);
        assert!(ConfusionMatrix::new(&[3], &[0], 3).is_err());
        assert!(ConfusionMatrix::new(&[0], &[], 3).is_err());
    }

    #[test]
    fn bacc_examples() {
        assert_eq!(balanced_accuracy(&cm(&[&[5, 0], &[0, 7]])).unwrap(), 1.0);
        assert_abs_diff_eq!(
            balanced_accuracy(&cm(&[&[8, 2], &[4, 6]])).unwrap(),
            0.7,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            balanced_accuracy(&cm(&[&[10, 0], &[5, 0]])).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bacc_zero_row_policy() {
        let m = cm(&[&[3, 1, 0], &[0, 0, 0], &[0, 1, 1]]);
        assert!(matches!(balanced_accuracy(&m), Err(Error::InvalidState(_))));
        let v = balanced_accuracy_with(&m, ZeroRowPolicy::ExcludeAndWarn).unwrap();
        assert_abs_diff_eq!(v, (0.75 + 0.5) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn precision_examples() {
        let m = cm(&[&[8, 2], &[4, 6]]);
        let p = precision_recall_f1(&m, Averaging::Macro).unwrap();
        assert_abs_diff_eq!(p.precision, (8.0 / 12.0 + 6.0 / 8.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.precision, 0.7083, epsilon = 1e-4);
        let w = precision_recall_f1(&m, Averaging::Weighted).unwrap();
        assert_abs_diff_eq!(w.recall, 14.0 / 20.0, epsilon = 1e-12);
        let perfect = cm(&[&[3, 0], &[0, 4]]);
        for avg in [Averaging::Macro, Averaging::Weighted] {
            let s = precision_recall_f1(&perfect, avg).unwrap();
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        assert!(precision_recall_f1(&ConfusionMatrix::zeros(2), Averaging::Macro).is_err());
    }

    #[test]
    fn zero_division_flagged() {
        let s = precision_recall_f1(&cm(&[&[4, 0], &[3, 0]]), Averaging::Macro).unwrap();
        assert!(s.zero_division);
    }

    #[test]
    fn auc_examples() {
        assert_abs_diff_eq!(
            binary_auc(&[0.9, 0.4], &[0.5, 0.1]).unwrap(),
            0.75,
            epsilon = 1e-12
        );
        assert_eq!(binary_auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(binary_auc(&[0.1, 0.2], &[0.9, 0.8]).unwrap(), 0.0);
        assert_eq!(binary_auc(&[0.5], &[0.5]).unwrap(), 0.5);
        let scores = vec![
            vec![0.9, 0.1],
            vec![0.6, 0.4],
            vec![0.5, 0.5],
            vec![0.1, 0.9],
        ];
        let r = auc_roc(&scores, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(r.macro_auc, 1.0);
    }

    #[test]
    fn auc_excludes_degenerate_classes() {
        let scores = vec![vec![0.7, 0.2, 0.1], vec![0.2, 0.7, 0.1]];
        let r = auc_roc(&scores, &[0, 1], 3).unwrap();
        assert_eq!(r.excluded(), vec![2]);
        assert_eq!(r.macro_auc, 1.0);
        assert!(matches!(
            auc_roc(&[vec![0.5, 0.5]], &[0], 2),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn aggregation_examples() {
        let (m, s) = mean_std(&[0.6, 0.7]).unwrap();
        assert_abs_diff_eq!(m, 0.65, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.070711, epsilon = 1e-6);
        assert_eq!(mean_std(&[0.3, 0.3, 0.3]).unwrap().1, 0.0);
        assert!(mean_std(&[0.3]).is_err());
        assert_eq!(format_mean_std(0.64567, 0.04301), "0.6457 ± 0.0430");
    }

    #[test]
    fn report_pools_confusions() {
        let set = |b: f64| MetricSet {
            bacc: b,
            precision: b,
            recall: b,
            f1: b,
            macro_precision: b,
            macro_recall: b,
            macro_f1: b,
            auc: Some(b),
        };
        let models = vec![
            ModelReport {
                name: "fold0".into(),
                samples: 3,
                metrics: set(0.6),
                confusion: cm(&[&[1, 0], &[1, 1]]),
            },
            ModelReport {
                name: "fold1".into(),
                samples: 3,
                metrics: set(0.7),
                confusion: cm(&[&[2, 0], &[0, 1]]),
            },
        ];
        let r = EvalReport::new(vec!["a".into(), "b".into()], models).unwrap();
        assert_eq!(r.pooled_confusion.counts(), [vec![3, 0], vec![1, 2]]);
        let agg = r.aggregate.as_ref().unwrap();
        assert_eq!(agg.formatted["bacc"], "0.6500 ± 0.0707");
        assert!(r.summary().contains("0.6500 ± 0.0707"));
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert!(r
            .pooled_confusion
            .counts_csv(&r.classes)
            .starts_with("truth\\pred,a,b\n"));
    }
}
