use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::channel::Activity;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut c = Confusion::new(classes);
        for (truth, pred) in pairs {
            if truth >= classes || pred >= classes {
                return Err(Error::invalid(format!("class index ({truth}, {pred}) out of range")));
            }
            c.counts[truth][pred] += 1;
        }
        Ok(c)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("true\\pred");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Precision of a never-predicted class, recall of an absent class and F1 with `p + r = 0`
    /// are all 0.
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let n = confusion.classes();
        if n == 0 || confusion.total() == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        let per_class: Vec<ClassMetrics> = (0..n)
            .map(|c| {
                let tp = confusion.counts[c][c];
                let predicted: u64 = (0..n).map(|r| confusion.counts[r][c]).sum();
                let support: u64 = confusion.counts[c].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                ClassMetrics { precision, recall, f1, support }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
        Ok(MetricsReport {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            accuracy: ratio(confusion.trace(), confusion.total()),
            per_class,
            confusion,
        })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid("truth and prediction lengths differ"));
        }
        Self::from_confusion(Confusion::from_pairs(classes, truth.iter().copied().zip(predicted.iter().copied()))?)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<16} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support").unwrap();
        for (i, m) in self.per_class.iter().enumerate() {
            let name = Activity::from_index(i).map_or_else(|| i.to_string(), |a| a.as_str().to_string());
            writeln!(out, "{name:<16} {:>9.4} {:>9.4} {:>9.4} {:>8}", m.precision, m.recall, m.f1, m.support).unwrap();
        }
        writeln!(
            out,
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "macro",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.confusion.total()
        )
        .unwrap();
        writeln!(out, "accuracy {:.4}", self.accuracy).unwrap();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }
}

/// Detection rates over labelled scene windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorRates {
    pub tpr: f64,
    pub far_per_window: f64,
    pub motion_windows: usize,
    pub empty_windows: usize,
}

/// `outcomes` holds `(has_motion, detected)` per window.
pub fn eval_detector(outcomes: &[(bool, bool)]) -> Result<DetectorRates> {
    let motion: Vec<bool> = outcomes.iter().filter(|o| o.0).map(|o| o.1).collect();
    let empty: Vec<bool> = outcomes.iter().filter(|o| !o.0).map(|o| o.1).collect();
    if motion.is_empty() {
        return Err(Error::UndefinedMetric("TPR needs at least one motion window".into()));
    }
    if empty.is_empty() {
        return Err(Error::UndefinedMetric("FAR needs at least one no-motion window".into()));
    }
    let rate = |v: &[bool]| v.iter().filter(|d| **d).count() as f64 / v.len() as f64;
    Ok(DetectorRates {
        tpr: rate(&motion),
        far_per_window: rate(&empty),
        motion_windows: motion.len(),
        empty_windows: empty.len(),
    })
}
