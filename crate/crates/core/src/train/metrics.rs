use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification quality over one partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// `None` for classes with no true samples.
    pub per_class_recall: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::Data(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Data(format!("class index ({t}, {p}) outside {num_classes} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

impl Metrics {
    /// OA, AA (over classes with support) and Cohen's kappa.
    ///
    /// When chance agreement is total (`p_e = 1`) kappa is defined as 1.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if confusion.iter().any(|r| r.len() != c) {
            return Err(Error::Data("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Data("cannot compute metrics over zero samples".into()));
        }
        let n = total as f64;
        let diag: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let row: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        let col: Vec<u64> = (0..c).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
        let per_class_recall: Vec<Option<f64>> =
            (0..c).map(|i| (row[i] > 0).then(|| confusion[i][i] as f64 / row[i] as f64)).collect();
        let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;
        let oa = diag as f64 / n;
        let pe = row.iter().zip(&col).map(|(&r, &k)| r as f64 * k as f64).sum::<f64>() / (n * n);
        let kappa = if pe >= 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
        Ok(Self { oa, aa, kappa, per_class_recall, confusion })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        Self::from_confusion(confusion_matrix(truth, pred, num_classes)?)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}
