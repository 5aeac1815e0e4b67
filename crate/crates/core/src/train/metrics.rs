use serde::{Deserialize, Serialize};

use super::manifest::NUM_CLASSES;
use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = ConfusionMatrix::default();
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.0[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.0.iter_mut().zip(&other.0) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.0[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&o| o != c).map(|o| self.0[o][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&o| o != c).map(|o| self.0[c][o]).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.0[c].iter().sum()
    }

    /// Per-class F1; `None` when the class has no true or predicted samples.
    pub fn f1(&self, c: usize) -> Option<f64> {
        let tp = self.true_positives(c) as f64;
        let denom = 2.0 * tp + self.false_positives(c) as f64 + self.false_negatives(c) as f64;
        (denom > 0.0).then(|| 2.0 * tp / denom)
    }

    /// Per-class recall; `None` when the class has no true samples.
    pub fn recall(&self, c: usize) -> Option<f64> {
        let n = self.support(c);
        (n > 0).then(|| self.true_positives(c) as f64 / n as f64)
    }

    /// Classes whose F1 or recall is undefined and was scored as 0.
    pub fn empty_classes(&self) -> Vec<usize> {
        (0..NUM_CLASSES)
            .filter(|&c| self.f1(c).is_none() || self.recall(c).is_none())
            .collect()
    }

    /// Rows scaled to sum to 1; empty rows stay zero.
    pub fn row_normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (c, row) in out.iter_mut().enumerate() {
            let n = self.support(c);
            if n > 0 {
                for (o, v) in row.iter_mut().enumerate() {
                    *v = self.0[c][o] as f64 / n as f64;
                }
            }
        }
        out
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::DegenerateInput("confusion matrix has no samples".into()));
        }
        Ok(())
    }
}

/// Unweighted (macro) F1 over the classes. Undefined per-class F1 counts as 0.
pub fn uf1(m: &ConfusionMatrix) -> Result<f64> {
    m.check_nonempty()?;
    let mut sum = 0.0;
    for c in 0..NUM_CLASSES {
        sum += m.f1(c).unwrap_or(0.0);
    }
    Ok(sum / NUM_CLASSES as f64)
}

/// Unweighted average recall over the classes. A class with no samples
/// counts as 0.
pub fn uar(m: &ConfusionMatrix) -> Result<f64> {
    m.check_nonempty()?;
    let mut sum = 0.0;
    for c in 0..NUM_CLASSES {
        sum += m.recall(c).unwrap_or(0.0);
    }
    Ok(sum / NUM_CLASSES as f64)
}
