use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification scores over one evaluated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub params: usize,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>, params: usize) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension("confusion matrix must be square and non-empty".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Data("cannot score an empty split".into()));
        }
        let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let (mut prc, mut rec, mut f1) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let tp = confusion[k][k] as f64;
            let predicted: u64 = confusion.iter().map(|r| r[k]).sum();
            let actual: u64 = confusion[k].iter().sum();
            let p = ratio(tp, predicted as f64);
            let r = ratio(tp, actual as f64);
            prc += p;
            rec += r;
            f1 += ratio(2.0 * p * r, p + r);
        }
        let n = c as f64;
        Ok(Metrics {
            accuracy: trace as f64 / total as f64,
            precision_macro: prc / n,
            recall_macro: rec / n,
            f1_macro: f1 / n,
            params,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize, params: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension("truth and prediction lengths differ".into()));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Dimension(format!("class index out of range for {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion, params)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn summary(&self) -> String {
        format!(
            "acc={:.4} prc={:.4} rec={:.4} f1={:.4} params={}",
            self.accuracy, self.precision_macro, self.recall_macro, self.f1_macro, self.params
        )
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_predictions(&[0, 1, 2, 2], &[0, 1, 2, 2], 3, 7).unwrap();
        assert_eq!((m.accuracy, m.precision_macro, m.recall_macro, m.f1_macro), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.params, 7);
    }

    #[test]
    fn hand_computed_confusion() {
        let m = Metrics::from_confusion(vec![vec![2, 0], vec![1, 1]], 0).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision_macro - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        assert!((m.recall_macro - 0.75).abs() < 1e-15);
        assert!((m.f1_macro - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((m.f1_macro - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn constant_predictor_on_balanced_pair() {
        let m = Metrics::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2, 0).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.recall_macro, 0.5);
        assert_eq!(m.precision_macro, 0.25);
        assert_eq!(m.confusion, vec![vec![2, 0], vec![2, 0]]);
    }

    #[test]
    fn ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(Metrics::from_confusion(vec![vec![0, 0], vec![0, 0]], 0).is_err());
    }
}
