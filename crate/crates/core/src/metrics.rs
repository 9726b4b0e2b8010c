use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::InvalidData(format!(
                "class pair ({truth}, {predicted}) outside 0..{}",
                self.classes
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.classes).map(|c| self.counts[c][c]).sum();
        hits as f64 / total as f64
    }

    /// `None` when the class was never predicted.
    pub fn precision(&self, class: usize) -> Option<f64> {
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        (col > 0).then(|| self.counts[class][class] as f64 / col as f64)
    }

    /// `None` when the class is absent from the ground truth.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let row: u64 = self.counts[class].iter().sum();
        (row > 0).then(|| self.counts[class][class] as f64 / row as f64)
    }

    /// Header `true\pred,0,1,..` then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..self.classes {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse { line: 1, message: "empty csv".into() })?;
        let classes = header.split(',').count().saturating_sub(1);
        let mut m = Self::new(classes);
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            let bad = |message: String| Error::Parse { line: i + 2, message };
            if i >= classes {
                return Err(bad("too many rows".into()));
            }
            if cells.len() != classes + 1 || cells[0] != i.to_string() {
                return Err(bad(format!("expected row {i} with {classes} counts")));
            }
            for (j, cell) in cells[1..].iter().enumerate() {
                m.counts[i][j] = cell.parse().map_err(|e| bad(format!("{cell:?}: {e}")))?;
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix) -> Self {
        let supports = m.row_sums();
        Self {
            accuracy: m.accuracy(),
            total: m.total(),
            per_class: (0..m.classes())
                .map(|c| ClassMetrics {
                    class: c,
                    support: supports[c],
                    precision: m.precision(c),
                    recall: m.recall(c),
                })
                .collect(),
            confusion: m.counts().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor_is_diagonal() {
        let y = [0, 1, 2, 2, 1, 0, 3];
        let m = ConfusionMatrix::from_predictions(4, &y, &y).unwrap();
        for (i, row) in m.counts().iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v != 0, i == j);
            }
        }
        assert_eq!(m.accuracy(), 1.0);
    }

    #[test]
    fn single_class_test_set() {
        let m = ConfusionMatrix::from_predictions(3, &[1, 1, 1], &[0, 1, 2]).unwrap();
        assert_eq!(m.row_sums(), vec![0, 3, 0]);
        assert_eq!(m.recall(0), None);
        assert_eq!(m.precision(1), Some(1.0));
        assert!((m.recall(1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let m = ConfusionMatrix::from_predictions(3, &[0, 1, 2, 2], &[0, 2, 2, 1]).unwrap();
        let text = m.to_csv();
        assert!(text.starts_with("true\\pred,0,1,2\n0,1,0,0\n"));
        assert_eq!(ConfusionMatrix::from_csv(&text).unwrap(), m);
        assert!(ConfusionMatrix::from_predictions(2, &[0], &[2]).is_err());
    }
}
