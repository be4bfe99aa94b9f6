//! Train/test splitting and confusion-matrix reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::ClassLabel;
use crate::mlp::MlpModel;

/// Classes with fewer training samples than this are flagged in reports.
pub const LOW_SAMPLE_THRESHOLD: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
            stratified: false,
        }
    }
}

/// Sorted, disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn ceil_eps(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Splits samples with the given labels. Unstratified mode draws
/// `ceil(fraction * n)` training samples uniformly; stratified mode takes
/// `round(fraction * count)` from each class.
pub fn split(labels: &[ClassLabel], spec: &SplitSpec) -> Result<Split> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!("cannot split {n} samples")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut test) = if spec.stratified {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in ClassLabel::ALL {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if members.is_empty() {
                continue;
            }
            let take = (spec.train_fraction * members.len() as f64).round() as usize;
            if take == 0 {
                return Err(Error::Stratification(format!(
                    "class {} has {} sample(s), none would be used for training",
                    class.index(),
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            train.extend_from_slice(&members[..take]);
            test.extend_from_slice(&members[take..]);
        }
        (train, test)
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let take = ceil_eps(spec.train_fraction * n as f64).min(n);
        let test = order.split_off(take);
        (order, test)
    };
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

pub fn class_counts(labels: impl IntoIterator<Item = ClassLabel>) -> [usize; 4] {
    let mut counts = [0; 4];
    for l in labels {
        counts[l.position()] += 1;
    }
    counts
}

/// Held-out performance of one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`, classes in order 1..=4.
    pub confusion: [[usize; 4]; 4],
    pub accuracy: f64,
    /// Test samples per true class.
    pub per_class_counts: [usize; 4],
    pub recall: [Option<f64>; 4],
    pub precision: [Option<f64>; 4],
    /// Training samples per class, when known.
    pub train_class_counts: Option<[usize; 4]>,
    /// Classes (1-based) with fewer than [`LOW_SAMPLE_THRESHOLD`] training samples.
    pub low_sample_classes: Vec<u8>,
    pub config_echo: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn from_predictions(truth: &[ClassLabel], predicted: &[ClassLabel]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptyInput("no test samples".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        let mut confusion = [[0usize; 4]; 4];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.position()][p.position()] += 1;
        }
        let total = truth.len();
        let correct: usize = (0..4).map(|i| confusion[i][i]).sum();
        let per_class_counts = std::array::from_fn(|i| confusion[i].iter().sum());
        let recall = std::array::from_fn(|i| {
            let row: usize = confusion[i].iter().sum();
            (row > 0).then(|| confusion[i][i] as f64 / row as f64)
        });
        let precision = std::array::from_fn(|j| {
            let col: usize = (0..4).map(|i| confusion[i][j]).sum();
            (col > 0).then(|| confusion[j][j] as f64 / col as f64)
        });
        Ok(Self {
            confusion,
            accuracy: correct as f64 / total as f64,
            per_class_counts,
            recall,
            precision,
            train_class_counts: None,
            low_sample_classes: Vec::new(),
            config_echo: BTreeMap::new(),
        })
    }

    pub fn with_train_counts(mut self, counts: [usize; 4]) -> Self {
        self.low_sample_classes = ClassLabel::ALL
            .iter()
            .filter(|c| counts[c.position()] < LOW_SAMPLE_THRESHOLD)
            .map(|c| c.index())
            .collect();
        self.train_class_counts = Some(counts);
        self
    }

    pub fn echo(mut self, key: &str, value: impl Serialize) -> Self {
        self.config_echo.insert(
            key.to_string(),
            serde_json::to_value(value).expect("echo value serializes"),
        );
        self
    }

    pub fn test_size(&self) -> usize {
        self.per_class_counts.iter().sum()
    }

    /// Class (1-based) whose recall is lowest, ties broken by class order.
    /// Classes without test samples are skipped.
    pub fn worst_recall_classes(&self) -> Vec<u8> {
        let min = self
            .recall
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        ClassLabel::ALL
            .iter()
            .filter(|c| self.recall[c.position()] == Some(min))
            .map(|c| c.index())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted,1,2,3,4\n");
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{},{}", i + 1, cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let fmt_opt =
            |v: Option<f64>| v.map_or_else(|| "   -  ".to_string(), |x| format!("{x:6.3}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "accuracy: {:.4} ({} / {})",
            self.accuracy,
            (0..4).map(|i| self.confusion[i][i]).sum::<usize>(),
            self.test_size()
        );
        let _ = writeln!(out, "confusion (rows = true class, columns = predicted):");
        let _ = writeln!(
            out,
            "  class |     1     2     3     4 |  count  recall precision  train"
        );
        for c in ClassLabel::ALL {
            let i = c.position();
            let row = &self.confusion[i];
            let train = self
                .train_class_counts
                .map_or_else(|| "-".to_string(), |t| t[i].to_string());
            let flag = if self.low_sample_classes.contains(&c.index()) {
                "  LOW-SAMPLE"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "  {:5} | {:5} {:5} {:5} {:5} | {:6} {} {}    {:>5}{flag}",
                c.index(),
                row[0],
                row[1],
                row[2],
                row[3],
                self.per_class_counts[i],
                fmt_opt(self.recall[i]),
                fmt_opt(self.precision[i]),
                train,
            );
        }
        if !self.low_sample_classes.is_empty() {
            let _ = writeln!(
                out,
                "warning: classes {:?} have fewer than {LOW_SAMPLE_THRESHOLD} training samples",
                self.low_sample_classes
            );
        }
        out
    }
}

/// Scores `model` on raw (unscaled) feature vectors with known labels.
pub fn evaluate(model: &MlpModel, test_set: &[(Vec<f64>, ClassLabel)]) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::EmptyInput("no test samples".into()));
    }
    let truth: Vec<ClassLabel> = test_set.iter().map(|(_, l)| *l).collect();
    let predicted = test_set
        .iter()
        .map(|(x, _)| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(&truth, &predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    #[test]
    fn seventy_thirty() {
        let labels = vec![Lowest; 10];
        let s = split(&labels, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        assert_eq!(s, split(&labels, &SplitSpec::default()).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_proportions() {
        let mut labels = Vec::new();
        for (c, n) in [(Lowest, 40), (Low, 10), (High, 30), (Highest, 20)] {
            labels.extend(std::iter::repeat_n(c, n));
        }
        let spec = SplitSpec {
            stratified: true,
            ..SplitSpec::default()
        };
        let s = split(&labels, &spec).unwrap();
        let train = class_counts(s.train.iter().map(|&i| labels[i]));
        assert_eq!(train, [28, 7, 21, 14]);
    }

    #[test]
    fn stratified_rejects_singleton_class_at_low_fraction() {
        let labels = vec![Lowest, Lowest, Lowest, Low];
        let spec = SplitSpec {
            stratified: true,
            train_fraction: 0.4,
            seed: 1,
        };
        assert!(matches!(
            split(&labels, &spec),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let truth: Vec<ClassLabel> = (0..30).map(|i| ClassLabel::ALL[i % 4]).collect();
        let r = EvalReport::from_predictions(&truth, &truth).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(r.confusion[i][j], 0);
                }
            }
        }
        let balanced: Vec<ClassLabel> = (0..40).map(|i| ClassLabel::ALL[i % 4]).collect();
        let r = EvalReport::from_predictions(&balanced, &[Lowest; 40]).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.recall, [Some(1.0), Some(0.0), Some(0.0), Some(0.0)]);
        assert_eq!(r.precision[0], Some(0.25));
        assert_eq!(r.precision[1], None);
    }

    #[test]
    fn low_sample_flag() {
        let r = EvalReport::from_predictions(&[Lowest], &[Lowest])
            .unwrap()
            .with_train_counts([10, 3, 5, 4]);
        assert_eq!(r.low_sample_classes, vec![2, 4]);
        assert!(r.to_text().contains("LOW-SAMPLE"));
    }

    #[test]
    fn worst_recall_skips_absent_classes() {
        let r = EvalReport::from_predictions(&[Lowest, Low, High], &[Lowest, High, High]).unwrap();
        assert_eq!(r.worst_recall_classes(), vec![2]);
    }
}
