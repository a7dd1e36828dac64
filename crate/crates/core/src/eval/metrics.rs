use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Positive class is `desired`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Desired, Label::Desired) => self.tp += 1,
            (Label::Desired, Label::Undesired) => self.fp += 1,
            (Label::Undesired, Label::Desired) => self.fn_ += 1,
            (Label::Undesired, Label::Undesired) => self.tn += 1,
        }
    }
}

/// Compares predictions against human labels. Every labeled id needs a
/// prediction; predictions without a label are ignored.
pub fn confusion(
    predicted: &BTreeMap<String, Label>,
    labels: &BTreeMap<String, Label>,
) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for (id, &actual) in labels {
        let &p = predicted
            .get(id)
            .ok_or_else(|| Error::MissingVerdict(id.clone()))?;
        c.record(p, actual);
    }
    Ok(c)
}

/// Ratios in `[0, 1]`; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: ConfusionCounts) -> Result<MetricsReport> {
    if c.total() == 0 {
        return Err(Error::precondition("confusion counts are all zero"));
    }
    Ok(MetricsReport {
        counts: c,
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    })
}

/// Percentage with two decimals, or `n/a`.
pub fn percent(v: Option<f64>) -> String {
    v.map_or_else(
        || "n/a".to_string(),
        |v| format!("{:.2}", (v * 10_000.0).round() / 100.0),
    )
}

impl MetricsReport {
    pub fn percentages(&self) -> [String; 4] {
        [
            percent(Some(self.accuracy)),
            percent(self.precision),
            percent(self.recall),
            percent(self.f1),
        ]
    }

    /// One table row, `| method | acc | prec | rec | f1 |`.
    pub fn row(&self, method: &str) -> String {
        let [a, p, r, f] = self.percentages();
        format!("| {method:<16} | {a:>8} | {p:>9} | {r:>8} | {f:>8} |")
    }
}

impl MetricsReport {
    /// Header, one row labeled `method`, and the raw counts.
    pub fn table(&self, method: &str) -> String {
        let c = self.counts;
        format!(
            "| {:<16} | {:>8} | {:>9} | {:>8} | {:>8} |\n|{:-<18}|{:-<10}|{:-<11}|{:-<10}|{:-<10}|\n{}\ntp={} fp={} fn={} tn={}\n",
            "Method", "Accuracy", "Precision", "Recall", "F1", "", "", "", "", "",
            self.row(method),
            c.tp, c.fp, c.fn_, c.tn
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table("this run"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    fn map(labels: &[Label]) -> BTreeMap<String, Label> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (format!("e{i}"), l))
            .collect()
    }

    fn flip(l: Label) -> Label {
        match l {
            Label::Desired => Label::Undesired,
            Label::Undesired => Label::Desired,
        }
    }

    #[test]
    fn all_correct_and_all_flipped() {
        let labels: Vec<_> = (0..10)
            .map(|i| {
                if i < 6 {
                    Label::Desired
                } else {
                    Label::Undesired
                }
            })
            .collect();
        assert_eq!(
            confusion(&map(&labels), &map(&labels)).unwrap(),
            counts(6, 0, 0, 4)
        );
        let flipped: Vec<_> = labels.iter().map(|&l| flip(l)).collect();
        let c = confusion(&map(&flipped), &map(&labels)).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn missing_prediction() {
        let labels = map(&[Label::Desired, Label::Desired]);
        let pred = map(&[Label::Desired]);
        assert!(matches!(
            confusion(&pred, &labels),
            Err(Error::MissingVerdict(_))
        ));
    }

    #[test]
    fn hand_example() {
        let m = metrics(counts(3, 1, 2, 4)).unwrap();
        assert_eq!(m.precision, Some(0.75));
        assert_eq!(m.recall, Some(0.6));
        assert_eq!(m.accuracy, 0.7);
        assert!((m.f1.unwrap() - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
        assert_eq!(m.percentages(), ["70.00", "75.00", "60.00", "66.67"]);
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = metrics(counts(5, 0, 0, 5)).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, Some(1.0), Some(1.0), Some(1.0))
        );
        let m = metrics(counts(0, 0, 3, 2)).unwrap();
        assert_eq!(m.precision, None);
        assert_eq!(percent(m.precision), "n/a");
        assert!(metrics(counts(0, 0, 0, 0)).is_err());
    }

    proptest! {
        #[test]
        fn confusion_matches_pairwise_oracle(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let to = |b: bool| if b { Label::Desired } else { Label::Undesired };
            let pred = map(&pairs.iter().map(|p| to(p.0)).collect::<Vec<_>>());
            let gold = map(&pairs.iter().map(|p| to(p.1)).collect::<Vec<_>>());
            let c = confusion(&pred, &gold).unwrap();
            let count = |a: bool, b: bool| pairs.iter().filter(|p| p.0 == a && p.1 == b).count() as u64;
            prop_assert_eq!(c, counts(count(true, true), count(true, false), count(false, true), count(false, false)));
        }

        #[test]
        fn metric_bounds(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let c = counts(tp, fp, fn_, tn);
            let m = metrics(c).unwrap();
            prop_assert_eq!(m.accuracy, (tp + tn) as f64 / c.total() as f64);
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                prop_assert!(f >= 0.0);
                prop_assert!(f <= p.max(r) + 1e-15);
                if p + r > 0.0 {
                    prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
                }
            }
        }
    }
}
