//! Classification metrics: confusion matrices and top-k error.

use std::fmt::Write as _;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::network::NetworkSpec;

/// `counts[i][j]` is the number of samples of true class `j` predicted as `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

/// Derived rates. Rows are predictions, columns are true classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Fraction of predictions of class `i` that were correct; `None` when
    /// class `i` was never predicted.
    pub precision: Vec<Option<f64>>,
    /// Fraction of class `j` samples predicted correctly; `None` when the
    /// class has no samples.
    pub recall: Vec<Option<f64>>,
    pub accuracy: f64,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds the matrix from a rectangular table `rows[predicted][true]`.
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix", format!("{k}x{k} table"), "ragged table"));
        }
        Ok(ConfusionMatrix {
            num_classes: k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, predicted: usize, actual: usize) -> u64 {
        self.counts[predicted * self.num_classes + actual]
    }

    pub fn record(&mut self, predicted: usize, actual: usize) -> Result<()> {
        for (what, c) in [("predicted class", predicted), ("true class", actual)] {
            if c >= self.num_classes {
                return Err(Error::Index { what, index: c, len: self.num_classes });
            }
        }
        self.counts[predicted * self.num_classes + actual] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, predicted: usize) -> u64 {
        (0..self.num_classes).map(|j| self.count(predicted, j)).sum()
    }

    pub fn column_total(&self, actual: usize) -> u64 {
        (0..self.num_classes).map(|i| self.count(i, actual)).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|i| self.count(i, i)).sum()
    }

    pub fn summarize(&self) -> Summary {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let k = self.num_classes;
        let total = self.total();
        Summary {
            precision: (0..k).map(|i| ratio(self.count(i, i), self.row_total(i))).collect(),
            recall: (0..k).map(|j| ratio(self.count(j, j), self.column_total(j))).collect(),
            accuracy: ratio(self.correct(), total).unwrap_or(0.0),
            total,
        }
    }

    /// Table of percentages of the total with an `all` row and column; the
    /// bottom-right cell is the overall accuracy. One decimal place.
    pub fn to_text(&self, class_names: Option<&[String]>) -> String {
        let k = self.num_classes;
        let name = |i: usize| class_names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| i.to_string());
        let total = self.total().max(1) as f64;
        let pct = |c: u64| format!("{:.1}", 100.0 * c as f64 / total);
        let s = self.summarize();
        let opt_pct = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));

        let mut header = vec!["pred\\true".to_string()];
        header.extend((0..k).map(name));
        header.push("all".into());
        let mut table = vec![header];
        for i in 0..k {
            let mut row = vec![name(i)];
            row.extend((0..k).map(|j| pct(self.count(i, j))));
            row.push(opt_pct(s.precision[i]));
            table.push(row);
        }
        let mut last = vec!["all".to_string()];
        last.extend(s.recall.iter().map(|&r| opt_pct(r)));
        last.push(format!("{:.1}", 100.0 * s.accuracy));
        table.push(last);

        let width = table.iter().flatten().map(String::len).max().unwrap_or(1);
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>width$}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    /// Raw counts as CSV: header `predicted,true_0,…`, one row per prediction.
    pub fn to_csv(&self) -> String {
        let k = self.num_classes;
        let mut out = String::from("predicted");
        for j in 0..k {
            let _ = write!(out, ",true_{j}");
        }
        out.push('\n');
        for i in 0..k {
            let _ = write!(out, "{i}");
            for j in 0..k {
                let _ = write!(out, ",{}", self.count(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Predicts every sample (argmax output) and tallies the confusion matrix.
pub fn evaluate(net: &NetworkSpec, data: &LabeledDataset) -> Result<ConfusionMatrix> {
    data.check_network(net)?;
    let mut cm = ConfusionMatrix::new(data.num_classes());
    for i in 0..data.len() {
        cm.record(net.predict_class(data.input(i))?, data.label(i))?;
    }
    Ok(cm)
}

/// Indices of the `k` largest entries, largest first; ties go to the lower index.
pub fn top_k(scores: &Vector, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fraction of samples whose label is not among the `k` highest scores.
pub fn top_k_error(scores: &[Vector], labels: &[usize], k: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("top-k error", format!("{} score vectors", scores.len()), format!("{} labels", labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::Domain("top-k error of an empty set".into()));
    }
    if k == 0 {
        return Err(Error::Domain("top-k error needs k >= 1".into()));
    }
    let misses = scores.iter().zip(labels).filter(|(s, l)| !top_k(s, k).contains(l)).count();
    Ok(misses as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_from_trace() {
        let cm = ConfusionMatrix::from_counts(&[vec![814, 0], vec![186, 0]]).unwrap();
        let s = cm.summarize();
        assert_eq!(s.accuracy, 0.814);
        assert_eq!(s.recall[0], Some(0.814));
        assert_eq!(s.recall[1], None);
        assert!(cm.to_text(None).contains("81.4"));
    }

    #[test]
    fn precision_of_a_row() {
        // 814 correct out of 988 predictions of class 0
        let cm = ConfusionMatrix::from_counts(&[vec![814, 174], vec![10, 2]]).unwrap();
        let p = cm.summarize().precision[0].unwrap();
        assert_eq!(format!("{:.1}", 100.0 * p), "82.4");
    }

    #[test]
    fn unpredicted_class_has_no_precision() {
        let cm = ConfusionMatrix::from_counts(&[vec![3, 1], vec![0, 0]]).unwrap();
        assert_eq!(cm.summarize().precision[1], None);
        assert!(cm.to_text(None).lines().nth(2).unwrap().trim_end().ends_with('-'));
    }

    #[test]
    fn top_k_examples() {
        let scores = vec![
            Vector::new(vec![0.1, 0.7, 0.2]),
            Vector::new(vec![0.5, 0.3, 0.2]),
            Vector::new(vec![0.3, 0.3, 0.4]),
        ];
        let labels = [1, 1, 1];
        assert!((top_k_error(&scores, &labels, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // the 0.3 tie in the last sample goes to class 0, leaving class 1 out of the top 2
        assert!((top_k_error(&scores, &labels, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(top_k_error(&scores, &labels, 3).unwrap(), 0.0);
        assert_eq!(top_k(&Vector::new(vec![1.0, 2.0, 2.0]), 2), vec![1, 2]);
        assert!(top_k_error(&scores, &labels[..2], 1).is_err());
        assert!(top_k_error(&scores, &labels, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_counts(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(cm.to_csv(), "predicted,true_0,true_1\n0,1,2\n1,3,4\n");
    }

    proptest! {
        #[test]
        fn evaluation_matches_class_counts_and_top_1(seed in 0u64..200) {
            let data = crate::data::gaussian_blobs(7, &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], 0.5, seed);
            let net = NetworkSpec::dense(&[2, 4, 3], crate::activation::ActivationKind::Sigmoid).unwrap().init_params(seed);
            let cm = evaluate(&net, &data).unwrap();
            let counts = data.class_counts();
            for (j, &c) in counts.iter().enumerate() {
                prop_assert_eq!(cm.column_total(j), c as u64);
            }
            let scores: Vec<Vector> = data.inputs().iter().map(|x| net.output(x).unwrap()).collect();
            let top1 = top_k_error(&scores, data.labels(), 1).unwrap();
            let misses = (top1 * data.len() as f64).round() as u64;
            prop_assert_eq!(cm.correct(), cm.total() - misses);
            prop_assert!((cm.summarize().accuracy - (1.0 - top1)).abs() <= 1e-15);
        }

        #[test]
        fn counts_are_conserved(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let mut cm = ConfusionMatrix::new(4);
            for &(p, t) in &pairs {
                cm.record(p, t).unwrap();
            }
            prop_assert_eq!(cm.total() as usize, pairs.len());
            let rows: u64 = (0..4).map(|i| cm.row_total(i)).sum();
            let cols: u64 = (0..4).map(|j| cm.column_total(j)).sum();
            prop_assert_eq!(rows, cm.total());
            prop_assert_eq!(cols, cm.total());
            let correct = pairs.iter().filter(|(p, t)| p == t).count();
            prop_assert!((cm.summarize().accuracy - correct as f64 / pairs.len() as f64).abs() < 1e-15);
        }

        #[test]
        fn top_k_error_is_monotone(seed in 0u64..1000) {
            use rand::Rng as _;
            let mut r = crate::rng::from_u64(seed);
            let scores: Vec<Vector> = (0..20).map(|_| Vector::new((0..5).map(|_| r.random()).collect())).collect();
            let labels: Vec<usize> = (0..20).map(|_| r.random_range(0..5)).collect();
            let errs: Vec<f64> = (1..=5).map(|k| top_k_error(&scores, &labels, k).unwrap()).collect();
            prop_assert!(errs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(errs[4], 0.0);
        }
    }
}
