use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class and macro precision / recall / F1. Any ratio with an empty
/// denominator is 0 and still counts towards the macro mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fold: Option<usize>,
    /// `confusion[true][pred]`
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl MetricsReport {
    pub fn from_pairs(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(invalid(format!("{} labels for {} predictions", truth.len(), pred.len())));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= classes || p >= classes {
                return Err(invalid(format!("label pair ({t}, {p}) outside {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|r| r.len() != c) {
            return Err(invalid("confusion matrix must be square and non-empty"));
        }
        let total: usize = confusion.iter().flatten().sum();
        let per_class: Vec<ClassMetrics> = (0..c)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let support: usize = confusion[k].iter().sum();
                let predicted: usize = confusion.iter().map(|r| r[k]).sum();
                let precision = ratio(tp, predicted as f64);
                let recall = ratio(tp, support as f64);
                let f1 = ratio(2.0 * tp, (support + predicted) as f64);
                ClassMetrics { precision, recall, f1, support }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        Ok(Self {
            fold: None,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            accuracy: ratio(correct as f64, total as f64),
            per_class,
            confusion,
        })
    }

    pub fn with_fold(mut self, fold: usize) -> Self {
        self.fold = Some(fold);
        self
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    /// Text table: one row per class plus the macro row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(f) = self.fold {
            out.push_str(&format!("fold {f}\n"));
        }
        out.push_str(&format!("{:<8}{:>10}{:>10}{:>10}{:>9}\n", "class", "precision", "recall", "f1", "support"));
        for (k, m) in self.per_class.iter().enumerate() {
            out.push_str(&format!("{:<8}{:>10.4}{:>10.4}{:>10.4}{:>9}\n", k, m.precision, m.recall, m.f1, m.support));
        }
        let n: usize = self.confusion.iter().flatten().sum();
        out.push_str(&format!(
            "{:<8}{:>10.4}{:>10.4}{:>10.4}{:>9}\n",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1, n
        ));
        out.push_str(&format!("accuracy {:.4}\nconfusion (rows = true class)\n", self.accuracy));
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            out.push_str(&cells.join(""));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight recomputation from the raw pairs, no confusion matrix.
    fn brute(truth: &[usize], pred: &[usize], classes: usize) -> (Vec<[f64; 3]>, [f64; 3]) {
        let mut per = Vec::new();
        for k in 0..classes {
            let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == k && p == k).count() as f64;
            let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != k && p == k).count() as f64;
            let fne = truth.iter().zip(pred).filter(|&(&t, &p)| t == k && p != k).count() as f64;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
            let f = if 2.0 * tp + fp + fne > 0.0 { 2.0 * tp / (2.0 * tp + fp + fne) } else { 0.0 };
            per.push([p, r, f]);
        }
        let mut mac = [0.0; 3];
        for m in &per {
            for i in 0..3 {
                mac[i] += m[i] / classes as f64;
            }
        }
        (per, mac)
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let classes = rng.random_range(2..6);
            let n = rng.random_range(1..60);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let rep = MetricsReport::from_pairs(&truth, &pred, classes).unwrap();
            let (per, mac) = brute(&truth, &pred, classes);
            for (m, b) in rep.per_class.iter().zip(&per) {
                assert!((m.precision - b[0]).abs() < 1e-12);
                assert!((m.recall - b[1]).abs() < 1e-12);
                assert!((m.f1 - b[2]).abs() < 1e-12);
            }
            assert!((rep.macro_precision - mac[0]).abs() < 1e-12);
            assert!((rep.macro_recall - mac[1]).abs() < 1e-12);
            assert!((rep.macro_f1 - mac[2]).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&rep.macro_f1));
        }
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1, 0];
        let rep = MetricsReport::from_pairs(&y, &y, 3).unwrap();
        assert_eq!((rep.macro_precision, rep.macro_recall, rep.macro_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_by_two_halves() {
        let rep = MetricsReport::from_confusion(vec![vec![1, 1], vec![1, 1]]).unwrap();
        for m in &rep.per_class {
            assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        }
        assert_eq!(rep.macro_f1, 0.5);
    }

    #[test]
    fn absent_class_scores_zero_and_counts() {
        let rep = MetricsReport::from_pairs(&[0, 1, 0, 1], &[0, 1, 0, 1], 3).unwrap();
        assert_eq!(rep.per_class[2].f1, 0.0);
        assert!((rep.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(MetricsReport::from_pairs(&[0, 3], &[0, 1], 3).is_err());
        assert!(MetricsReport::from_pairs(&[0], &[0, 1], 3).is_err());
        assert!(MetricsReport::from_confusion(vec![vec![1, 0]]).is_err());
    }

    #[test]
    fn render_has_macro_row() {
        let rep = MetricsReport::from_pairs(&[0, 1, 1], &[0, 1, 0], 2).unwrap().with_fold(2);
        let text = rep.render();
        assert!(text.starts_with("fold 2\n"));
        assert!(text.contains("macro"));
        assert_eq!(text.lines().filter(|l| l.starts_with("0 ") || l.starts_with("1 ")).count(), 2);
    }
}
