use serde::Serialize;

/// Binary confusion counts with class 1 (eavesdropper) as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn tally(predicted: &[u8], truth: &[u8]) -> Self {
        let mut c = Self::default();
        for (p, y) in predicted.iter().zip(truth) {
            match (*p == 1, *y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub legit: ClassMetrics,
    pub eve: ClassMetrics,
    pub macro_avg: ClassMetrics,
    /// Set when evaluated under an early-exit policy.
    pub exit_rate: Option<f64>,
    pub mac_ratio: Option<f64>,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let n = c.total();
        let accuracy = if n == 0 {
            0.0
        } else {
            (c.tp + c.tn) as f64 / n as f64
        };
        let eve = ClassMetrics::from_counts(c.tp, c.fp, c.fn_);
        let legit = ClassMetrics::from_counts(c.tn, c.fn_, c.fp);
        let macro_avg = ClassMetrics {
            precision: (eve.precision + legit.precision) / 2.0,
            recall: (eve.recall + legit.recall) / 2.0,
            f1: (eve.f1 + legit.f1) / 2.0,
        };
        Self {
            n,
            confusion: c,
            accuracy,
            legit,
            eve,
            macro_avg,
            exit_rate: None,
            mac_ratio: None,
        }
    }

    pub fn from_predictions(predicted: &[u8], truth: &[u8]) -> Self {
        Self::from_confusion(Confusion::tally(predicted, truth))
    }
}
