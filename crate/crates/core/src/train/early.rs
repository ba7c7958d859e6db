/// Patience-based early stopping on a metric where larger is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    bad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// New best; keep this epoch's parameters.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            bad: 0,
        }
    }

    /// Records one evaluation. Only a strict improvement resets patience;
    /// the first finite value always counts as one.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> Decision {
        let improved = metric.is_finite() && self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.bad = 0;
            return Decision::Improved;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
