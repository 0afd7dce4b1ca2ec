/// Learning-rate decay on plateau plus early stopping, both driven by the
/// validation loss.
///
/// An epoch improves when its loss is strictly below the best so far. After
/// `lr_patience` consecutive non-improving epochs the rate is multiplied by
/// `factor` and that counter restarts; after `stop_patience` non-improving
/// epochs since the best one, training stops.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauController {
    lr: f64,
    factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
    since_reduce: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlateauDecision {
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
}

impl PlateauController {
    pub fn new(lr: f64, factor: f64, lr_patience: usize, stop_patience: usize) -> Self {
        PlateauController {
            lr,
            factor,
            lr_patience,
            stop_patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
            since_reduce: 0,
        }
    }

    /// Rate to use for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }

    /// Record the validation loss of `epoch`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> PlateauDecision {
        let mut d = PlateauDecision::default();
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            self.since_reduce = 0;
            d.improved = true;
            return d;
        }
        self.since_best += 1;
        self.since_reduce += 1;
        if self.since_reduce >= self.lr_patience {
            self.lr *= self.factor;
            self.since_reduce = 0;
            d.lr_reduced = true;
        }
        d.stop = self.since_best >= self.stop_patience;
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_after_seven_and_stops_after_fourteen() {
        let mut c = PlateauController::new(2e-4, 0.5, 7, 14);
        assert!(c.observe(1, 1.0).improved);
        let mut lrs = Vec::new();
        let mut stopped_at = None;
        for epoch in 2..100 {
            lrs.push(c.lr());
            if c.observe(epoch, 1.0).stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        // epochs 2..=8 are the first seven non-improving ones at the full rate
        assert!(lrs[..7].iter().all(|&l| l == 2e-4));
        assert_eq!(lrs[7], 1e-4, "eighth non-improving epoch runs at half rate");
        assert_eq!(stopped_at, Some(15));
        assert_eq!(lrs[14 - 1], 1e-4);
        assert_eq!(c.lr(), 5e-5);
    }

    #[test]
    fn improvement_resets_both_counters() {
        let mut c = PlateauController::new(1.0, 0.5, 3, 5);
        c.observe(0, 1.0);
        c.observe(1, 1.0);
        c.observe(2, 1.0);
        assert!(c.observe(3, 0.5).improved);
        assert!(!c.observe(4, 0.5).lr_reduced);
        assert!(!c.observe(5, 0.6).lr_reduced);
        assert!(c.observe(6, 0.5).lr_reduced);
        assert_eq!(c.best(), Some((3, 0.5)));
        assert!(!c.observe(7, 0.9).stop);
        assert!(c.observe(8, 0.9).stop);
    }

    #[test]
    fn nan_never_improves() {
        let mut c = PlateauController::new(1.0, 0.5, 1, 2);
        assert!(!c.observe(0, f64::NAN).improved);
        assert_eq!(c.best(), None);
    }
}
