use super::adam::DEFAULT_LR;

pub const PATIENCE: u32 = 4;
pub const LAST_STAGE: u32 = 3;
const IMPROVEMENT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directive {
    Continue,
    Stop,
}

/// Plateau ladder: `base / (stage + 1)` for stages 0..=3. More than
/// `patience` consecutive epochs without improvement advance the stage, or
/// stop training once the last stage is reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub stage: u32,
    pub patience: u32,
    pub best_val: f64,
    pub epochs_since_best: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::new(DEFAULT_LR)
    }
}

impl LrSchedule {
    pub fn new(base_lr: f64) -> Self {
        Self {
            base_lr,
            stage: 0,
            patience: PATIENCE,
            best_val: f64::INFINITY,
            epochs_since_best: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.base_lr / f64::from(self.stage + 1)
    }

    pub fn update(&mut self, val_loss: f64) -> Directive {
        if val_loss < self.best_val - IMPROVEMENT_MARGIN {
            self.best_val = val_loss;
            self.epochs_since_best = 0;
            return Directive::Continue;
        }
        self.epochs_since_best += 1;
        if self.epochs_since_best > self.patience {
            if self.stage >= LAST_STAGE {
                return Directive::Stop;
            }
            self.stage += 1;
            self.epochs_since_best = 0;
        }
        Directive::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decreasing_losses_keep_base_rate() {
        let mut s = LrSchedule::default();
        for k in 0..50 {
            assert_eq!(s.update(10.0 - k as f64 * 0.1), Directive::Continue);
            assert_eq!(s.lr(), 0.0015);
        }
    }

    #[test]
    fn fifth_stall_halves_the_rate() {
        let mut s = LrSchedule::default();
        s.update(1.0);
        for _ in 0..4 {
            s.update(1.0);
            assert_eq!(s.lr(), 0.0015);
        }
        s.update(1.0);
        assert_eq!(s.lr(), 0.00075);
    }

    #[test]
    fn ladder_then_stop() {
        let mut s = LrSchedule::default();
        let mut visited = vec![s.lr()];
        let mut stopped_after = None;
        for epoch in 0..100 {
            if s.update(1.0) == Directive::Stop {
                stopped_after = Some(epoch);
                break;
            }
            if *visited.last().unwrap() != s.lr() {
                visited.push(s.lr());
            }
        }
        assert_eq!(visited, vec![0.0015, 0.00075, 0.0005, 0.000375]);
        assert_eq!(stopped_after, Some(1 + 5 * 4 - 1));
    }

    proptest! {
        #[test]
        fn stage_monotone_and_rate_consistent(losses in proptest::collection::vec(0.0f64..2.0, 1..200)) {
            let mut s = LrSchedule::default();
            let mut last = 0;
            for l in losses {
                let d = s.update(l);
                prop_assert!(s.stage >= last && s.stage <= LAST_STAGE);
                prop_assert_eq!(s.lr(), 0.0015 / f64::from(s.stage + 1));
                last = s.stage;
                if d == Directive::Stop {
                    break;
                }
            }
        }
    }
}
