/// Halves (by default) the learning rate once validation loss has failed to
/// improve by more than `min_delta` for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f32,
    pub patience: usize,
    pub min_delta: f64,
    /// Reductions that would take η below this are skipped.
    pub min_eta: f32,
    best: Option<f64>,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f32, patience: usize, min_delta: f64) -> Self {
        PlateauScheduler {
            factor,
            patience,
            min_delta,
            min_eta: 0.0,
            best: None,
            wait: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Feeds one epoch's validation loss; returns the learning rate to use next.
    pub fn step(&mut self, val_loss: f64, eta: f32) -> f32 {
        match self.best {
            Some(b) if val_loss >= b - self.min_delta => self.wait += 1,
            _ => {
                self.best = Some(val_loss);
                self.wait = 0;
            }
        }
        if self.wait >= self.patience {
            self.wait = 0;
            let reduced = eta * self.factor;
            if reduced >= self.min_eta {
                return reduced;
            }
        }
        eta
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler::new(0.5, 3, 1e-4)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// This epoch is the best so far; snapshot the parameters.
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a validation-accuracy
/// improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub min_delta: f64,
    best: Option<f64>,
    best_epoch: usize,
    epoch: usize,
    wait: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopper {
            patience,
            min_delta,
            best: None,
            best_epoch: 0,
            epoch: 0,
            wait: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based epoch of the best score seen.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn check(&mut self, val_accuracy: f64) -> StopDecision {
        self.epoch += 1;
        match self.best {
            Some(b) if val_accuracy <= b + self.min_delta => {
                self.wait += 1;
                if self.wait >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some(val_accuracy);
                self.best_epoch = self.epoch;
                self.wait = 0;
                StopDecision::Improved
            }
        }
    }
}

impl Default for EarlyStopper {
    fn default() -> Self {
        EarlyStopper::new(8, 1e-4)
    }
}
