use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Linear warmup to the peak, then linear decay to zero at the last step.
    #[default]
    LinearDecay,
    /// Linear warmup, then the peak rate until the end.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        match self.kind {
            ScheduleKind::Constant => self.peak,
            ScheduleKind::LinearDecay => {
                let span = self.total_steps - self.warmup_steps;
                if span == 0 {
                    return if step < self.total_steps { self.peak } else { 0.0 };
                }
                self.peak * (self.total_steps - step) as f64 / span as f64
            }
        }
    }
}
