use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Only `cosine` is implemented.
    pub name: String,
    /// Final learning rate as a fraction of the peak.
    pub floor_ratio: f64,
    /// Linear ramp from zero before the cosine decay starts. Off by default.
    pub warmup_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { name: "cosine".into(), floor_ratio: 0.1, warmup_steps: 0 }
    }
}

/// Learning rate after `step` of `total_steps` optimizer updates.
///
/// Cosine decay from the peak at step 0 to `floor_ratio * peak` at
/// `total_steps`. With warmup, the rate climbs linearly over the first
/// `warmup_steps` and the cosine spans the remainder.
pub fn lr_at_step(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if total_steps == 0 || step > total_steps {
        return Err(TrainError::StepOutOfRange { step, total_steps });
    }
    let peak = cfg.learning_rate;
    let floor = cfg.schedule.floor_ratio * peak;
    let warmup = cfg.schedule.warmup_steps.min(total_steps);
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let span = (total_steps - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    Ok(floor + (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

/// Rates applied by updates `1..=total_steps`; update `k` uses `lr(k)`, so
/// the last update runs at the floor.
pub fn schedule_for(total_steps: usize, cfg: &TrainConfig) -> Result<Vec<f64>, TrainError> {
    (1..=total_steps).map(|k| lr_at_step(k, total_steps, cfg)).collect()
}
