//! Piecewise learning-rate schedule: linear warmup, cosine annealing, then a
//! constant tail. Breakpoints are stored in (possibly fractional) epochs and
//! resolved to whole optimizer steps, rounding half-up.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BASE_LR_INIT: f64 = 8e-6;
pub const BASE_LR_PEAK: f64 = 4.8e-3;
pub const BASE_LR_FINAL: f64 = 8e-5;
pub const FROZEN_LR_PEAK: f64 = 8e-4;
pub const FROZEN_WARMUP_DIVISOR: f64 = 5.0;
pub const FROZEN_COSINE_DIVISOR: f64 = 3.5;
pub const FROZEN_ITERATION_SHARE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub total_epochs: f64,
    pub warmup_end_epoch: f64,
    pub cosine_start_epoch: f64,
    pub cosine_end_epoch: f64,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub steps_per_epoch: usize,
    /// Cumulative epoch multiplier relative to the plan this was derived from.
    #[serde(default = "one")]
    pub scale_factor: f64,
}

fn one() -> f64 {
    1.0
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

impl TrainPlan {
    /// 50 epochs: warmup over the first 5, cosine until epoch 40, then flat.
    pub fn baseline(steps_per_epoch: usize) -> Self {
        Self {
            total_epochs: 50.0,
            warmup_end_epoch: 5.0,
            cosine_start_epoch: 5.0,
            cosine_end_epoch: 40.0,
            lr_init: BASE_LR_INIT,
            lr_peak: BASE_LR_PEAK,
            lr_final: BASE_LR_FINAL,
            steps_per_epoch,
            scale_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train plan: {m}")));
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be positive");
        }
        let epochs = [
            self.total_epochs,
            self.warmup_end_epoch,
            self.cosine_start_epoch,
            self.cosine_end_epoch,
        ];
        if epochs.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return bad("epoch breakpoints must be finite and non-negative");
        }
        if !(self.warmup_end_epoch <= self.cosine_start_epoch
            && self.cosine_start_epoch <= self.cosine_end_epoch
            && self.cosine_end_epoch <= self.total_epochs)
        {
            return bad("expected warmup_end <= cosine_start <= cosine_end <= total_epochs");
        }
        let rates = [self.lr_init, self.lr_peak, self.lr_final];
        if rates.iter().any(|v| !v.is_finite() || *v < 0.0) || self.lr_init > self.lr_peak {
            return bad("learning rates must be non-negative with lr_init <= lr_peak");
        }
        Ok(())
    }

    pub fn step_of_epoch(&self, epoch: f64) -> usize {
        round_half_up(epoch * self.steps_per_epoch as f64)
    }

    pub fn total_steps(&self) -> usize {
        self.step_of_epoch(self.total_epochs)
    }

    pub fn warmup_end_step(&self) -> usize {
        self.step_of_epoch(self.warmup_end_epoch)
    }

    pub fn cosine_start_step(&self) -> usize {
        self.step_of_epoch(self.cosine_start_epoch)
    }

    pub fn cosine_end_step(&self) -> usize {
        self.step_of_epoch(self.cosine_end_epoch)
    }

    /// Whole epochs needed to run every step.
    pub fn realized_epochs(&self) -> usize {
        self.total_steps().div_ceil(self.steps_per_epoch)
    }

    /// First (1-based) and last epoch of the cosine segment.
    pub fn cosine_epochs_one_based(&self) -> (f64, f64) {
        (self.cosine_start_epoch + 1.0, self.cosine_end_epoch)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_owned(),
        })?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Learning rate at global step `step`.
pub fn lr_at(plan: &TrainPlan, step: usize) -> Result<f64> {
    let total = plan.total_steps();
    if step >= total {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside schedule of {total} steps"
        )));
    }
    let warm = plan.warmup_end_step();
    let cos_start = plan.cosine_start_step();
    let cos_end = plan.cosine_end_step();
    let lr = if step <= warm {
        if warm == 0 {
            plan.lr_peak
        } else {
            let t = step as f64 / warm as f64;
            plan.lr_init * (1.0 - t) + plan.lr_peak * t
        }
    } else if step <= cos_start {
        plan.lr_peak
    } else if step <= cos_end {
        let t = (step - cos_start) as f64 / (cos_end - cos_start) as f64;
        plan.lr_final + (plan.lr_peak - plan.lr_final) * 0.5 * (1.0 + (PI * t).cos())
    } else {
        plan.lr_final
    };
    Ok(lr)
}

/// Every `(step, lr)` pair of the plan.
pub fn dump(plan: &TrainPlan) -> Vec<(usize, f64)> {
    (0..plan.total_steps())
        .map(|s| (s, lr_at(plan, s).expect("step in range")))
        .collect()
}

/// Adapts a plan to a dataset `dataset_fraction` times the size of the one it
/// was built for, keeping the number of optimizer steps and the step position
/// of every breakpoint.
pub fn rescale_plan(base: &TrainPlan, dataset_fraction: f64) -> Result<TrainPlan> {
    if !(dataset_fraction > 0.0 && dataset_fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "dataset fraction {dataset_fraction} must be positive"
        )));
    }
    let spe = round_half_up(base.steps_per_epoch as f64 * dataset_fraction).max(1);
    let to_epochs = |steps: usize| steps as f64 / spe as f64;
    Ok(TrainPlan {
        total_epochs: to_epochs(base.total_steps()),
        warmup_end_epoch: to_epochs(base.warmup_end_step()),
        cosine_start_epoch: to_epochs(base.cosine_start_step()),
        cosine_end_epoch: to_epochs(base.cosine_end_step()),
        lr_init: base.lr_init,
        lr_peak: base.lr_peak,
        lr_final: base.lr_final,
        steps_per_epoch: spe,
        scale_factor: base.scale_factor / dataset_fraction,
    })
}

/// Shorter schedule for training a head on a frozen encoder: 30% of the base
/// iterations, warmup five times shorter, cosine 3.5 times shorter, peak
/// learning rate 8e-4.
pub fn frozen_plan(base: &TrainPlan) -> TrainPlan {
    let spe = base.steps_per_epoch as f64;
    let total = round_half_up(base.total_steps() as f64 * FROZEN_ITERATION_SHARE);
    let warm = round_half_up(base.warmup_end_step() as f64 / FROZEN_WARMUP_DIVISOR);
    let cos_len = round_half_up(
        (base.cosine_end_step() - base.cosine_start_step()) as f64 / FROZEN_COSINE_DIVISOR,
    );
    let cos_end = (warm + cos_len).min(total);
    TrainPlan {
        total_epochs: total as f64 / spe,
        warmup_end_epoch: warm as f64 / spe,
        cosine_start_epoch: warm as f64 / spe,
        cosine_end_epoch: cos_end as f64 / spe,
        lr_init: base.lr_init,
        lr_peak: FROZEN_LR_PEAK,
        lr_final: base.lr_final,
        steps_per_epoch: base.steps_per_epoch,
        scale_factor: base.scale_factor * FROZEN_ITERATION_SHARE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_breakpoints() {
        let p = TrainPlan::baseline(100);
        p.validate().unwrap();
        assert_eq!(lr_at(&p, 0).unwrap(), 8e-6);
        assert!((lr_at(&p, 500).unwrap() - 4.8e-3).abs() < 1e-12);
        assert!((lr_at(&p, 4000).unwrap() - 8e-5).abs() < 1e-12);
        assert!((lr_at(&p, 4999).unwrap() - 8e-5).abs() < 1e-12);
        assert!(lr_at(&p, 5000).is_err());
    }

    #[test]
    fn warmup_midpoint() {
        let p = TrainPlan::baseline(100);
        assert!((lr_at(&p, 250).unwrap() - 2.404e-3).abs() < 1e-12);
    }

    #[test]
    fn cosine_midpoint() {
        let p = TrainPlan::baseline(100);
        // cosine covers steps 500..=4000
        let mid = lr_at(&p, 2250).unwrap();
        assert!((mid - (8e-5 + (4.8e-3 - 8e-5) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_rescale() {
        let p = TrainPlan::baseline(64);
        assert_eq!(rescale_plan(&p, 1.0).unwrap(), p);
        assert!(rescale_plan(&p, 0.0).is_err());
    }

    #[test]
    fn half_dataset_doubles_epochs() {
        let p = rescale_plan(&TrainPlan::baseline(100), 0.5).unwrap();
        assert_eq!(p.total_epochs, 100.0);
        assert_eq!(p.cosine_epochs_one_based(), (11.0, 80.0));
        assert_eq!(p.total_steps(), 5000);
    }

    #[test]
    fn frozen_from_baseline() {
        let base = TrainPlan::baseline(100);
        let f = frozen_plan(&base);
        assert_eq!(f.total_epochs, 15.0);
        assert_eq!(f.warmup_end_epoch, 1.0);
        assert_eq!(f.cosine_end_epoch - f.cosine_start_epoch, 10.0);
        assert_eq!(lr_at(&f, 0).unwrap(), 8e-6);
        assert!((lr_at(&f, f.warmup_end_step()).unwrap() - 8e-4).abs() < 1e-15);
        assert_eq!(f.total_steps(), 1500);
    }

    #[test]
    fn plan_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.toml");
        let p = TrainPlan::baseline(10);
        std::fs::write(&path, toml::to_string(&p).unwrap()).unwrap();
        assert_eq!(TrainPlan::load(&path).unwrap(), p);
        std::fs::write(&path, "total_epochs = 1\nbogus = 2\n").unwrap();
        assert!(TrainPlan::load(&path).is_err());
    }
}
