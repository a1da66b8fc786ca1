use super::NnError;

/// Linear warmup followed by linear decay.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Result<Self, NnError> {
        if warmup_epochs == 0 || warmup_epochs >= total_epochs {
            return Err(NnError::InvalidSchedule { warmup: warmup_epochs, total: total_epochs });
        }
        Ok(Self { base_lr, warmup_epochs, total_epochs })
    }
}

/// Ramps from `base/warmup` at epoch 0 to `base` at epoch `warmup - 1`, then
/// decays linearly to `base/total` at the final epoch.
pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> Result<f64, NnError> {
    let LrSchedule { base_lr, warmup_epochs: w, total_epochs: t } = *schedule;
    if epoch >= t {
        return Err(NnError::EpochOutOfRange { epoch, total: t });
    }
    if epoch < w {
        return Ok(base_lr * (epoch + 1) as f64 / w as f64);
    }
    let floor = base_lr / t as f64;
    let span = (t - w) as f64;
    let frac = (epoch + 1 - w) as f64 / span;
    Ok(base_lr + (floor - base_lr) * frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_endpoints() {
        let s = LrSchedule::new(0.003, 5, 30).unwrap();
        assert!((lr_at(&s, 0).unwrap() - 0.0006).abs() < 1e-15);
        assert_eq!(lr_at(&s, 4).unwrap(), 0.003);
    }

    #[test]
    fn decay_reaches_floor_and_is_linear() {
        let s = LrSchedule::new(0.003, 5, 25).unwrap();
        let last = lr_at(&s, 24).unwrap();
        assert!((last - 0.003 / 25.0).abs() < 1e-15);
        // decay runs over epochs 4..=24; epoch 14 is its midpoint
        let mid = lr_at(&s, 14).unwrap();
        assert!((mid - (0.003 + 0.003 / 25.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_epoch() {
        let s = LrSchedule::new(0.001, 2, 4).unwrap();
        assert!(lr_at(&s, 4).is_err());
        assert!(LrSchedule::new(0.001, 4, 4).is_err());
        assert!(LrSchedule::new(0.001, 0, 4).is_err());
    }

    #[test]
    fn positive_and_continuous_at_junction() {
        let s = LrSchedule::new(0.001, 5, 40).unwrap();
        let lrs: Vec<f64> = (0..40).map(|e| lr_at(&s, e).unwrap()).collect();
        assert!(lrs.iter().all(|&v| v > 0.0));
        // the step across the junction is no larger than a regular decay step
        let decay_step = lrs[6] - lrs[7];
        assert!((lrs[4] - lrs[5] - decay_step).abs() < 1e-15);
    }
}
