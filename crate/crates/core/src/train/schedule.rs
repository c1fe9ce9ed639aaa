//! Three-phase learning-rate plan.
//!
//! Phase 1 holds a constant rate, dropping to a lower constant for its last
//! few epochs, and trains on a random half of the data each epoch. Phases 2
//! and 3 each restart from their own base rate and decay linearly:
//! `lr0 * (1 - n / N)` for epoch `n` of `N`, never below `lr0 / N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub phase1_epochs: usize,
    pub phase1_lr: f64,
    /// Final epochs of phase 1 run at `phase1_tail_lr`.
    pub phase1_tail_epochs: usize,
    pub phase1_tail_lr: f64,
    pub phase1_data_fraction: f64,
    pub phase2_epochs: usize,
    pub phase2_lr0: f64,
    pub phase3_epochs: usize,
    pub phase3_lr0: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            phase1_epochs: 150,
            phase1_lr: 5e-4,
            phase1_tail_epochs: 10,
            phase1_tail_lr: 1e-4,
            phase1_data_fraction: 0.5,
            phase2_epochs: 50,
            phase2_lr0: 1e-4,
            phase3_epochs: 100,
            phase3_lr0: 5e-5,
        }
    }
}

/// Linear decay with the positivity floor.
pub fn decay(lr0: f64, n: usize, len: usize) -> f64 {
    let len = len.max(1) as f64;
    (lr0 * (1.0 - n as f64 / len)).max(lr0 / len)
}

/// The decay formula exactly as it is usually printed, `x * (1 - n) / N`.
/// Negative from `n = 2`; kept only for comparison.
pub fn literal_decay(lr0: f64, n: usize, len: usize) -> f64 {
    lr0 * (1.0 - n as f64) / len.max(1) as f64
}

impl ScheduleSpec {
    pub fn total_epochs(&self) -> usize {
        self.phase1_epochs + self.phase2_epochs + self.phase3_epochs
    }

    /// Same shape compressed (or stretched) to `total` epochs. Phase lengths
    /// keep their 3:1:2 proportions; the phase-1 tail keeps its share of
    /// phase 1.
    pub fn scaled(&self, total: usize) -> ScheduleSpec {
        let full = self.total_epochs().max(1) as f64;
        let p1 = ((total as f64) * self.phase1_epochs as f64 / full).round() as usize;
        let p2 = (((total as f64) * self.phase2_epochs as f64 / full).round() as usize).min(total - p1.min(total));
        let p1 = p1.min(total);
        let p3 = total - p1 - p2;
        let tail = if self.phase1_epochs == 0 {
            0
        } else {
            ((p1 as f64) * self.phase1_tail_epochs as f64 / self.phase1_epochs as f64).round() as usize
        };
        ScheduleSpec {
            phase1_epochs: p1,
            phase1_tail_epochs: tail.min(p1),
            phase2_epochs: p2,
            phase3_epochs: p3,
            ..self.clone()
        }
    }

    /// Every rate multiplied by `k`.
    pub fn with_lr_scale(&self, k: f64) -> ScheduleSpec {
        ScheduleSpec {
            phase1_lr: self.phase1_lr * k,
            phase1_tail_lr: self.phase1_tail_lr * k,
            phase2_lr0: self.phase2_lr0 * k,
            phase3_lr0: self.phase3_lr0 * k,
            ..self.clone()
        }
    }

    /// 1-based phase of a 0-based epoch.
    pub fn phase(&self, epoch: usize) -> Result<u8> {
        if epoch < self.phase1_epochs {
            Ok(1)
        } else if epoch < self.phase1_epochs + self.phase2_epochs {
            Ok(2)
        } else if epoch < self.total_epochs() {
            Ok(3)
        } else {
            Err(Error::InvalidArgument(format!(
                "epoch {epoch} outside a {}-epoch schedule",
                self.total_epochs()
            )))
        }
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        match self.phase(epoch)? {
            1 => {
                if epoch + self.phase1_tail_epochs >= self.phase1_epochs {
                    Ok(self.phase1_tail_lr)
                } else {
                    Ok(self.phase1_lr)
                }
            }
            2 => Ok(decay(self.phase2_lr0, epoch - self.phase1_epochs, self.phase2_epochs)),
            _ => Ok(decay(
                self.phase3_lr0,
                epoch - self.phase1_epochs - self.phase2_epochs,
                self.phase3_epochs,
            )),
        }
    }

    /// Share of the training set drawn for an epoch.
    pub fn data_fraction(&self, epoch: usize) -> Result<f64> {
        Ok(if self.phase(epoch)? == 1 {
            self.phase1_data_fraction
        } else {
            1.0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let s = ScheduleSpec::default();
        assert_eq!(s.total_epochs(), 300);
        assert_eq!(s.lr_at(0).unwrap(), 5e-4);
        assert_eq!(s.lr_at(139).unwrap(), 5e-4);
        assert_eq!(s.lr_at(140).unwrap(), 1e-4);
        assert_eq!(s.lr_at(149).unwrap(), 1e-4);
        assert_eq!(s.lr_at(150).unwrap(), 1e-4);
        assert_eq!(s.lr_at(200).unwrap(), 5e-5);
        assert!((s.lr_at(225).unwrap() - 3.75e-5).abs() < 1e-15);
        assert!((s.lr_at(250).unwrap() - 2.5e-5).abs() < 1e-15);
        assert!(s.lr_at(299).unwrap() > 0.0);
        assert!(s.lr_at(300).is_err());
    }

    #[test]
    fn literal_formula_goes_negative() {
        assert!(literal_decay(1e-4, 2, 50) < 0.0);
        assert!(decay(1e-4, 49, 50) > 0.0);
    }

    #[test]
    fn scaled_keeps_proportions() {
        let s = ScheduleSpec::default().scaled(30);
        assert_eq!((s.phase1_epochs, s.phase2_epochs, s.phase3_epochs), (15, 5, 10));
        assert_eq!(s.phase1_tail_epochs, 1);
        let z = ScheduleSpec::default().scaled(1);
        assert_eq!(z.total_epochs(), 1);
        assert!(z.lr_at(0).unwrap() > 0.0);
        assert_eq!(ScheduleSpec::default().scaled(0).total_epochs(), 0);
    }
}
