//! Adversarial training with self-distillation from the previous epoch.
//!
//! Each epoch picks adversarial nodes (from the pretrained policy or at random),
//! crafts PGD examples on them, and fits the model on those examples. From the
//! second epoch on the loss adds `alpha` times the squared distance to the
//! predictions a frozen copy of last epoch's model makes on the clean input.

mod losses;
mod train;

pub use losses::{at_loss, kd_loss};
pub use train::{adversarial_train, plain_adversarial_train, AtConfig, EpochLog, PgdLoss, Selection, SelectionScope, TrainLog};

use crate::error::{Error, Result};
use crate::forecaster::Forecaster;

/// Frozen copy of the model as it stood at the end of `source_epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSnapshot {
    model: Forecaster,
    source_epoch: usize,
}

impl TeacherSnapshot {
    pub fn model(&self) -> &Forecaster {
        &self.model
    }

    pub fn source_epoch(&self) -> usize {
        self.source_epoch
    }

    pub fn checksum(&self) -> String {
        self.model.params.checksum()
    }
}

/// Deep copy of `model` taken at the end of `epoch` (1-based).
pub fn snapshot_teacher(model: &Forecaster, epoch: usize) -> Result<TeacherSnapshot> {
    if epoch == 0 {
        return Err(Error::Contract("teacher snapshots start at epoch 1".into()));
    }
    Ok(TeacherSnapshot { model: model.clone(), source_epoch: epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::ArchConfig;

    fn model() -> Forecaster {
        let arch = ArchConfig { blocks: 1, hidden_channels: 3, diffusion_depth: 1, temporal_kernel: 2, dilations: vec![1], node_embed_dim: 2, head_channels: 4 };
        Forecaster::new(arch, 4, 1, 3, 2, 1).unwrap()
    }

    #[test]
    fn student_updates_leave_teacher_untouched() {
        let mut m = model();
        let t = snapshot_teacher(&m, 1).unwrap();
        let before = t.checksum();
        m.params.values_mut()[0].fill(3.0);
        assert_eq!(t.checksum(), before);
        assert_ne!(m.params.checksum(), before);
    }

    #[test]
    fn snapshot_of_snapshot_is_equal() {
        let m = model();
        let t = snapshot_teacher(&m, 2).unwrap();
        let tt = snapshot_teacher(t.model(), 2).unwrap();
        assert_eq!(t, tt);
        assert!(snapshot_teacher(&m, 0).is_err());
    }
}
