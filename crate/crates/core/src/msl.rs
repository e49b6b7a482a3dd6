//! Staged unlocking of deformation parameter groups: axis scales first,
//! then twist, then the local deformation field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tensors that are always trainable (attention, backbone, fusion).
pub const GROUP_SHARED: usize = 0;
/// Axis-scale outputs `a1, a2, a3` (and, in fitting, scale and center).
pub const GROUP_SCALE: usize = 1;
/// Twist outputs.
pub const GROUP_TWIST: usize = 2;
/// Local deformation (velocity field, or fitted offsets).
pub const GROUP_LOCAL: usize = 3;

/// Unlock epoch fractions for the scale, twist and local groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlockFractions(pub [f64; 3]);

impl Default for UnlockFractions {
    fn default() -> Self {
        UnlockFractions([0.0, 0.3, 0.5])
    }
}

impl UnlockFractions {
    pub fn validate(&self) -> Result<()> {
        let f = self.0;
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!("unlock fractions {f:?} must lie in [0, 1]")));
        }
        if f[0] > f[1] || f[1] > f[2] {
            return Err(Error::Config(format!("unlock fractions {f:?} must be non-decreasing")));
        }
        Ok(())
    }
}

/// Live flags for `[scale, twist, local]` at `epoch` of a stage of `e1` epochs.
pub fn msl_schedule(epoch: usize, e1: usize, fractions: UnlockFractions) -> [bool; 3] {
    fractions.0.map(|f| epoch as f64 >= f * e1 as f64)
}

/// Liveness of an arbitrary parameter group under a mask.
pub fn group_live(mask: [bool; 3], group: usize) -> bool {
    match group {
        GROUP_SCALE => mask[0],
        GROUP_TWIST => mask[1],
        GROUP_LOCAL => mask[2],
        _ => true,
    }
}
