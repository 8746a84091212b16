//! Grid-core fusion modes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const GRID_CORES: u32 = 4;
pub const BANKS_PER_CORE: u32 = 8;
const KIB: u64 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Four independent cores, 8 banks each.
    Level0,
    /// Two pairs of fused cores, 16 banks each.
    Level1,
    /// All four cores fused, 32 banks.
    Level2,
}

impl FusionMode {
    /// Independent core groups.
    pub fn groups(self) -> u32 {
        match self {
            FusionMode::Level0 => 4,
            FusionMode::Level1 => 2,
            FusionMode::Level2 => 1,
        }
    }

    pub fn cores_per_group(self) -> u32 {
        GRID_CORES / self.groups()
    }

    pub fn banks_per_group(self) -> u32 {
        BANKS_PER_CORE * self.cores_per_group()
    }

    pub fn capacity_bytes(self) -> u64 {
        256 * KIB * u64::from(self.cores_per_group())
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Level0 => "level0",
            FusionMode::Level1 => "level1",
            FusionMode::Level2 => "level2",
        }
    }
}

/// Smallest mode whose fused SRAM holds a table of `table_bytes`.
pub fn select_fusion(table_bytes: u64) -> Result<FusionMode> {
    [FusionMode::Level0, FusionMode::Level1, FusionMode::Level2]
        .into_iter()
        .find(|m| table_bytes <= m.capacity_bytes())
        .ok_or(SimError::UnsupportedSize(table_bytes))
}

/// Bytes of one level's table stored at half precision.
pub fn table_bytes(entries: u64, features: u64) -> u64 {
    entries * features * 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        assert_eq!(select_fusion(256 * KIB).unwrap(), FusionMode::Level0);
        assert_eq!(select_fusion(256 * KIB + 1).unwrap(), FusionMode::Level1);
        assert_eq!(select_fusion(512 * KIB).unwrap(), FusionMode::Level1);
        assert_eq!(select_fusion(1024 * KIB).unwrap(), FusionMode::Level2);
        assert!(matches!(select_fusion(1024 * KIB + 1), Err(SimError::UnsupportedSize(_))));
    }

    #[test]
    fn bank_totals() {
        for m in [FusionMode::Level0, FusionMode::Level1, FusionMode::Level2] {
            assert_eq!(m.groups() * m.banks_per_group(), 32);
        }
        assert_eq!(FusionMode::Level2.banks_per_group(), 32);
    }
}
