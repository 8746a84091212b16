//! Cycle counts of the two MLP unit types.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpUnits {
    /// Side of the square systolic array.
    pub systolic_size: u64,
    /// Multipliers feeding the adder tree.
    pub adder_tree_width: u64,
}

impl Default for MlpUnits {
    fn default() -> Self {
        Self { systolic_size: 16, adder_tree_width: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlpUnitKind {
    Systolic,
    AdderTree,
}

/// Unit used for a layer with `n` output channels.
pub fn unit_for(n: u64) -> MlpUnitKind {
    if n > 3 {
        MlpUnitKind::Systolic
    } else {
        MlpUnitKind::AdderTree
    }
}

/// Cycles for an `m×k` by `k×n` product on the given unit.
///
/// Systolic: `ceil(m/A)·ceil(n/A)·(2A + k − 2)`. Adder tree: each of the
/// `m·n` outputs takes `ceil(k/P)` passes of `ceil(log2 P + 1)` cycles.
pub fn mlp_cycle_model(m: u64, k: u64, n: u64, kind: MlpUnitKind, units: &MlpUnits) -> u64 {
    assert!(m > 0 && k > 0 && n > 0, "matmul dims must be positive");
    match kind {
        MlpUnitKind::Systolic => {
            let a = units.systolic_size;
            m.div_ceil(a) * n.div_ceil(a) * (2 * a + k - 2)
        }
        MlpUnitKind::AdderTree => {
            let p = units.adder_tree_width;
            let depth = ((p as f64).log2() + 1.0).ceil() as u64;
            m * n * k.div_ceil(p) * depth
        }
    }
}

/// Forward cycles of a layer stack `dims[0] → dims[1] → …` over `m` rows.
pub fn forward_cycles(m: u64, dims: &[u64], units: &MlpUnits) -> u64 {
    if m == 0 {
        return 0;
    }
    dims.windows(2)
        .map(|w| mlp_cycle_model(m, w[0], w[1], unit_for(w[1]), units))
        .sum()
}
