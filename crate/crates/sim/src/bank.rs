//! Address-to-bank mapping for the banked hash-table SRAM.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Row-interleaved bank layout: `row = addr / row_width`, `bank = row % bank_count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SramBankModel {
    pub bank_count: u32,
    pub row_width: u32,
}

impl Default for SramBankModel {
    fn default() -> Self {
        Self { bank_count: 8, row_width: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BankSlot {
    pub bank: u32,
    pub row: u64,
}

impl SramBankModel {
    pub fn with_banks(self, bank_count: u32) -> Self {
        Self { bank_count, ..self }
    }

    /// Unchecked mapping.
    #[inline]
    pub fn slot(&self, address: u64) -> BankSlot {
        let row = address / u64::from(self.row_width);
        BankSlot { bank: (row % u64::from(self.bank_count)) as u32, row }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bank_count == 0 || self.row_width == 0 {
            return Err(contract("bank_count and row_width must be positive"));
        }
        Ok(())
    }
}

/// Maps `address` of a table with `table_entries` entries to its bank and row.
pub fn map_bank(address: u64, model: &SramBankModel, table_entries: u64) -> Result<BankSlot> {
    model.validate()?;
    if address >= table_entries {
        return Err(contract(format!("address {address} outside table of {table_entries} entries")));
    }
    Ok(model.slot(address))
}
