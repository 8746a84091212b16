//! Cycle-approximate model of a hash-grid training accelerator: grid cores
//! with banked table SRAM, a read reorderer in front of the banks, an update
//! merger behind the gradient scatter, fusable cores and MLP/DRAM timing.

pub mod bank;
pub mod bum;
pub mod error;
pub mod frm;
pub mod fusion;
pub mod mlp_model;
pub mod simulate;

pub use bank::{map_bank, BankSlot, SramBankModel};
pub use bum::{bum_process, BumConfig, BumOutput, Precision, Writeback};
pub use error::{Result, SimError};
pub use frm::{frm_cycles, frm_schedule, naive_cycles, optimal_cycles, FrmSchedule, IssueStats};
pub use fusion::{select_fusion, table_bytes, FusionMode};
pub use mlp_model::{mlp_cycle_model, MlpUnitKind, MlpUnits};
pub use simulate::{simulate, GridStats, PhaseStats, SimConfig, SimReport, CSV_HEADER};
