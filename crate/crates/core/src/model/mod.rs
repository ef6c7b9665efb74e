//! Domain types: outcome hierarchies, datasets, pair sets and win tallies.

mod dataset;
mod hierarchy;
mod wins;

pub use dataset::{Arm, Column, ColumnData, Dataset};
pub use hierarchy::{compare, Contrast, Direction, HierarchySpec, Level, TiePolicy, WinValue};
pub use wins::{summary_from_stats, win_stats, PairSet, Provenance, WinStats, WinSummary};
