//! The information set `H_t` available when unit (or block) `t` is assigned.

use crate::population::UnitRecord;

/// Completed records for everything before step `t`, plus the covariates of
/// the units about to be assigned (one for unit designs, `n_t` for blocks).
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    pub past: &'a [UnitRecord],
    pub current: &'a [Vec<f64>],
    pub num_arms: usize,
}

impl<'a> HistoryView<'a> {
    pub fn new(past: &'a [UnitRecord], current: &'a [Vec<f64>], num_arms: usize) -> Self {
        HistoryView {
            past,
            current,
            num_arms,
        }
    }

    /// 1-based index of the first unit being assigned.
    pub fn time(&self) -> usize {
        self.past.len() + 1
    }

    /// `(count, sum)` of observed outcomes per arm.
    pub fn arm_totals(&self) -> Vec<(usize, f64)> {
        let mut totals = vec![(0usize, 0.0f64); self.num_arms];
        for r in self.past {
            let entry = &mut totals[r.arm];
            entry.0 += 1;
            entry.1 += r.outcome;
        }
        totals
    }
}
