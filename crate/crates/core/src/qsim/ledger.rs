use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Running totals of classical work and modeled quantum queries.
///
/// Shared by reference; counters are atomic so parallel kernel evaluation can
/// charge them directly. Modeled costs are charged from sequential code only,
/// which keeps the float sums independent of thread scheduling.
#[derive(Debug, Default)]
pub struct CostLedger {
    row_queries_qk: AtomicU64,
    row_queries_v: AtomicU64,
    kernel_evals: AtomicU64,
    modeled: Mutex<BTreeMap<String, f64>>,
}

/// Plain-data copy of a ledger.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub classical_row_queries_qk: u64,
    pub classical_row_queries_v: u64,
    pub kernel_evals: u64,
    pub modeled_quantum_queries: f64,
    pub modeled_breakdown: BTreeMap<String, f64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_qk_rows(&self, count: u64) {
        self.row_queries_qk.fetch_add(count, Ordering::Relaxed);
    }

    pub fn charge_v_rows(&self, count: u64) {
        self.row_queries_v.fetch_add(count, Ordering::Relaxed);
    }

    pub fn charge_kernel_evals(&self, count: u64) {
        self.kernel_evals.fetch_add(count, Ordering::Relaxed);
    }

    /// Adds modeled quantum queries under `subroutine`. Negative or
    /// non-finite amounts are a bug in the caller.
    pub fn charge_modeled(&self, subroutine: &str, amount: f64) {
        assert!(
            amount >= 0.0 && amount.is_finite(),
            "modeled cost must be finite and nonnegative, got {amount} for {subroutine}"
        );
        let mut map = self.modeled.lock().expect("ledger mutex poisoned");
        *map.entry(subroutine.to_string()).or_insert(0.0) += amount;
    }

    pub fn classical_row_queries_qk(&self) -> u64 {
        self.row_queries_qk.load(Ordering::Relaxed)
    }

    pub fn classical_row_queries_v(&self) -> u64 {
        self.row_queries_v.load(Ordering::Relaxed)
    }

    pub fn kernel_evals(&self) -> u64 {
        self.kernel_evals.load(Ordering::Relaxed)
    }

    pub fn modeled_quantum_queries(&self) -> f64 {
        self.modeled
            .lock()
            .expect("ledger mutex poisoned")
            .values()
            .sum()
    }

    pub fn modeled_breakdown(&self) -> BTreeMap<String, f64> {
        self.modeled.lock().expect("ledger mutex poisoned").clone()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let modeled_breakdown = self.modeled_breakdown();
        LedgerSnapshot {
            classical_row_queries_qk: self.classical_row_queries_qk(),
            classical_row_queries_v: self.classical_row_queries_v(),
            kernel_evals: self.kernel_evals(),
            modeled_quantum_queries: modeled_breakdown.values().sum(),
            modeled_breakdown,
        }
    }
}

/// `log₂(n + 2)`, the fixed stand-in for the suppressed polylog factors.
pub fn polylog(n: usize) -> f64 {
    ((n + 2) as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_accumulate() {
        let l = CostLedger::new();
        l.charge_qk_rows(3);
        l.charge_qk_rows(2);
        l.charge_v_rows(7);
        l.charge_kernel_evals(11);
        l.charge_modeled("a", 1.5);
        l.charge_modeled("b", 2.0);
        l.charge_modeled("a", 0.5);
        let s = l.snapshot();
        assert_eq!(s.classical_row_queries_qk, 5);
        assert_eq!(s.classical_row_queries_v, 7);
        assert_eq!(s.kernel_evals, 11);
        assert_eq!(s.modeled_quantum_queries, 4.0);
        assert_eq!(s.modeled_breakdown["a"], 2.0);
    }

    #[test]
    fn parallel_charges_are_not_lost() {
        use rayon::prelude::*;
        let l = CostLedger::new();
        (0..1000).into_par_iter().for_each(|_| l.charge_kernel_evals(1));
        assert_eq!(l.kernel_evals(), 1000);
    }

    #[test]
    #[should_panic]
    fn negative_modeled_cost_panics() {
        CostLedger::new().charge_modeled("x", -1.0);
    }

    #[test]
    fn polylog_values() {
        assert_eq!(polylog(0), 1.0);
        assert_eq!(polylog(2), 2.0);
        assert_eq!(polylog(1022), 10.0);
    }
}
