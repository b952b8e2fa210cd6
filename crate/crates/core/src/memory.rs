//! Exemplar selection and the memory budget.
//!
//! Budgets are measured in original-image units: an uncompressed exemplar
//! costs 1, a compressed one costs its fractional [`memory_cost`]. Classes get
//! equal shares; within a class, exemplars are admitted in herding order until
//! the next one no longer fits.
//!
//! [`memory_cost`]: crate::compression::memory_cost

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compression::CompressedExemplar;
use crate::error::{Error, Result};

/// Slack for float accumulation when comparing summed costs with a share.
const COST_EPS: f64 = 1e-9;

/// iCaRL herding: repeatedly pick the sample that keeps the running mean of
/// the picked set closest to the class mean. Ties go to the lowest index.
pub fn herding_order(features: &[Vec<f64>]) -> Vec<usize> {
    let n = features.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = features[0].len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n as f64;
        }
    }
    let mut picked = vec![false; n];
    let mut running = vec![0.0; dim];
    let mut order = Vec::with_capacity(n);
    for step in 1..=n {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in features.iter().enumerate() {
            if picked[i] {
                continue;
            }
            let d: f64 = mean
                .iter()
                .zip(&running)
                .zip(f)
                .map(|((m, s), v)| {
                    let diff = m - (s + v) / step as f64;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("an unpicked sample remains");
        picked[i] = true;
        for (s, v) in running.iter_mut().zip(&features[i]) {
            *s += v;
        }
        order.push(i);
    }
    order
}

/// Scales a vector to unit L2 norm (zero vectors are left alone).
pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Walks `order` admitting exemplars while the running cost stays within
/// `share`; stops at the first one that does not fit. Returns the admitted
/// indices (a prefix of `order`).
pub fn pack_exemplars(class: usize, order: &[usize], costs: &[f64], share: f64) -> Result<Vec<usize>> {
    let mut used = 0.0;
    let mut admitted = Vec::new();
    for &i in order {
        let c = costs[i];
        if used + c > share + COST_EPS {
            break;
        }
        used += c;
        admitted.push(i);
    }
    if admitted.is_empty() && !order.is_empty() {
        return Err(Error::BudgetExhausted {
            class,
            cost: costs[order[0]],
            share,
        });
    }
    Ok(admitted)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// A total budget shared equally by all classes seen so far.
    Fixed,
    /// A constant quota per class.
    Growing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub class: usize,
    pub exemplar_id: u64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryLedger {
    pub regime: Regime,
    /// Total budget (fixed) or per-class quota (growing), in image units.
    pub budget: f64,
    pub entries: Vec<LedgerEntry>,
}

impl MemoryLedger {
    pub fn new(regime: Regime, budget: f64) -> Self {
        MemoryLedger {
            regime,
            budget,
            entries: Vec::new(),
        }
    }

    /// Budget available to each class once `classes_seen` classes exist.
    pub fn class_share(&self, classes_seen: usize) -> f64 {
        match self.regime {
            Regime::Fixed => self.budget / classes_seen.max(1) as f64,
            Regime::Growing => self.budget,
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.cost).sum()
    }

    pub fn class_total(&self, class: usize) -> f64 {
        self.entries.iter().filter(|e| e.class == class).map(|e| e.cost).sum()
    }

    /// Fixed: total within budget. Growing: every class within its quota.
    pub fn is_within_budget(&self) -> bool {
        match self.regime {
            Regime::Fixed => self.total() <= self.budget + COST_EPS,
            Regime::Growing => {
                let mut per: BTreeMap<usize, f64> = BTreeMap::new();
                for e in &self.entries {
                    *per.entry(e.class).or_default() += e.cost;
                }
                per.values().all(|&t| t <= self.budget + COST_EPS)
            }
        }
    }

    /// Text manifest stored next to the exemplar archive.
    pub fn manifest(&self) -> String {
        let regime = match self.regime {
            Regime::Fixed => "fixed",
            Regime::Growing => "growing",
        };
        let mut s = format!("ledger regime={regime} budget={} total={}\n", self.budget, self.total());
        for e in &self.entries {
            s.push_str(&format!("entry class={} exemplar={} cost={}\n", e.class, e.exemplar_id, e.cost));
        }
        s
    }
}

/// One stored exemplar. Never mutated after insertion.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredExemplar {
    pub id: u64,
    pub phase: usize,
    pub class: usize,
    pub exemplar: CompressedExemplar,
    pub checksum: String,
}

/// Herding-ordered exemplar lists per class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExemplarStore {
    pub classes: BTreeMap<usize, Vec<StoredExemplar>>,
    next_id: u64,
}

impl ExemplarStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn insert_class(&mut self, class: usize, exemplars: Vec<StoredExemplar>) {
        self.classes.insert(class, exemplars);
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredExemplar> {
        self.classes.values().flatten()
    }

    pub fn class_len(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, Vec::len)
    }

    pub fn mean_cost(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.iter().map(|e| e.exemplar.cost).sum::<f64>() / n as f64
    }

    pub fn ledger(&self, regime: Regime, budget: f64) -> MemoryLedger {
        MemoryLedger {
            regime,
            budget,
            entries: self
                .iter()
                .map(|e| LedgerEntry {
                    class: e.class,
                    exemplar_id: e.id,
                    cost: e.exemplar.cost,
                })
                .collect(),
        }
    }
}

/// Shrinks every class to the fixed-budget share for `classes_seen` classes
/// by dropping the tail of its herding order.
pub fn rebalance_fixed(store: &mut ExemplarStore, budget: f64, classes_seen: usize) -> MemoryLedger {
    let ledger = MemoryLedger::new(Regime::Fixed, budget);
    let share = ledger.class_share(classes_seen);
    for list in store.classes.values_mut() {
        let mut used = 0.0;
        let keep = list
            .iter()
            .take_while(|e| {
                used += e.exemplar.cost;
                used <= share + COST_EPS
            })
            .count();
        list.truncate(keep);
    }
    store.ledger(Regime::Fixed, budget)
}
