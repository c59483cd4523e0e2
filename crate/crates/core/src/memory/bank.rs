//! Dual short/long-term exemplar memory under a byte budget.
//!
//! The short-term store is a FIFO queue. The long-term store is kept sorted by
//! descending eviction priority, so its tail is always the next record to go.
//! Eviction priority orders records by importance, then older age, then lower
//! task id, then earlier insertion.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::importance::{importance, ImportanceWeights};
use super::record::{record_size, FeatureRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub code_dim: usize,
    pub stm_capacity: usize,
    pub ltm_capacity: usize,
    pub budget_bytes: usize,
    pub weights: ImportanceWeights,
}

pub const DEFAULT_BUDGET_BYTES: usize = 102_400;

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            code_dim: 10,
            stm_capacity: 1000,
            ltm_capacity: 5000,
            budget_bytes: DEFAULT_BUDGET_BYTES,
            weights: ImportanceWeights::default(),
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.code_dim == 0 {
            return Err(Error::Config {
                field: "code_dim",
                reason: "must be positive".into(),
            });
        }
        self.weights.validate()
    }

    /// Most records the byte budget admits.
    pub fn budget_records(&self) -> usize {
        self.budget_bytes / record_size(self.code_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slot {
    pub record: FeatureRecord,
    pub seq: u64,
}

/// Ordering by eviction priority: `Less` means evicted earlier.
pub(crate) fn evict_order(a: &Slot, b: &Slot) -> Ordering {
    a.record
        .importance
        .total_cmp(&b.record.importance)
        .then(b.record.age.cmp(&a.record.age))
        .then(a.record.task_id.cmp(&b.record.task_id))
        .then(a.seq.cmp(&b.seq))
}

/// Which store a record lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Store {
    Short,
    Long,
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    config: BankConfig,
    stm: VecDeque<Slot>,
    ltm: Vec<Slot>,
    step_counter: u64,
    next_seq: u64,
}

impl MemoryBank {
    pub fn new(config: BankConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            stm: VecDeque::new(),
            ltm: Vec::new(),
            step_counter: 0,
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn stm_len(&self) -> usize {
        self.stm.len()
    }

    pub fn ltm_len(&self) -> usize {
        self.ltm.len()
    }

    pub fn len(&self) -> usize {
        self.stm.len() + self.ltm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn record_bytes(&self) -> usize {
        record_size(self.config.code_dim)
    }

    /// Payload bytes of all resident records (container overhead excluded).
    pub fn memory_bytes(&self) -> usize {
        self.len() * self.record_bytes()
    }

    /// Short-term records, oldest first.
    pub fn stm(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.stm.iter().map(|s| &s.record)
    }

    /// Long-term records by descending importance.
    pub fn ltm(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.ltm.iter().map(|s| &s.record)
    }

    /// Every record: short-term first, then long-term.
    pub fn records(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.stm().chain(self.ltm())
    }

    pub fn score(&self, record: &FeatureRecord) -> Result<f32> {
        Ok(importance(
            record.uncertainty as f64,
            record.difficulty as f64,
            record.age,
            &self.config.weights,
        )? as f32)
    }

    fn admit(&mut self, mut record: FeatureRecord) -> Result<Slot> {
        record.validate(self.config.code_dim)?;
        record.importance = self.score(&record)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        Ok(Slot { record, seq })
    }

    /// Appends to the short-term queue, dropping its oldest entry past
    /// capacity, then enforces the byte budget.
    pub fn stm_insert(&mut self, record: FeatureRecord) -> Result<()> {
        let slot = self.admit(record)?;
        self.stm.push_back(slot);
        if self.stm.len() > self.config.stm_capacity {
            self.stm.pop_front();
        }
        self.enforce_budget();
        Ok(())
    }

    /// Inserts into the long-term store. When full, the lowest-priority
    /// resident is replaced only if it is strictly less important than the
    /// newcomer. Returns whether the record was kept.
    pub fn ltm_insert(&mut self, record: FeatureRecord) -> Result<bool> {
        let slot = self.admit(record)?;
        let kept = self.ltm_place(slot);
        self.enforce_budget();
        Ok(kept)
    }

    fn ltm_place(&mut self, slot: Slot) -> bool {
        if self.config.ltm_capacity == 0 {
            return false;
        }
        if self.ltm.len() >= self.config.ltm_capacity {
            let weakest = self.ltm.last().expect("full store is non-empty");
            if weakest.record.importance >= slot.record.importance {
                return false;
            }
            self.ltm.pop();
        }
        let pos = self.ltm.partition_point(|s| evict_order(s, &slot) == Ordering::Greater);
        self.ltm.insert(pos, slot);
        true
    }

    /// Moves every short-term record whose current importance is below the
    /// threshold into the long-term store. Ages carry over. Returns how many
    /// records left the short-term store.
    pub fn consolidate(&mut self) -> usize {
        self.refresh_scores();
        let w = self.config.weights;
        let (leaving, staying): (VecDeque<Slot>, VecDeque<Slot>) =
            std::mem::take(&mut self.stm).into_iter().partition(|s| {
                let r = &s.record;
                importance(r.uncertainty as f64, r.difficulty as f64, r.age, &w).expect("validated on admission")
                    < w.tau
            });
        self.stm = staying;
        let migrated = leaving.len();
        for slot in leaving {
            self.ltm_place(slot);
        }
        self.enforce_budget();
        migrated
    }

    /// Evicts lowest-priority records, long-term first, until the payload fits
    /// the budget. Returns the number of evictions.
    pub fn enforce_budget(&mut self) -> usize {
        let mut evicted = 0;
        while self.memory_bytes() > self.config.budget_bytes {
            if self.ltm.pop().is_none() {
                let idx = self
                    .stm
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| evict_order(a, b))
                    .map(|(i, _)| i)
                    .expect("over budget implies a resident record");
                self.stm.remove(idx);
            }
            evicted += 1;
        }
        evicted
    }

    /// Ages every record by one step.
    pub fn tick_age(&mut self) {
        self.step_counter += 1;
        for slot in self.stm.iter_mut().chain(self.ltm.iter_mut()) {
            slot.record.age = slot.record.age.saturating_add(1);
        }
        self.refresh_scores();
    }

    fn refresh_scores(&mut self) {
        let w = self.config.weights;
        let rescore = |slot: &mut Slot| {
            let r = &slot.record;
            slot.record.importance = importance(r.uncertainty as f64, r.difficulty as f64, r.age, &w)
                .expect("stored scores were validated on admission") as f32;
        };
        self.stm.iter_mut().for_each(rescore);
        self.ltm.iter_mut().for_each(rescore);
        self.ltm.sort_by(|a, b| evict_order(b, a));
    }

    /// Record at a position of the union (short-term first).
    pub fn get(&self, index: usize) -> Option<(Store, &FeatureRecord)> {
        if index < self.stm.len() {
            Some((Store::Short, &self.stm[index].record))
        } else {
            self.ltm.get(index - self.stm.len()).map(|s| (Store::Long, &s.record))
        }
    }

    /// Rebuilds a bank from stores in wire order. Fails if the contents break
    /// the configured capacities or budget.
    pub(crate) fn from_parts(config: BankConfig, stm: Vec<FeatureRecord>, ltm: Vec<FeatureRecord>) -> Result<Self> {
        let mut bank = Self::new(config)?;
        if stm.len() > config.stm_capacity || ltm.len() > config.ltm_capacity {
            return Err(Error::InvalidArgument(format!(
                "stores hold {} + {} records, capacities are {} + {}",
                stm.len(),
                ltm.len(),
                config.stm_capacity,
                config.ltm_capacity
            )));
        }
        let n_ltm = ltm.len() as u64;
        for (i, record) in stm.into_iter().enumerate() {
            record.validate(config.code_dim)?;
            bank.stm.push_back(Slot {
                record,
                seq: n_ltm + i as u64,
            });
        }
        // Earlier long-term entries rank higher, so they get later sequence numbers.
        for (i, record) in ltm.into_iter().enumerate() {
            record.validate(config.code_dim)?;
            bank.ltm.push(Slot {
                record,
                seq: n_ltm - 1 - i as u64,
            });
        }
        bank.ltm.sort_by(|a, b| evict_order(b, a));
        bank.next_seq = n_ltm + bank.stm.len() as u64;
        if bank.memory_bytes() > config.budget_bytes {
            return Err(Error::InvalidArgument(format!(
                "{} payload bytes exceed the {}-byte budget",
                bank.memory_bytes(),
                config.budget_bytes
            )));
        }
        Ok(bank)
    }

    /// True when both stores hold the same records in the same order.
    pub fn same_contents(&self, other: &MemoryBank) -> bool {
        self.config.code_dim == other.config.code_dim && self.stm().eq(other.stm()) && self.ltm().eq(other.ltm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: f32, d: f32, task: u32) -> FeatureRecord {
        FeatureRecord::new(vec![0.5; 10], task, task, u, d)
    }

    fn small(stm: usize, ltm: usize, budget_records: usize) -> MemoryBank {
        MemoryBank::new(BankConfig {
            stm_capacity: stm,
            ltm_capacity: ltm,
            budget_bytes: budget_records * 88,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn stm_fifo_drops_oldest() {
        let mut bank = small(3, 10, 100);
        for i in 0..4 {
            bank.stm_insert(rec(0.9, 0.9, i)).unwrap();
        }
        let tasks: Vec<u32> = bank.stm().map(|r| r.task_id).collect();
        assert_eq!(tasks, vec![1, 2, 3]);
    }

    #[test]
    fn insert_into_empty_bank() {
        let mut bank = small(3, 3, 10);
        bank.stm_insert(rec(0.1, 0.1, 0)).unwrap();
        assert_eq!(bank.stm_len(), 1);
        assert_eq!(bank.memory_bytes(), 88);
        assert!(bank
            .stm_insert(FeatureRecord::new(vec![0.0; 3], 0, 0, 0.0, 0.0))
            .is_err());
    }

    #[test]
    fn full_ltm_discards_weaker_newcomer() {
        let mut bank = small(5, 2, 100);
        bank.ltm_insert(rec(0.8, 0.8, 0)).unwrap();
        bank.ltm_insert(rec(0.6, 0.6, 1)).unwrap();
        let before: Vec<_> = bank.ltm().cloned().collect();
        assert!(!bank.ltm_insert(rec(0.1, 0.1, 2)).unwrap());
        assert_eq!(bank.ltm().cloned().collect::<Vec<_>>(), before);
        assert!(bank.ltm_insert(rec(0.7, 0.7, 3)).unwrap());
        let tasks: Vec<u32> = bank.ltm().map(|r| r.task_id).collect();
        assert_eq!(tasks, vec![0, 3]);
    }

    #[test]
    fn ltm_ties_evict_older_then_lower_task() {
        let mut bank = small(5, 2, 100);
        let mut old = rec(0.5, 0.5, 5);
        old.age = 0;
        bank.ltm_insert(old).unwrap();
        bank.tick_age();
        bank.ltm_insert(rec(0.5, 0.5, 6)).unwrap();
        // tail is the older record (task 5)
        assert_eq!(bank.ltm().last().unwrap().task_id, 5);
        let mut bank = small(5, 3, 100);
        bank.ltm_insert(rec(0.5, 0.5, 9)).unwrap();
        bank.ltm_insert(rec(0.5, 0.5, 2)).unwrap();
        assert_eq!(bank.ltm().last().unwrap().task_id, 2);
    }

    #[test]
    fn consolidation_moves_low_importance_only() {
        let w = ImportanceWeights {
            a_max: 4,
            ..Default::default()
        };
        let mut bank = MemoryBank::new(BankConfig {
            weights: w,
            ..Default::default()
        })
        .unwrap();
        // 0.15 + 0.2 + 0.3 = 0.65 at age 0, 0.35 once fully aged
        bank.stm_insert(rec(0.5, 0.5, 0)).unwrap();
        bank.stm_insert(rec(1.0, 1.0, 1)).unwrap();
        assert_eq!(bank.consolidate(), 0);
        for _ in 0..4 {
            bank.tick_age();
        }
        assert_eq!(bank.consolidate(), 1);
        assert_eq!(bank.ltm().next().unwrap().task_id, 0);
        assert_eq!(bank.ltm().next().unwrap().age, 4);
        assert_eq!(bank.stm().next().unwrap().task_id, 1);
    }

    #[test]
    fn budget_caps_at_1163_records() {
        let mut bank = MemoryBank::new(BankConfig::default()).unwrap();
        for i in 0..1200u32 {
            bank.stm_insert(rec((i % 100) as f32 / 100.0, 0.0, i)).unwrap();
            if i % 3 == 0 {
                bank.consolidate();
            }
            assert!(bank.memory_bytes() <= 102_400);
        }
        assert_eq!(bank.len(), 1163);
        assert_eq!(bank.memory_bytes(), 102_344);
        assert_eq!(bank.config().budget_records(), 1163);
    }

    #[test]
    fn enforce_budget_under_budget_is_noop() {
        let mut bank = small(5, 5, 5);
        bank.stm_insert(rec(0.1, 0.2, 0)).unwrap();
        assert_eq!(bank.enforce_budget(), 0);
    }

    #[test]
    fn stm_eviction_picks_lowest_importance() {
        let mut bank = small(10, 0, 2);
        bank.stm_insert(rec(0.9, 0.9, 0)).unwrap();
        bank.stm_insert(rec(0.1, 0.1, 1)).unwrap();
        bank.stm_insert(rec(0.5, 0.5, 2)).unwrap();
        let tasks: Vec<u32> = bank.stm().map(|r| r.task_id).collect();
        assert_eq!(tasks, vec![0, 2]);
    }

    #[test]
    fn tick_ages_and_decays() {
        let mut bank = small(5, 5, 10);
        bank.stm_insert(rec(0.2, 0.2, 0)).unwrap();
        let i0 = bank.stm().next().unwrap().importance;
        bank.tick_age();
        let r = bank.stm().next().unwrap();
        assert_eq!(r.age, 1);
        assert!(r.importance < i0);
        assert_eq!(bank.step_counter(), 1);
    }
}
