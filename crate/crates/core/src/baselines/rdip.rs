//! RDIP: return-address-stack directed instruction prefetcher.
//!
//! The program state is summarized as a signature, the XOR of the top four
//! RAS entries with the low bit encoding the event type (call = 1, ret = 0).
//! A set-associative Miss Table maps signatures to up to three trigger
//! blocks with (2,6) footprints. Misses observed while a signature is
//! current are recorded under the *previous* signature, so a replayed
//! lookup prefetches one call/return ahead of the fetch stream.

use serde::{Deserialize, Serialize};

use crate::spatial::RegionGeometry;
use crate::trace::{BlockAddress, BranchKind, TraceRecord, BLOCK_ADDRESS_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdipConfig {
    pub ras_depth: usize,
    pub table_entries: u64,
    pub table_ways: u32,
    pub triggers_per_entry: usize,
}

impl Default for RdipConfig {
    fn default() -> Self {
        Self {
            ras_depth: 16,
            table_entries: 4096,
            table_ways: 4,
            triggers_per_entry: 3,
        }
    }
}

impl RdipConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ras_depth < 4 {
            return Err("RAS depth must be at least 4".into());
        }
        if self.triggers_per_entry == 0 {
            return Err("triggers_per_entry must be positive".into());
        }
        if self.table_entries == 0
            || self.table_ways == 0
            || !self.table_entries.is_multiple_of(self.table_ways as u64)
            || !(self.table_entries / self.table_ways as u64).is_power_of_two()
        {
            return Err("miss table sets must be a power of two".into());
        }
        Ok(())
    }
}

/// Return-address stack plus the rolling signature pair. Shared between the
/// prefetcher and distinct-record counting.
#[derive(Debug, Clone)]
pub struct SignatureTracker {
    ras: Vec<u64>,
    top: usize,
    len: usize,
    current: u32,
    previous: u32,
}

impl SignatureTracker {
    pub fn new(depth: usize) -> Self {
        Self {
            ras: vec![0; depth],
            top: 0,
            len: 0,
            current: 0,
            previous: 0,
        }
    }

    /// Updates the RAS and signatures for a call or return record. Returns
    /// the new signature, or None for non-call/ret records.
    pub fn on_event(&mut self, record: &TraceRecord) -> Option<u32> {
        let event_bit = match record.branch_kind {
            BranchKind::Call => {
                // the return address: the instruction after the call
                self.push(record.address + 1);
                1
            }
            BranchKind::Ret => {
                self.pop();
                0
            }
            _ => return None,
        };
        let xor = self.top_four_xor();
        self.previous = self.current;
        self.current = (xor as u32 & !1) | event_bit;
        Some(self.current)
    }

    fn push(&mut self, address: u64) {
        let depth = self.ras.len();
        self.ras[self.top] = address;
        self.top = (self.top + 1) % depth;
        self.len = (self.len + 1).min(depth); // overwrite on overflow
    }

    fn pop(&mut self) {
        if self.len > 0 {
            let depth = self.ras.len();
            self.top = (self.top + depth - 1) % depth;
            self.len -= 1;
        }
    }

    fn top_four_xor(&self) -> u64 {
        let depth = self.ras.len();
        let mut xor = 0;
        for i in 0..4.min(self.len) {
            xor ^= self.ras[(self.top + depth - 1 - i) % depth];
        }
        xor
    }

    pub fn current(&self) -> u32 {
        self.current
    }

    pub fn previous(&self) -> u32 {
        self.previous
    }
}

#[derive(Debug, Clone, Copy)]
struct TriggerSlot {
    trigger: u64,
    footprint: u32,
    stamp: u64,
}

#[derive(Debug, Clone)]
struct MissEntry {
    tag: u32,
    slots: Vec<Option<TriggerSlot>>,
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct RdipPrefetcher {
    config: RdipConfig,
    geometry: RegionGeometry,
    tracker: SignatureTracker,
    sets: u64,
    table: Vec<Option<MissEntry>>,
    clock: u64,
}

impl RdipPrefetcher {
    pub fn new(config: RdipConfig) -> Self {
        config.validate().expect("invalid RDIP configuration");
        let sets = config.table_entries / config.table_ways as u64;
        Self {
            geometry: RegionGeometry::new(2, 6),
            tracker: SignatureTracker::new(config.ras_depth),
            sets,
            table: vec![None; config.table_entries as usize],
            clock: 0,
            config,
        }
    }

    fn set_bits(&self) -> u32 {
        self.sets.trailing_zeros()
    }

    fn split(&self, signature: u32) -> (usize, u32) {
        let set = (signature as u64 % self.sets) as usize;
        (set, signature >> self.set_bits())
    }

    /// Handles a call/return record: updates the RAS and signatures, then
    /// looks the new signature up. Returns every block encoded under it.
    pub fn on_call_or_return(&mut self, record: &TraceRecord) -> Vec<BlockAddress> {
        let Some(signature) = self.tracker.on_event(record) else {
            return Vec::new();
        };
        self.lookup(signature)
    }

    fn lookup(&mut self, signature: u32) -> Vec<BlockAddress> {
        self.clock += 1;
        let clock = self.clock;
        let (set, tag) = self.split(signature);
        let base = set * self.config.table_ways as usize;
        let geometry = self.geometry;
        for e in self.table[base..base + self.config.table_ways as usize]
            .iter_mut()
            .flatten()
        {
            if e.tag == tag {
                e.stamp = clock;
                let mut blocks = Vec::new();
                for slot in e.slots.iter().flatten() {
                    let region = crate::spatial::SpatialRegion {
                        trigger: BlockAddress(slot.trigger),
                        footprint: slot.footprint,
                    };
                    blocks.push(region.trigger);
                    blocks.extend(region.footprint_blocks(&geometry));
                }
                return blocks;
            }
        }
        Vec::new()
    }

    /// Records a demand miss under the previous signature: an existing
    /// trigger slot whose (2,6) window covers the block gets its footprint
    /// bit; otherwise a slot is allocated, evicting the slot-LRU if needed.
    pub fn on_demand_miss(&mut self, block: BlockAddress) {
        let signature = self.tracker.previous();
        self.clock += 1;
        let clock = self.clock;
        let (set, tag) = self.split(signature);
        let ways = self.config.table_ways as usize;
        let base = set * ways;
        let set_slots = &mut self.table[base..base + ways];
        let way = match set_slots
            .iter()
            .position(|e| e.as_ref().is_some_and(|e| e.tag == tag))
        {
            Some(way) => way,
            None => {
                let way = match set_slots.iter().position(|e| e.is_none()) {
                    Some(free) => free,
                    None => set_slots
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, e)| e.as_ref().unwrap().stamp)
                        .map(|(w, _)| w)
                        .unwrap(),
                };
                set_slots[way] = Some(MissEntry {
                    tag,
                    slots: vec![None; self.config.triggers_per_entry],
                    stamp: clock,
                });
                way
            }
        };
        let entry = set_slots[way].as_mut().unwrap();
        entry.stamp = clock;
        for slot in entry.slots.iter_mut().flatten() {
            let d = block.value() as i64 - slot.trigger as i64;
            if let Some(bit) = self.geometry.offset_bit(d) {
                slot.footprint |= 1 << bit;
                slot.stamp = clock;
                return;
            }
            if d == 0 {
                slot.stamp = clock;
                return;
            }
        }
        let free = entry.slots.iter().position(|s| s.is_none());
        let victim = free.unwrap_or_else(|| {
            entry
                .slots
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| s.unwrap().stamp)
                .map(|(i, _)| i)
                .unwrap()
        });
        entry.slots[victim] = Some(TriggerSlot {
            trigger: block.value(),
            footprint: 0,
            stamp: clock,
        });
    }

    /// Miss Table bits: per-entry cost times capacity.
    pub fn storage_bits(&self) -> u64 {
        let block_bits = BLOCK_ADDRESS_BITS as u64;
        let tag_bits = 32 - self.set_bits() as u64;
        let entry = tag_bits
            + self.config.triggers_per_entry as u64
                * (block_bits + self.geometry.footprint_bits() as u64);
        entry * self.config.table_entries
    }

    #[cfg(test)]
    fn trigger_slots(&self, signature: u32) -> Vec<(u64, u32)> {
        let (set, tag) = self.split(signature);
        let base = set * self.config.table_ways as usize;
        for entry in self.table[base..base + self.config.table_ways as usize]
            .iter()
            .flatten()
        {
            if entry.tag == tag {
                return entry
                    .slots
                    .iter()
                    .flatten()
                    .map(|s| (s.trigger, s.footprint))
                    .collect();
            }
        }
        Vec::new()
    }
}
