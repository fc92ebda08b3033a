//! The MANA instruction prefetcher.
//!
//! Training side: a spatial region creator (SRC) folds the retire-order
//! block stream into spatial regions queued in the SRQ; regions evicted from
//! the SRQ land in the MANA_Table, a set-associative LRU table keyed by the
//! trigger block. Trigger tags are split into a partial tag stored in the
//! entry and a high-order-bit pattern (HOBP) shared through a separate
//! set-associative table (HOBPT); the entry keeps only a small HOBP index.
//! Every insertion also writes the previous insertion's successor pointer,
//! chaining the table into the dynamic region order.
//!
//! Replay side: stream address buffers (SABs) hold the regions chased ahead
//! of the fetch stream. A fetch block matching a SAB region tops the window
//! back up to the configured lookahead; an unmatched block is tried as a
//! trigger in the MANA_Table and, on a hit, seeds a fresh SAB. Newly chased
//! regions contribute their trigger and footprint blocks as prefetch
//! candidates; with a lookahead of one no chasing ever happens and only
//! footprints are prefetched.
//!
//! Successor pointers and HOBP indices are never back-invalidated; a chase
//! returns whatever currently occupies a slot, and a replaced HOBPT entry
//! silently mis-reconstructs the trigger. Both surface only as inaccurate
//! prefetches.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{RegionGeometry, SpatialCompactor, SpatialRegion};
use crate::trace::{BlockAddress, BLOCK_ADDRESS_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManaConfig {
    pub geometry: RegionGeometry,
    pub srq_length: usize,
    pub lookahead: usize,
    pub table_entries: u64,
    pub table_ways: u32,
    pub partial_tag_bits: u32,
    pub hobpt_entries: u64,
    pub hobpt_ways: u32,
    pub sab_count: usize,
    pub sab_capacity: usize,
}

impl Default for ManaConfig {
    fn default() -> Self {
        Self {
            geometry: RegionGeometry::default(),
            srq_length: 8,
            lookahead: 3,
            table_entries: 4096,
            table_ways: 4,
            partial_tag_bits: 2,
            hobpt_entries: 128,
            hobpt_ways: 8,
            sab_count: 1,
            sab_capacity: 5,
        }
    }
}

impl ManaConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.geometry.validate()?;
        if self.srq_length == 0 {
            return Err("srq_length must be positive".into());
        }
        if self.lookahead == 0 {
            return Err("lookahead must be positive".into());
        }
        if self.sab_count == 0 {
            return Err("sab_count must be positive".into());
        }
        if self.sab_capacity < self.lookahead {
            return Err(format!(
                "sab_capacity ({}) must be at least the lookahead ({})",
                self.sab_capacity, self.lookahead
            ));
        }
        for (name, entries, ways) in [
            ("mana_table", self.table_entries, self.table_ways),
            ("hobpt", self.hobpt_entries, self.hobpt_ways),
        ] {
            if entries == 0 || ways == 0 || entries % ways as u64 != 0 {
                return Err(format!(
                    "{name}: entries must be a positive multiple of ways"
                ));
            }
            if !entries.is_power_of_two() || !(entries / ways as u64).is_power_of_two() {
                return Err(format!("{name}: entries and sets must be powers of two"));
            }
        }
        let set_bits = (self.table_entries / self.table_ways as u64).trailing_zeros();
        if self.partial_tag_bits + set_bits > BLOCK_ADDRESS_BITS {
            return Err("partial tag plus set index exceeds the block address width".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManaError {
    #[error("slot {0} does not hold a valid entry")]
    InvalidSlot(usize),
}

/// Index of a MANA_Table slot: set * ways + way.
pub type SlotId = usize;

#[derive(Debug, Clone, Copy)]
struct TableEntry {
    hobp_index: u32,
    partial_tag: u64,
    footprint: u32,
    /// Raw pointer bits; the all-ones value is the null sentinel, so a chain
    /// can never continue into the highest slot.
    successor: u32,
    stamp: u64,
}

/// Set-associative table of high-order-bit patterns.
#[derive(Debug, Clone)]
struct HobpTable {
    sets: u64,
    ways: u32,
    slots: Vec<Option<(u64, u64)>>, // (pattern, stamp)
    clock: u64,
}

impl HobpTable {
    fn new(entries: u64, ways: u32) -> Self {
        Self {
            sets: entries / ways as u64,
            ways,
            slots: vec![None; entries as usize],
            clock: 0,
        }
    }

    fn set_range(&self, pattern: u64) -> std::ops::Range<usize> {
        let set = (pattern % self.sets) as usize * self.ways as usize;
        set..set + self.ways as usize
    }

    /// Looks the pattern up without inserting. Promotes on hit.
    fn probe(&mut self, pattern: u64) -> Option<u32> {
        self.clock += 1;
        let clock = self.clock;
        let range = self.set_range(pattern);
        let base = range.start;
        for (way, slot) in self.slots[range].iter_mut().enumerate() {
            if let Some((p, stamp)) = slot {
                if *p == pattern {
                    *stamp = clock;
                    return Some((base + way) as u32);
                }
            }
        }
        None
    }

    fn get_or_insert(&mut self, pattern: u64) -> u32 {
        if let Some(index) = self.probe(pattern) {
            return index;
        }
        self.clock += 1;
        let clock = self.clock;
        let range = self.set_range(pattern);
        let base = range.start;
        let set = &mut self.slots[range];
        let way = match set.iter().position(|s| s.is_none()) {
            Some(free) => free,
            None => set
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| s.unwrap().1)
                .map(|(w, _)| w)
                .unwrap(),
        };
        set[way] = Some((pattern, clock));
        (base + way) as u32
    }

    fn pattern_at(&self, index: u32) -> Option<u64> {
        self.slots
            .get(index as usize)
            .copied()
            .flatten()
            .map(|(p, _)| p)
    }
}

/// One region chased into a SAB, with the table slot it came from.
#[derive(Debug, Clone, Copy)]
struct SabRegion {
    slot: SlotId,
    region: SpatialRegion,
}

#[derive(Debug, Clone)]
struct StreamAddressBuffer {
    window: VecDeque<SabRegion>,
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct ManaPrefetcher {
    config: ManaConfig,
    src: SpatialCompactor,
    table: Vec<Option<TableEntry>>,
    table_sets: u64,
    set_bits: u32,
    partial_mask: u64,
    null_successor: u32,
    last_inserted: Option<SlotId>,
    clock: u64,
    hobpt: HobpTable,
    sabs: Vec<StreamAddressBuffer>,
    sab_clock: u64,
}

impl ManaPrefetcher {
    pub fn new(config: ManaConfig) -> Self {
        config.validate().expect("invalid MANA configuration");
        let table_sets = config.table_entries / config.table_ways as u64;
        let sabs = (0..config.sab_count)
            .map(|_| StreamAddressBuffer {
                window: VecDeque::new(),
                stamp: 0,
            })
            .collect();
        Self {
            src: SpatialCompactor::new(config.geometry, config.srq_length),
            table: vec![None; config.table_entries as usize],
            table_sets,
            set_bits: table_sets.trailing_zeros(),
            partial_mask: (1u64 << config.partial_tag_bits) - 1,
            null_successor: (config.table_entries - 1) as u32,
            last_inserted: None,
            clock: 0,
            hobpt: HobpTable::new(config.hobpt_entries, config.hobpt_ways),
            sabs,
            sab_clock: 0,
            config,
        }
    }

    pub fn config(&self) -> &ManaConfig {
        &self.config
    }

    fn split_trigger(&self, trigger: BlockAddress) -> (u64, u64, u64) {
        let v = trigger.value();
        let set = v & (self.table_sets - 1);
        let partial = (v >> self.set_bits) & self.partial_mask;
        let pattern = v >> (self.set_bits + self.config.partial_tag_bits);
        (set, partial, pattern)
    }

    /// Feeds one retired block through the SRC. Returns the region handed to
    /// the MANA_Table, if the SRQ evicted one.
    pub fn train(&mut self, block: BlockAddress) -> Option<SpatialRegion> {
        let evicted = self.src.observe(block, |_| ())?;
        self.table_insert(&evicted);
        Some(evicted)
    }

    /// Inserts a region, keyed by its trigger. A tag hit overwrites the
    /// footprint; a miss evicts the LRU way. Either way the previously
    /// inserted slot's successor pointer is redirected here.
    pub fn table_insert(&mut self, region: &SpatialRegion) -> SlotId {
        let (set, partial, pattern) = self.split_trigger(region.trigger);
        let hobp_index = self.hobpt.get_or_insert(pattern);
        self.clock += 1;
        let clock = self.clock;
        let base = set as usize * self.config.table_ways as usize;
        let ways = self.config.table_ways as usize;
        let slot = {
            let set_slots = &mut self.table[base..base + ways];
            let hit = set_slots.iter().position(|s| {
                s.is_some_and(|e| e.hobp_index == hobp_index && e.partial_tag == partial)
            });
            let way = match hit {
                Some(way) => {
                    let entry = set_slots[way].as_mut().unwrap();
                    entry.footprint = region.footprint;
                    entry.stamp = clock;
                    way
                }
                None => {
                    let way = match set_slots.iter().position(|s| s.is_none()) {
                        Some(free) => free,
                        None => set_slots
                            .iter()
                            .enumerate()
                            .min_by_key(|(_, s)| s.unwrap().stamp)
                            .map(|(w, _)| w)
                            .unwrap(),
                    };
                    set_slots[way] = Some(TableEntry {
                        hobp_index,
                        partial_tag: partial,
                        footprint: region.footprint,
                        successor: self.null_successor,
                        stamp: clock,
                    });
                    way
                }
            };
            base + way
        };
        if let Some(prev) = self.last_inserted {
            if let Some(entry) = self.table[prev].as_mut() {
                entry.successor = slot as u32;
            }
        }
        self.last_inserted = Some(slot);
        slot
    }

    /// Rebuilds the trigger block address of the entry at `slot` from its
    /// HOBP index, partial tag and set number. A replaced HOBPT entry yields
    /// a tolerated mis-reconstruction.
    pub fn reconstruct_trigger(&self, slot: SlotId) -> Result<BlockAddress, ManaError> {
        let entry = self
            .table
            .get(slot)
            .copied()
            .flatten()
            .ok_or(ManaError::InvalidSlot(slot))?;
        let set = (slot / self.config.table_ways as usize) as u64;
        let pattern = self.hobpt.pattern_at(entry.hobp_index).unwrap_or(0);
        let value = (pattern << (self.set_bits + self.config.partial_tag_bits))
            | (entry.partial_tag << self.set_bits)
            | set;
        Ok(BlockAddress(value & ((1u64 << BLOCK_ADDRESS_BITS) - 1)))
    }

    fn region_at(&self, slot: SlotId) -> Option<SpatialRegion> {
        let entry = self.table.get(slot).copied().flatten()?;
        let trigger = self.reconstruct_trigger(slot).ok()?;
        Some(SpatialRegion {
            trigger,
            footprint: entry.footprint,
        })
    }

    /// Follows successor pointers for up to `count` regions, start included.
    /// Stops early at a null pointer. Stale chains return whatever currently
    /// occupies each slot.
    pub fn chase(
        &self,
        start_slot: SlotId,
        count: usize,
    ) -> Result<Vec<(SlotId, SpatialRegion)>, ManaError> {
        let mut out = Vec::with_capacity(count);
        let mut slot = start_slot;
        let first = self.region_at(slot).ok_or(ManaError::InvalidSlot(slot))?;
        out.push((slot, first));
        while out.len() < count {
            let entry = self.table[slot].as_ref().unwrap();
            let next = entry.successor;
            if next == self.null_successor {
                break;
            }
            slot = next as usize;
            match self.region_at(slot) {
                Some(region) => out.push((slot, region)),
                None => break,
            }
        }
        Ok(out)
    }

    /// Looks a fetch block up as a trigger. Promotes the entry on a hit.
    fn table_lookup(&mut self, block: BlockAddress) -> Option<SlotId> {
        let (set, partial, pattern) = self.split_trigger(block);
        let hobp_index = self.hobpt.probe(pattern)?;
        self.clock += 1;
        let clock = self.clock;
        let base = set as usize * self.config.table_ways as usize;
        let ways = self.config.table_ways as usize;
        for (way, slot) in self.table[base..base + ways].iter_mut().enumerate() {
            if let Some(entry) = slot {
                if entry.hobp_index == hobp_index && entry.partial_tag == partial {
                    entry.stamp = clock;
                    return Some(base + way);
                }
            }
        }
        None
    }

    /// Chases one region past the SAB's cursor and appends it, evicting the
    /// oldest window entry beyond capacity. Returns the new region.
    fn extend_sab(&mut self, sab_index: usize) -> Option<SabRegion> {
        let cursor = self.sabs[sab_index].window.back()?.slot;
        let entry = self.table.get(cursor).copied().flatten()?;
        if entry.successor == self.null_successor {
            return None;
        }
        let next_slot = entry.successor as usize;
        let region = self.region_at(next_slot)?;
        let appended = SabRegion {
            slot: next_slot,
            region,
        };
        let sab = &mut self.sabs[sab_index];
        sab.window.push_back(appended);
        while sab.window.len() > self.config.sab_capacity {
            sab.window.pop_front();
        }
        Some(appended)
    }

    fn push_candidates(&self, out: &mut Vec<BlockAddress>, region: &SpatialRegion) {
        out.push(region.trigger);
        out.extend(region.footprint_blocks(&self.config.geometry));
    }

    /// Replay step for one fetch-stream block (the caller dedupes
    /// consecutive repeats). Returns prefetch candidates in issue order.
    pub fn on_fetch(&mut self, block: BlockAddress) -> Vec<BlockAddress> {
        self.sab_clock += 1;
        let stamp = self.sab_clock;
        let lookahead = self.config.lookahead;
        let mut candidates = Vec::new();

        // most-recently-used SAB first; inside a SAB prefer the freshest
        // matching region so the lookahead is measured from the stream front
        let mut order: Vec<usize> = (0..self.sabs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.sabs[i].stamp));
        for sab_index in order {
            let matched = self.sabs[sab_index]
                .window
                .iter()
                .rposition(|r| self.config.geometry.covers(r.region.trigger, block));
            if let Some(position) = matched {
                self.sabs[sab_index].stamp = stamp;
                // regions buffered from the matched one onwards
                let mut buffered = self.sabs[sab_index].window.len() - position;
                while buffered < lookahead {
                    match self.extend_sab(sab_index) {
                        Some(appended) => {
                            self.push_candidates(&mut candidates, &appended.region);
                            buffered += 1;
                        }
                        None => break,
                    }
                }
                return candidates;
            }
        }

        // no SAB covers the block: try it as a trigger in the table
        let Some(slot) = self.table_lookup(block) else {
            return candidates;
        };
        let seed = self.region_at(slot).expect("looked-up slot is occupied");
        // seed a fresh SAB in the LRU slot; the seed region's own footprint
        // is prefetched but its trigger is the block being fetched
        let lru = (0..self.sabs.len())
            .min_by_key(|&i| self.sabs[i].stamp)
            .unwrap();
        let sab = &mut self.sabs[lru];
        sab.window.clear();
        sab.window.push_back(SabRegion { slot, region: seed });
        sab.stamp = stamp;
        candidates.extend(seed.footprint_blocks(&self.config.geometry));
        while self.sabs[lru].window.len() < lookahead {
            match self.extend_sab(lru) {
                Some(appended) => self.push_candidates(&mut candidates, &appended.region),
                None => break,
            }
        }
        candidates
    }

    /// Regions still sitting in the SRQ, oldest first.
    pub fn srq_regions(&self) -> Vec<SpatialRegion> {
        self.src.regions().cloned().collect()
    }

    /// Occupied slots as (slot, reconstructed trigger, footprint, successor
    /// trigger if the pointer is non-null). Test and inspection surface.
    pub fn table_associations(&self) -> Vec<(SlotId, BlockAddress, u32, Option<BlockAddress>)> {
        let mut out = Vec::new();
        for slot in 0..self.table.len() {
            let Some(entry) = self.table[slot] else {
                continue;
            };
            let trigger = self.reconstruct_trigger(slot).unwrap();
            let successor = if entry.successor == self.null_successor {
                None
            } else {
                self.region_at(entry.successor as usize).map(|r| r.trigger)
            };
            out.push((slot, trigger, entry.footprint, successor));
        }
        out
    }

    /// Metadata bits: MANA_Table entries plus the HOBPT patterns.
    pub fn storage_bits(&self) -> u64 {
        let c = &self.config;
        let entry_bits = self.entry_bits();
        let pattern_bits = BLOCK_ADDRESS_BITS - self.set_bits - c.partial_tag_bits;
        entry_bits * c.table_entries + pattern_bits as u64 * c.hobpt_entries
    }

    pub fn entry_bits(&self) -> u64 {
        let c = &self.config;
        let hobp_index_bits = c.hobpt_entries.trailing_zeros() as u64;
        let successor_bits = c.table_entries.trailing_zeros() as u64;
        hobp_index_bits
            + c.partial_tag_bits as u64
            + c.geometry.footprint_bits() as u64
            + successor_bits
    }
}
