//! Spatial regions: a trigger block plus a footprint bit-vector over its
//! neighborhood, and the compactor that folds a retire-order block stream
//! into a queue of such regions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::trace::BlockAddress;

/// An (X, Y) region covers X blocks behind and Y blocks ahead of the trigger.
/// The trigger block itself is implicit and never holds a footprint bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGeometry {
    pub behind: u8,
    pub ahead: u8,
}

impl RegionGeometry {
    pub const fn new(behind: u8, ahead: u8) -> Self {
        Self { behind, ahead }
    }

    pub fn footprint_bits(&self) -> u32 {
        self.behind as u32 + self.ahead as u32
    }

    /// True when `block` lies in the region of `trigger`, trigger included.
    pub fn covers(&self, trigger: BlockAddress, block: BlockAddress) -> bool {
        let d = block.value() as i64 - trigger.value() as i64;
        -(self.behind as i64) <= d && d <= self.ahead as i64
    }

    /// Footprint bit position for the block at signed offset `d` from the
    /// trigger: offsets -behind..=-1 map to bits 0..behind, offsets 1..=ahead
    /// map to bits behind..behind+ahead. Offset 0 has no bit.
    pub fn offset_bit(&self, d: i64) -> Option<u32> {
        if d == 0 {
            return None;
        }
        if -(self.behind as i64) <= d && d < 0 {
            Some((d + self.behind as i64) as u32)
        } else if 0 < d && d <= self.ahead as i64 {
            Some(self.behind as u32 + (d - 1) as u32)
        } else {
            None
        }
    }

    pub fn bit_offset(&self, bit: u32) -> i64 {
        debug_assert!(bit < self.footprint_bits());
        if bit < self.behind as u32 {
            bit as i64 - self.behind as i64
        } else {
            (bit - self.behind as u32) as i64 + 1
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.footprint_bits() == 0 || self.footprint_bits() > 30 {
            return Err(format!(
                "region geometry ({}, {}) must have 1..=30 footprint bits",
                self.behind, self.ahead
            ));
        }
        Ok(())
    }
}

impl Default for RegionGeometry {
    fn default() -> Self {
        Self::new(0, 8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialRegion {
    pub trigger: BlockAddress,
    pub footprint: u32,
}

impl SpatialRegion {
    pub fn new(trigger: BlockAddress) -> Self {
        Self {
            trigger,
            footprint: 0,
        }
    }

    /// Marks `block` in the footprint. Returns false when the block is
    /// outside the region (or is the trigger, which carries no bit).
    pub fn mark(&mut self, geometry: &RegionGeometry, block: BlockAddress) -> bool {
        match geometry.offset_bit(block.value() as i64 - self.trigger.value() as i64) {
            Some(bit) => {
                self.footprint |= 1 << bit;
                true
            }
            None => false,
        }
    }

    /// Expands the footprint into block addresses, trigger excluded.
    pub fn footprint_blocks(&self, geometry: &RegionGeometry) -> Vec<BlockAddress> {
        let mut blocks = Vec::new();
        for bit in 0..geometry.footprint_bits() {
            if self.footprint & (1 << bit) != 0 {
                if let Some(b) = self.trigger.offset(geometry.bit_offset(bit)) {
                    blocks.push(b);
                }
            }
        }
        blocks
    }
}

/// Folds the retire-order block stream into spatial regions.
///
/// Consecutive repeats of the same block are ignored. A block falling inside
/// a queued region sets its footprint bit; anything else evicts the oldest
/// region (once the queue is full) and opens a fresh region triggered by the
/// block. Evicted regions are handed back to the caller.
#[derive(Debug, Clone)]
pub struct SpatialCompactor {
    geometry: RegionGeometry,
    capacity: usize,
    queue: VecDeque<SpatialRegion>,
    last_block: Option<BlockAddress>,
}

impl SpatialCompactor {
    pub fn new(geometry: RegionGeometry, capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            geometry,
            capacity,
            queue: VecDeque::with_capacity(capacity),
            last_block: None,
        }
    }

    pub fn geometry(&self) -> &RegionGeometry {
        &self.geometry
    }

    /// Feeds one retired block. Returns the region evicted to make room for a
    /// new one, if any. `on_create` fires for every freshly opened region.
    pub fn observe(
        &mut self,
        block: BlockAddress,
        mut on_create: impl FnMut(BlockAddress),
    ) -> Option<SpatialRegion> {
        if self.last_block == Some(block) {
            return None;
        }
        self.last_block = Some(block);
        // oldest-first search; first covering region absorbs the block
        for region in self.queue.iter_mut() {
            if self.geometry.covers(region.trigger, block) {
                region.mark(&self.geometry, block);
                return None;
            }
        }
        let evicted = if self.queue.len() == self.capacity {
            self.queue.pop_front()
        } else {
            None
        };
        self.queue.push_back(SpatialRegion::new(block));
        on_create(block);
        evicted
    }

    pub fn regions(&self) -> impl Iterator<Item = &SpatialRegion> {
        self.queue.iter()
    }
}
