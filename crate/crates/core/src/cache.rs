//! Set-associative cache model with LRU replacement, in-flight fill
//! tracking and a two-level (L1-I over L2) latency chain.
//!
//! The hierarchy exists to classify prefetch timeliness and count traffic,
//! not to model a full memory system: L2 state updates synchronously at
//! request time, and only the L1 models fill latency.

use serde::{Deserialize, Serialize};

use crate::trace::{BlockAddress, BLOCK_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub total_bytes: u64,
    pub ways: u32,
    pub hit_latency: u64,
}

impl CacheGeometry {
    pub const fn new(total_bytes: u64, ways: u32, hit_latency: u64) -> Self {
        Self {
            total_bytes,
            ways,
            hit_latency,
        }
    }

    pub fn sets(&self) -> u64 {
        self.total_bytes / (self.ways as u64 * BLOCK_BYTES)
    }

    pub fn blocks(&self) -> u64 {
        self.total_bytes / BLOCK_BYTES
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ways == 0 || self.total_bytes == 0 {
            return Err("cache size and ways must be positive".into());
        }
        if !self
            .total_bytes
            .is_multiple_of(self.ways as u64 * BLOCK_BYTES)
        {
            return Err(format!(
                "cache size {} not divisible by ways*block ({}*{})",
                self.total_bytes, self.ways, BLOCK_BYTES
            ));
        }
        if !self.sets().is_power_of_two() {
            return Err(format!("set count {} is not a power of two", self.sets()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct CacheLine {
    block: u64,
    prefetched: bool,
    /// Prefetch issued inside the measured window; lifecycle counters only
    /// move for tracked lines.
    tracked: bool,
    stamp: u64,
}

/// Plain set-associative LRU cache over block addresses.
#[derive(Debug, Clone)]
pub struct SetAssocCache {
    sets: u64,
    ways: u32,
    lines: Vec<Option<CacheLine>>,
    clock: u64,
}

impl SetAssocCache {
    pub fn new(geometry: &CacheGeometry) -> Self {
        geometry.validate().expect("invalid cache geometry");
        Self {
            sets: geometry.sets(),
            ways: geometry.ways,
            lines: vec![None; (geometry.sets() * geometry.ways as u64) as usize],
            clock: 0,
        }
    }

    fn set_range(&self, block: u64) -> std::ops::Range<usize> {
        let set = (block % self.sets) as usize * self.ways as usize;
        set..set + self.ways as usize
    }

    /// Hit test without any state change.
    pub fn peek(&self, block: BlockAddress) -> bool {
        self.lines[self.set_range(block.value())]
            .iter()
            .flatten()
            .any(|l| l.block == block.value())
    }

    /// Access: promotes the line to MRU on hit; returns its pre-access
    /// prefetched flag (cleared by the access).
    fn touch(&mut self, block: BlockAddress) -> Option<(bool, bool)> {
        self.clock += 1;
        let clock = self.clock;
        let range = self.set_range(block.value());
        for line in self.lines[range].iter_mut().flatten() {
            if line.block == block.value() {
                let was = (line.prefetched, line.tracked);
                line.prefetched = false;
                line.stamp = clock;
                return Some(was);
            }
        }
        None
    }

    /// Installs a line at MRU, evicting LRU if the set is full.
    fn install(&mut self, block: u64, prefetched: bool, tracked: bool) -> Option<CacheLine> {
        self.clock += 1;
        let line = CacheLine {
            block,
            prefetched,
            tracked,
            stamp: self.clock,
        };
        let range = self.set_range(block);
        let set = &mut self.lines[range];
        if let Some(slot) = set.iter_mut().find(|s| s.is_none()) {
            *slot = Some(line);
            return None;
        }
        let victim = set
            .iter_mut()
            .min_by_key(|s| s.as_ref().unwrap().stamp)
            .unwrap();
        victim.replace(line)
    }

    fn resident_lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.lines.iter().flatten()
    }
}

/// A no-prefetch cache fed the same demand stream, used to compute baseline
/// misses in the same pass. Fills install immediately.
#[derive(Debug, Clone)]
pub struct ShadowCache {
    cache: SetAssocCache,
    pub misses: u64,
}

impl ShadowCache {
    pub fn new(geometry: &CacheGeometry) -> Self {
        Self {
            cache: SetAssocCache::new(geometry),
            misses: 0,
        }
    }

    /// Returns true on hit.
    pub fn demand(&mut self, block: BlockAddress) -> bool {
        if self.cache.touch(block).is_some() {
            true
        } else {
            self.misses += 1;
            self.cache.install(block.value(), false, false);
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOrigin {
    Demand,
    Prefetch,
}

#[derive(Debug, Clone, Copy)]
struct InFlightFill {
    block: u64,
    ready_at: u64,
    origin: FillOrigin,
    tracked: bool,
    /// A demand arrived while the prefetch was in flight; the line installs
    /// as a plain (non-prefetched) line and was already credited useful.
    consumed: bool,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Hit,
    HitOnPrefetchedLine,
    MissNoInflight,
    MissInflightPrefetch,
}

#[derive(Debug, Clone, Copy)]
pub struct AccessOutcome {
    pub kind: AccessKind,
    pub completes_at: u64,
    /// Some(l2_hit) when this access started a new fill below the L1.
    pub fill_started: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefetchIssue {
    DroppedPresent,
    DroppedInflight,
    Issued { l2_hit: bool },
}

/// Prefetch lifecycle totals for fills issued while tracking was enabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrefetchLifecycle {
    pub issued: u64,
    pub completed: u64,
    pub useful: u64,
    pub useless: u64,
    pub inflight_at_end: u64,
}

/// L1-I over a synchronous L2 with a flat beyond-L2 latency.
#[derive(Debug, Clone)]
pub struct FetchHierarchy {
    l1: SetAssocCache,
    l2: SetAssocCache,
    l1_hit_latency: u64,
    l2_hit_latency: u64,
    beyond_l2_latency: u64,
    inflight: Vec<InFlightFill>,
    next_seq: u64,
    tracking: bool,
    lifecycle: PrefetchLifecycle,
    /// Fills started below the L1 (demand + prefetch), monotone.
    pub l1_external_requests: u64,
    /// L2 misses among those, monotone.
    pub l2_external_requests: u64,
    pub demand_fills_started: u64,
}

impl FetchHierarchy {
    pub fn new(l1: &CacheGeometry, l2: &CacheGeometry, beyond_l2_latency: u64) -> Self {
        Self {
            l1: SetAssocCache::new(l1),
            l2: SetAssocCache::new(l2),
            l1_hit_latency: l1.hit_latency,
            l2_hit_latency: l2.hit_latency,
            beyond_l2_latency,
            inflight: Vec::new(),
            next_seq: 0,
            tracking: false,
            lifecycle: PrefetchLifecycle::default(),
            l1_external_requests: 0,
            l2_external_requests: 0,
            demand_fills_started: 0,
        }
    }

    /// Prefetches issued after this call participate in the useful/useless
    /// accounting (the engine enables it at the warmup boundary).
    pub fn enable_tracking(&mut self) {
        self.tracking = true;
    }

    /// Consults the L2 for a block, updating its state synchronously, and
    /// returns (l2_hit, fill latency seen by the L1).
    fn request_below(&mut self, block: u64) -> (bool, u64) {
        self.l1_external_requests += 1;
        if self.l2.touch(BlockAddress(block)).is_some() {
            (true, self.l2_hit_latency)
        } else {
            self.l2_external_requests += 1;
            self.l2.install(block, false, false);
            (false, self.l2_hit_latency + self.beyond_l2_latency)
        }
    }

    fn find_inflight(&mut self, block: u64) -> Option<&mut InFlightFill> {
        self.inflight.iter_mut().find(|f| f.block == block)
    }

    pub fn demand_access(&mut self, block: BlockAddress, now: u64) -> AccessOutcome {
        if let Some((was_prefetched, tracked)) = self.l1.touch(block) {
            let kind = if was_prefetched {
                if tracked {
                    self.lifecycle.useful += 1;
                }
                AccessKind::HitOnPrefetchedLine
            } else {
                AccessKind::Hit
            };
            // hit latency is pipelined; the engine never stalls on hits
            return AccessOutcome {
                kind,
                completes_at: now + self.l1_hit_latency,
                fill_started: None,
            };
        }
        if let Some(fill) = self.find_inflight(block.value()) {
            let ready = fill.ready_at;
            match fill.origin {
                FillOrigin::Prefetch => {
                    let first = !fill.consumed;
                    fill.consumed = true;
                    let tracked = fill.tracked;
                    if first && tracked {
                        self.lifecycle.useful += 1;
                    }
                    return AccessOutcome {
                        kind: AccessKind::MissInflightPrefetch,
                        completes_at: ready,
                        fill_started: None,
                    };
                }
                FillOrigin::Demand => {
                    // merge with the outstanding demand fill, no double count
                    return AccessOutcome {
                        kind: AccessKind::MissNoInflight,
                        completes_at: ready,
                        fill_started: None,
                    };
                }
            }
        }
        let (l2_hit, latency) = self.request_below(block.value());
        self.demand_fills_started += 1;
        self.push_fill(block.value(), now + latency, FillOrigin::Demand);
        AccessOutcome {
            kind: AccessKind::MissNoInflight,
            completes_at: now + latency,
            fill_started: Some(l2_hit),
        }
    }

    pub fn prefetch_access(&mut self, block: BlockAddress, now: u64) -> PrefetchIssue {
        if self.l1.peek(block) {
            return PrefetchIssue::DroppedPresent;
        }
        if self.find_inflight(block.value()).is_some() {
            return PrefetchIssue::DroppedInflight;
        }
        let (l2_hit, latency) = self.request_below(block.value());
        if self.tracking {
            self.lifecycle.issued += 1;
        }
        self.push_fill(block.value(), now + latency, FillOrigin::Prefetch);
        PrefetchIssue::Issued { l2_hit }
    }

    fn push_fill(&mut self, block: u64, ready_at: u64, origin: FillOrigin) {
        debug_assert!(self.inflight.iter().all(|f| f.block != block));
        self.inflight.push(InFlightFill {
            block,
            ready_at,
            origin,
            tracked: self.tracking && origin == FillOrigin::Prefetch,
            consumed: false,
            seq: self.next_seq,
        });
        self.next_seq += 1;
    }

    /// Installs every fill with ready_at <= now, in arrival order.
    /// Returns the number of fills installed.
    pub fn tick(&mut self, now: u64) -> usize {
        let mut ready: Vec<InFlightFill> = Vec::new();
        self.inflight.retain(|f| {
            if f.ready_at <= now {
                ready.push(*f);
                false
            } else {
                true
            }
        });
        ready.sort_by_key(|f| (f.ready_at, f.seq));
        let count = ready.len();
        for fill in ready {
            if fill.origin == FillOrigin::Prefetch && fill.tracked {
                self.lifecycle.completed += 1;
            }
            let prefetched = fill.origin == FillOrigin::Prefetch && !fill.consumed;
            let evicted = self.l1.install(fill.block, prefetched, fill.tracked);
            if let Some(victim) = evicted {
                if victim.prefetched && victim.tracked {
                    self.lifecycle.useless += 1;
                }
            }
        }
        count
    }

    /// Resolves prefetches still in flight or still unused at end of run.
    pub fn finalize(&mut self) -> PrefetchLifecycle {
        self.lifecycle.inflight_at_end = self
            .inflight
            .iter()
            .filter(|f| f.origin == FillOrigin::Prefetch && f.tracked && !f.consumed)
            .count() as u64;
        // consumed-in-flight fills were already credited useful but never
        // completed; count them as completed so the partition closes
        self.lifecycle.completed += self
            .inflight
            .iter()
            .filter(|f| f.origin == FillOrigin::Prefetch && f.tracked && f.consumed)
            .count() as u64;
        for line in self.l1.resident_lines() {
            if line.prefetched && line.tracked {
                self.lifecycle.useless += 1;
            }
        }
        self.lifecycle
    }

    pub fn lifecycle(&self) -> PrefetchLifecycle {
        self.lifecycle
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: u64) -> BlockAddress {
        BlockAddress(v)
    }

    fn small_hierarchy() -> FetchHierarchy {
        // 8-way single-set L1 (512 B), large L2, fill latency 10 on L2 hit,
        // 10 + 20 on L2 miss.
        let l1 = CacheGeometry::new(512, 8, 4);
        let l2 = CacheGeometry::new(1 << 19, 8, 10);
        FetchHierarchy::new(&l1, &l2, 20)
    }

    #[test]
    fn cold_miss() {
        let mut h = small_hierarchy();
        let out = h.demand_access(b(5), 0);
        assert_eq!(out.kind, AccessKind::MissNoInflight);
        assert_eq!(out.completes_at, 30); // L2 cold too
        assert_eq!(out.fill_started, Some(false));
    }

    #[test]
    fn demand_during_inflight_prefetch_is_untimely() {
        // prefetch B with a 10-cycle fill, demand B four cycles later
        let mut h = small_hierarchy();
        // warm L2 with B so the prefetch fill latency is exactly 10
        h.demand_access(b(7), 0);
        h.tick(30);
        // evict B from L1 by filling its set with 8 other blocks
        for i in 0..8 {
            let blk = b(8 + i * 8); // same single set
            h.demand_access(blk, 30);
        }
        h.tick(100);
        assert!(!h.l1.peek(b(7)));
        assert_eq!(
            h.prefetch_access(b(7), 100),
            PrefetchIssue::Issued { l2_hit: true }
        );
        let out = h.demand_access(b(7), 104);
        assert_eq!(out.kind, AccessKind::MissInflightPrefetch);
        assert_eq!(out.completes_at, 110);
    }

    #[test]
    fn prefetched_flag_clears_on_first_demand_hit() {
        let mut h = small_hierarchy();
        h.enable_tracking();
        assert!(matches!(
            h.prefetch_access(b(3), 0),
            PrefetchIssue::Issued { .. }
        ));
        h.tick(40);
        let first = h.demand_access(b(3), 41);
        assert_eq!(first.kind, AccessKind::HitOnPrefetchedLine);
        let second = h.demand_access(b(3), 42);
        assert_eq!(second.kind, AccessKind::Hit);
        assert_eq!(h.lifecycle().useful, 1);
    }

    #[test]
    fn prefetch_drop_reasons() {
        let mut h = small_hierarchy();
        h.demand_access(b(1), 0);
        h.tick(50);
        assert_eq!(h.prefetch_access(b(1), 51), PrefetchIssue::DroppedPresent);
        assert!(matches!(
            h.prefetch_access(b(2), 51),
            PrefetchIssue::Issued { .. }
        ));
        assert_eq!(h.prefetch_access(b(2), 52), PrefetchIssue::DroppedInflight);
    }

    #[test]
    fn nine_prefetches_evict_the_first_in_an_8_way_set() {
        let mut h = small_hierarchy();
        // blocks i*8 all map to the single L1 set
        for i in 0..9u64 {
            assert!(matches!(
                h.prefetch_access(b(i * 8), 0),
                PrefetchIssue::Issued { .. }
            ));
        }
        h.tick(100);
        // first block was evicted by the ninth fill (MRU insertion, LRU victim)
        let out = h.demand_access(b(0), 101);
        assert_eq!(out.kind, AccessKind::MissNoInflight);
    }

    #[test]
    fn tick_boundary_is_inclusive() {
        let mut h = small_hierarchy();
        // L2-warm block for a 10-cycle fill
        h.demand_access(b(7), 0);
        h.tick(30);
        for i in 0..8 {
            h.demand_access(b(8 + i * 8), 30);
        }
        h.tick(100);
        h.prefetch_access(b(7), 100); // ready at 110
        assert_eq!(h.tick(109), 0);
        assert_eq!(h.tick(110), 1);
    }

    #[test]
    fn useless_prefetch_counted_on_eviction_and_at_end() {
        let mut h = small_hierarchy();
        h.enable_tracking();
        h.prefetch_access(b(0), 0);
        h.tick(50);
        // evict it with 8 demand fills, untouched
        for i in 1..=8u64 {
            h.demand_access(b(i * 8), 50);
            h.tick(100);
        }
        assert_eq!(h.lifecycle().useless, 1);
        h.prefetch_access(b(200), 100);
        h.tick(200);
        let end = h.finalize();
        assert_eq!(end.useless, 2); // the resident unused one counts at end
        assert_eq!(end.issued, 2);
        assert_eq!(end.completed, 2);
        assert_eq!(end.useful, 0);
        assert_eq!(end.inflight_at_end, 0);
    }

    #[test]
    fn demand_merges_with_inflight_demand_fill() {
        let mut h = small_hierarchy();
        let first = h.demand_access(b(4), 0);
        assert_eq!(first.kind, AccessKind::MissNoInflight);
        let merged = h.demand_access(b(4), 2);
        assert_eq!(merged.kind, AccessKind::MissNoInflight);
        assert_eq!(merged.completes_at, first.completes_at);
        assert_eq!(h.demand_fills_started, 1);
        assert_eq!(h.l1_external_requests, 1);
    }

    #[test]
    fn lru_law_second_demand_hits() {
        let l1 = CacheGeometry::new(4096, 4, 4);
        let l2 = CacheGeometry::new(1 << 19, 8, 10);
        let mut h = FetchHierarchy::new(&l1, &l2, 20);
        let mut now = 0;
        for i in 0..64u64 {
            let out = h.demand_access(b(i * 3), now);
            now = out.completes_at + 1;
            h.tick(now);
            let again = h.demand_access(b(i * 3), now);
            assert!(matches!(
                again.kind,
                AccessKind::Hit | AccessKind::HitOnPrefetchedLine
            ));
            now += 1;
        }
    }

    #[test]
    fn cyclic_thrash_misses_every_time() {
        // K distinct blocks > capacity, uniform over sets: 100% steady-state
        // misses under LRU. Fully-associative and set-mapped variants.
        for (geom, stride) in [
            (CacheGeometry::new(512, 8, 4), 1u64),  // fully assoc 8 blocks
            (CacheGeometry::new(1024, 2, 4), 1u64), // 8 sets x 2 ways
        ] {
            let l2 = CacheGeometry::new(1 << 19, 8, 10);
            let mut h = FetchHierarchy::new(&geom, &l2, 20);
            let k = geom.blocks() + geom.sets(); // oversubscribe every set
            let mut now = 0u64;
            let mut misses = 0u64;
            let mut accesses = 0u64;
            for round in 0..8 {
                for i in 0..k {
                    let out = h.demand_access(b(i * stride), now);
                    now = out.completes_at + 1;
                    h.tick(now);
                    if round >= 2 {
                        accesses += 1;
                        if out.kind == AccessKind::MissNoInflight {
                            misses += 1;
                        }
                    }
                }
            }
            assert_eq!(misses, accesses, "geometry {geom:?}");
        }
    }

    #[test]
    fn conservation_demand_misses_equal_fills_started() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let l1 = CacheGeometry::new(2048, 4, 4);
        let l2 = CacheGeometry::new(1 << 16, 8, 10);
        let mut h = FetchHierarchy::new(&l1, &l2, 20);
        h.enable_tracking();
        let mut now = 0u64;
        let mut misses = 0u64;
        for _ in 0..4000 {
            let blk = b(rng.gen_range(0..96));
            if rng.gen_bool(0.3) {
                h.prefetch_access(blk, now);
            } else {
                let out = h.demand_access(blk, now);
                if out.fill_started.is_some() {
                    misses += 1;
                }
                now = out.completes_at.max(now);
            }
            now += 1;
            h.tick(now);
        }
        assert_eq!(misses, h.demand_fills_started);
        let end = h.finalize();
        assert_eq!(end.useful + end.useless + end.inflight_at_end, end.issued);
    }
}
