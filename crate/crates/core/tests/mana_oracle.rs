//! Brute-force oracles for the MANA recording path: a naive rescan of the
//! retire stream must agree with the table's trigger/footprint/successor
//! associations, and trigger reconstruction must round-trip.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fetchsim_core::mana::{ManaConfig, ManaPrefetcher};
use fetchsim_core::spatial::{RegionGeometry, SpatialRegion};
use fetchsim_core::trace::{generate, BlockAddress, SyntheticKind, SyntheticTraceSpec};

/// Deliberately naive re-implementation of the spatial-region creator:
/// a plain vector for the queue and inline window arithmetic, kept
/// independent of the library's compactor.
fn naive_associations(
    blocks: &[u64],
    behind: i64,
    ahead: i64,
    srq_len: usize,
) -> BTreeMap<u64, (u32, Option<u64>)> {
    let mut queue: Vec<(u64, u32)> = Vec::new();
    let mut insertions: Vec<(u64, u32)> = Vec::new();
    let mut last: Option<u64> = None;
    for &block in blocks {
        if last == Some(block) {
            continue;
        }
        last = Some(block);
        let mut matched = false;
        for (trigger, footprint) in queue.iter_mut() {
            let d = block as i64 - *trigger as i64;
            if -behind <= d && d <= ahead {
                if d < 0 {
                    *footprint |= 1 << (d + behind);
                } else if d > 0 {
                    *footprint |= 1 << (behind + d - 1);
                }
                matched = true;
                break;
            }
        }
        if matched {
            continue;
        }
        if queue.len() == srq_len {
            insertions.push(queue.remove(0));
        }
        queue.push((block, 0));
    }
    // footprint: the trigger's last insertion; successor: the insertion
    // following its latest insertion that has one (a re-insertion keeps the
    // pointer it already carries until a later insertion redirects it)
    let mut map: BTreeMap<u64, (u32, Option<u64>)> = BTreeMap::new();
    for i in 0..insertions.len() {
        let entry = map.entry(insertions[i].0).or_insert((0, None));
        entry.0 = insertions[i].1;
        if let Some(next) = insertions.get(i + 1) {
            entry.1 = Some(next.0);
        }
    }
    map
}

/// Table big enough that triggers from a small block universe never
/// conflict, alias the null-pointer slot, or evict HOBPT patterns.
fn oversized_config() -> ManaConfig {
    ManaConfig {
        table_entries: 1 << 16,
        table_ways: 4,
        hobpt_entries: 64,
        hobpt_ways: 8,
        ..Default::default()
    }
}

fn mana_associations(mana: &ManaPrefetcher) -> BTreeMap<u64, (u32, Option<u64>)> {
    mana.table_associations()
        .into_iter()
        .map(|(_, trigger, footprint, successor)| {
            (trigger.value(), (footprint, successor.map(|s| s.value())))
        })
        .collect()
}

#[test]
fn table_matches_brute_force_oracle_on_random_walks() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<u64> = (0..10_000).map(|_| rng.gen_range(0..500)).collect();
        let config = oversized_config();
        let mut mana = ManaPrefetcher::new(config);
        for &block in &blocks {
            mana.train(BlockAddress(block));
        }
        let expected = naive_associations(
            &blocks,
            config.geometry.behind as i64,
            config.geometry.ahead as i64,
            config.srq_length,
        );
        assert_eq!(mana_associations(&mana), expected, "seed {seed}");
    }
}

#[test]
fn table_matches_brute_force_oracle_on_structured_traces() {
    for (kind, segs, blocks_per) in [
        (SyntheticKind::SegmentedLoop, 6, 12),
        (SyntheticKind::SequentialLoop, 1, 40),
        (SyntheticKind::CallChain, 4, 10),
    ] {
        let records = generate(&SyntheticTraceSpec {
            kind,
            segment_count: segs,
            blocks_per_segment: blocks_per,
            iterations: 25,
            seed: 3,
        });
        // fold huge segment bases into a small universe the oversized table
        // is conflict-free for, preserving the access structure
        let blocks: Vec<u64> = records.iter().map(|r| r.block().value() % 14000).collect();
        let config = oversized_config();
        let mut mana = ManaPrefetcher::new(config);
        for &b in &blocks {
            mana.train(BlockAddress(b));
        }
        let expected = naive_associations(&blocks, 0, 8, config.srq_length);
        assert_eq!(mana_associations(&mana), expected, "{kind:?}");
    }
}

#[test]
fn reconstruction_round_trips_for_random_regions() {
    // immediate round trip: the pattern inserted alongside the entry is
    // still resident when reconstructed, for any table geometry
    let mut mana = ManaPrefetcher::new(ManaConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let trigger = BlockAddress(rng.gen_range(0..1u64 << 40));
        let region = SpatialRegion {
            trigger,
            footprint: rng.gen_range(0..256),
        };
        let slot = mana.table_insert(&region);
        assert_eq!(mana.reconstruct_trigger(slot).unwrap(), trigger);
    }
}

#[test]
fn reconstruction_holds_at_end_of_run_without_evictions() {
    // distinct triggers below the set count occupy distinct sets and share
    // the single all-zero HOBP pattern: nothing ever evicts
    let config = oversized_config();
    let mut mana = ManaPrefetcher::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut triggers: Vec<u64> = (0..10_000u64).map(|_| rng.gen_range(0..14000)).collect();
    triggers.sort_unstable();
    triggers.dedup();
    let mut slots = Vec::new();
    for &t in &triggers {
        slots.push((mana.table_insert(&SpatialRegion::new(BlockAddress(t))), t));
    }
    for (slot, trigger) in slots {
        assert_eq!(
            mana.reconstruct_trigger(slot).unwrap(),
            BlockAddress(trigger)
        );
    }
}

#[test]
fn chain_integrity_over_conflict_free_insertions() {
    let config = oversized_config();
    let mut mana = ManaPrefetcher::new(config);
    let n = 500u64;
    let regions: Vec<SpatialRegion> = (0..n)
        .map(|i| SpatialRegion {
            trigger: BlockAddress(1 + i * 7),
            footprint: i as u32 & 0xFF,
        })
        .collect();
    let first_slot = mana.table_insert(&regions[0]);
    for r in &regions[1..] {
        mana.table_insert(r);
    }
    let chain = mana.chase(first_slot, n as usize).unwrap();
    assert_eq!(chain.len(), n as usize);
    for (i, (_, region)) in chain.iter().enumerate() {
        assert_eq!(region.trigger, regions[i].trigger, "position {i}");
        assert_eq!(region.footprint, regions[i].footprint, "position {i}");
    }
}

#[test]
fn footprint_geometry_bit_positions_are_exact() {
    // block b belongs to region (t, fp) iff -behind <= b-t <= ahead and
    // b != t, with the bit position determined by b-t
    let geometry = RegionGeometry::new(2, 6);
    let trigger = BlockAddress(1000);
    for b in 990..1010u64 {
        let d = b as i64 - 1000;
        let mut region = SpatialRegion::new(trigger);
        let marked = region.mark(&geometry, BlockAddress(b));
        let in_window = (-2..=6).contains(&d) && d != 0;
        assert_eq!(marked, in_window, "block {b}");
        if in_window {
            let expected_bit = if d < 0 { d + 2 } else { 2 + d - 1 };
            assert_eq!(region.footprint, 1 << expected_bit, "block {b}");
        }
    }
}
