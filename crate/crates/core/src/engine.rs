//! Trace-driven fetch engine.
//!
//! One pass over the trace drives the active prefetcher and the real L1/L2
//! hierarchy, plus two no-prefetch shadow caches fed the same demand stream:
//! one with the real L1 geometry (the coverage baseline) and one fixed at
//! 32 KB / 8-way (the bandwidth-ratio reference). Records up to the warmup
//! boundary train everything silently; metrics accumulate afterwards.
//!
//! Timing is a monotone proxy, not an IPC model: one cycle per record, plus
//! a full stall whenever a demand miss blocks. A demand miss with the
//! block's prefetch still in flight is classified untimely; one with no fill
//! outstanding is non-covered. Coverage is measured against the shadow
//! baseline in the same pass, and may go negative under pollution.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::baselines::SignatureTracker;
use crate::cache::{AccessKind, CacheGeometry, FetchHierarchy, ShadowCache};
use crate::mana::ManaConfig;
use crate::prefetcher::PrefetcherConfig;
use crate::spatial::{RegionGeometry, SpatialCompactor};
use crate::trace::{BlockAddress, BranchKind, TraceRecord};

pub const DEFAULT_L1: CacheGeometry = CacheGeometry::new(32 * 1024, 8, 4);
pub const DEFAULT_L2: CacheGeometry = CacheGeometry::new(512 * 1024, 8, 10);
pub const DEFAULT_BEYOND_L2_LATENCY: u64 = 20;
const BANDWIDTH_REFERENCE_L1: CacheGeometry = CacheGeometry::new(32 * 1024, 8, 4);

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
    pub beyond_l2_latency: u64,
    pub prefetcher: PrefetcherConfig,
    /// Records trained silently before metrics start; half the trace when
    /// unset.
    pub warmup_instructions: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            l1: DEFAULT_L1,
            l2: DEFAULT_L2,
            beyond_l2_latency: DEFAULT_BEYOND_L2_LATENCY,
            prefetcher: PrefetcherConfig::default(),
            warmup_instructions: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.l1
            .validate()
            .map_err(|e| EngineError::InvalidConfig(format!("l1: {e}")))?;
        self.l2
            .validate()
            .map_err(|e| EngineError::InvalidConfig(format!("l2: {e}")))?;
        self.prefetcher
            .validate()
            .map_err(|e| EngineError::InvalidConfig(format!("prefetcher: {e}")))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("warmup ({warmup}) must be shorter than the trace ({records} records)")]
    WarmupTooLong { warmup: u64, records: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DistinctRecordCounts {
    pub mana_trigger: u64,
    pub pif_trigger: u64,
    pub rdip_signature: u64,
}

/// Every counter and derived metric of one simulation, all post-warmup.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub baseline_misses: u64,
    pub demand_misses: u64,
    pub non_covered_misses: u64,
    pub untimely_misses: u64,
    pub covered_fraction: f64,
    pub non_covered_fraction: f64,
    pub untimely_fraction: f64,
    pub overprediction_ratio: f64,
    pub prefetches_issued: u64,
    pub prefetches_useful: u64,
    pub prefetches_useless: u64,
    pub prefetches_inflight_at_end: u64,
    pub l1_external_requests: u64,
    pub l2_external_requests: u64,
    pub bandwidth_ratio_vs_no_prefetch_32k: f64,
    pub fetch_stall_cycles: u64,
    pub distinct_record_counts: DistinctRecordCounts,
    pub storage_bits: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn csv_header() -> String {
        [
            "baseline_misses",
            "demand_misses",
            "non_covered_misses",
            "untimely_misses",
            "covered_fraction",
            "non_covered_fraction",
            "untimely_fraction",
            "overprediction_ratio",
            "prefetches_issued",
            "prefetches_useful",
            "prefetches_useless",
            "prefetches_inflight_at_end",
            "l1_external_requests",
            "l2_external_requests",
            "bandwidth_ratio_vs_no_prefetch_32k",
            "fetch_stall_cycles",
            "mana_trigger_records",
            "pif_trigger_records",
            "rdip_signature_records",
            "storage_bits",
        ]
        .join(",")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.baseline_misses,
            self.demand_misses,
            self.non_covered_misses,
            self.untimely_misses,
            self.covered_fraction,
            self.non_covered_fraction,
            self.untimely_fraction,
            self.overprediction_ratio,
            self.prefetches_issued,
            self.prefetches_useful,
            self.prefetches_useless,
            self.prefetches_inflight_at_end,
            self.l1_external_requests,
            self.l2_external_requests,
            self.bandwidth_ratio_vs_no_prefetch_32k,
            self.fetch_stall_cycles,
            self.distinct_record_counts.mana_trigger,
            self.distinct_record_counts.pif_trigger,
            self.distinct_record_counts.rdip_signature,
            self.storage_bits,
        )
    }
}

/// Streams a trace through every record-creation scheme at once, with
/// unbounded counting sets.
pub struct DistinctCounter {
    mana: SpatialCompactor,
    mana_triggers: HashSet<u64>,
    pif: SpatialCompactor,
    pif_triggers: HashSet<u64>,
    rdip: SignatureTracker,
    rdip_signatures: HashSet<u32>,
}

impl DistinctCounter {
    pub fn new(mana_geometry: RegionGeometry, mana_srq: usize, ras_depth: usize) -> Self {
        let rdip = SignatureTracker::new(ras_depth);
        let mut rdip_signatures = HashSet::new();
        rdip_signatures.insert(rdip.current()); // the initial signature
        Self {
            mana: SpatialCompactor::new(mana_geometry, mana_srq),
            mana_triggers: HashSet::new(),
            pif: SpatialCompactor::new(RegionGeometry::new(2, 6), 18),
            pif_triggers: HashSet::new(),
            rdip,
            rdip_signatures,
        }
    }

    pub fn feed(&mut self, record: &TraceRecord) {
        let block = record.block();
        let triggers = &mut self.mana_triggers;
        self.mana.observe(block, |t| {
            triggers.insert(t.value());
        });
        let triggers = &mut self.pif_triggers;
        self.pif.observe(block, |t| {
            triggers.insert(t.value());
        });
        if let Some(sig) = self.rdip.on_event(record) {
            self.rdip_signatures.insert(sig);
        }
    }

    pub fn counts(&self) -> DistinctRecordCounts {
        DistinctRecordCounts {
            mana_trigger: self.mana_triggers.len() as u64,
            pif_trigger: self.pif_triggers.len() as u64,
            rdip_signature: self.rdip_signatures.len() as u64,
        }
    }
}

impl Default for DistinctCounter {
    fn default() -> Self {
        let mana = ManaConfig::default();
        Self::new(mana.geometry, mana.srq_length, 16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistinctRecordKind {
    ManaTrigger,
    PifTrigger,
    RdipSignature,
}

/// Number of distinct prefetching records a scheme would create for this
/// trace, with unbounded storage.
pub fn count_distinct_records(records: &[TraceRecord], kind: DistinctRecordKind) -> u64 {
    let mut counter = DistinctCounter::default();
    for r in records {
        counter.feed(r);
    }
    let counts = counter.counts();
    match kind {
        DistinctRecordKind::ManaTrigger => counts.mana_trigger,
        DistinctRecordKind::PifTrigger => counts.pif_trigger,
        DistinctRecordKind::RdipSignature => counts.rdip_signature,
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Runs the trace through the configured prefetcher and produces the report.
pub fn run(records: &[TraceRecord], config: &EngineConfig) -> Result<RunReport, EngineError> {
    if records.is_empty() {
        return Err(EngineError::EmptyTrace);
    }
    config.validate()?;
    let warmup = config
        .warmup_instructions
        .unwrap_or(records.len() as u64 / 2);
    if warmup >= records.len() as u64 {
        return Err(EngineError::WarmupTooLong {
            warmup,
            records: records.len() as u64,
        });
    }

    let mut prefetcher = config.prefetcher.build();
    let mut hierarchy = FetchHierarchy::new(&config.l1, &config.l2, config.beyond_l2_latency);
    let mut shadow_baseline = ShadowCache::new(&config.l1);
    let mut shadow_32k = ShadowCache::new(&BANDWIDTH_REFERENCE_L1);
    let mana_defaults = ManaConfig::default();
    let mut distinct = match &config.prefetcher {
        PrefetcherConfig::Mana(c) => DistinctCounter::new(c.geometry, c.srq_length, 16),
        PrefetcherConfig::Rdip(c) => DistinctCounter::new(
            mana_defaults.geometry,
            mana_defaults.srq_length,
            c.ras_depth,
        ),
        _ => DistinctCounter::default(),
    };

    let mut now: u64 = 0;
    let mut last_block: Option<BlockAddress> = None;

    // post-warmup tallies; monotone hierarchy counters are snapshotted at
    // the warmup boundary instead
    let mut demand_misses = 0u64;
    let mut non_covered = 0u64;
    let mut untimely = 0u64;
    let mut stall_cycles = 0u64;
    let mut l1_external_at_warmup = 0u64;
    let mut l2_external_at_warmup = 0u64;
    let mut baseline_at_warmup = 0u64;
    let mut ref32_at_warmup = 0u64;

    for (index, record) in records.iter().enumerate() {
        if index as u64 == warmup {
            hierarchy.enable_tracking();
            l1_external_at_warmup = hierarchy.l1_external_requests;
            l2_external_at_warmup = hierarchy.l2_external_requests;
            baseline_at_warmup = shadow_baseline.misses;
            ref32_at_warmup = shadow_32k.misses;
        }
        let counted = index as u64 >= warmup;
        hierarchy.tick(now);
        distinct.feed(record);

        let block = record.block();
        let new_block = last_block != Some(block);
        last_block = Some(block);

        let mut stall = 0u64;
        let mut missed = false;
        if new_block {
            for candidate in prefetcher.on_fetch(block) {
                hierarchy.prefetch_access(candidate, now);
            }
            let outcome = hierarchy.demand_access(block, now);
            shadow_baseline.demand(block);
            shadow_32k.demand(block);
            match outcome.kind {
                AccessKind::Hit | AccessKind::HitOnPrefetchedLine => {}
                AccessKind::MissNoInflight => {
                    missed = true;
                    stall = outcome.completes_at - now;
                    if counted {
                        demand_misses += 1;
                        non_covered += 1;
                    }
                }
                AccessKind::MissInflightPrefetch => {
                    missed = true;
                    stall = outcome.completes_at - now;
                    if counted {
                        demand_misses += 1;
                        untimely += 1;
                    }
                }
            }
            if counted {
                stall_cycles += stall;
            }
        }

        // training: miss feedback first (it belongs to the interval before
        // any signature rotation), then control-flow events, then retire
        if new_block && missed {
            prefetcher.on_demand_miss(block);
        }
        if matches!(record.branch_kind, BranchKind::Call | BranchKind::Ret) {
            for candidate in prefetcher.on_control_flow(record) {
                hierarchy.prefetch_access(candidate, now);
            }
        }
        if new_block {
            prefetcher.on_retire(block);
        }

        now += 1 + stall;
    }

    let lifecycle = hierarchy.finalize();
    let baseline_misses = shadow_baseline.misses - baseline_at_warmup;
    let ref32_misses = shadow_32k.misses - ref32_at_warmup;
    let l1_external = hierarchy.l1_external_requests - l1_external_at_warmup;
    let l2_external = hierarchy.l2_external_requests - l2_external_at_warmup;

    debug_assert_eq!(non_covered + untimely, demand_misses);
    debug_assert_eq!(
        lifecycle.useful + lifecycle.useless + lifecycle.inflight_at_end,
        lifecycle.issued
    );

    Ok(RunReport {
        baseline_misses,
        demand_misses,
        non_covered_misses: non_covered,
        untimely_misses: untimely,
        covered_fraction: if baseline_misses == 0 {
            0.0
        } else {
            1.0 - demand_misses as f64 / baseline_misses as f64
        },
        non_covered_fraction: ratio(non_covered, baseline_misses),
        untimely_fraction: ratio(untimely, baseline_misses),
        overprediction_ratio: ratio(lifecycle.useless, baseline_misses),
        prefetches_issued: lifecycle.issued,
        prefetches_useful: lifecycle.useful,
        prefetches_useless: lifecycle.useless,
        prefetches_inflight_at_end: lifecycle.inflight_at_end,
        l1_external_requests: l1_external,
        l2_external_requests: l2_external,
        bandwidth_ratio_vs_no_prefetch_32k: if ref32_misses == 0 {
            0.0
        } else {
            l1_external as f64 / ref32_misses as f64
        },
        fetch_stall_cycles: stall_cycles,
        distinct_record_counts: distinct.counts(),
        storage_bits: prefetcher.storage_bits(),
    })
}
