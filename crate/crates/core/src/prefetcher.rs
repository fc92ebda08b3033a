//! The engine-facing prefetcher interface and configuration surface.

use serde::{Deserialize, Serialize};

use crate::baselines::{
    NextLineConfig, NextLinePrefetcher, PifConfig, PifPrefetcher, RdipConfig, RdipPrefetcher,
};
use crate::mana::{ManaConfig, ManaPrefetcher};
use crate::trace::{BlockAddress, TraceRecord};

/// What the engine feeds a prefetcher and what it gets back. Fetch-stream
/// and retire-stream hooks see blocks with consecutive repeats deduplicated;
/// control-flow events fire per call/return record.
pub trait Prefetcher {
    /// Replay hook: prefetch candidates for a fetch-stream block.
    fn on_fetch(&mut self, _block: BlockAddress) -> Vec<BlockAddress> {
        Vec::new()
    }
    /// Training hook on the retired block stream.
    fn on_retire(&mut self, _block: BlockAddress) {}
    /// Training hook on observed demand misses.
    fn on_demand_miss(&mut self, _block: BlockAddress) {}
    /// Call/return events; may also return prefetch candidates.
    fn on_control_flow(&mut self, _record: &TraceRecord) -> Vec<BlockAddress> {
        Vec::new()
    }
    /// Metadata budget of the configured structures.
    fn storage_bits(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrefetcherConfig {
    None,
    NextLine(NextLineConfig),
    Rdip(RdipConfig),
    Pif(PifConfig),
    Mana(ManaConfig),
}

impl Default for PrefetcherConfig {
    fn default() -> Self {
        Self::Mana(ManaConfig::default())
    }
}

impl PrefetcherConfig {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::None => Ok(()),
            Self::NextLine(c) => c.validate(),
            Self::Rdip(c) => c.validate(),
            Self::Pif(c) => c.validate(),
            Self::Mana(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Box<dyn Prefetcher> {
        match self {
            Self::None => Box::new(NoPrefetcher),
            Self::NextLine(c) => Box::new(NextLineAdapter(NextLinePrefetcher::new(*c))),
            Self::Rdip(c) => Box::new(RdipAdapter(RdipPrefetcher::new(*c))),
            Self::Pif(c) => Box::new(PifAdapter(PifPrefetcher::new(*c))),
            Self::Mana(c) => Box::new(ManaAdapter(ManaPrefetcher::new(*c))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::NextLine(_) => "next_line",
            Self::Rdip(_) => "rdip",
            Self::Pif(_) => "pif",
            Self::Mana(_) => "mana",
        }
    }
}

struct NoPrefetcher;
impl Prefetcher for NoPrefetcher {}

struct NextLineAdapter(NextLinePrefetcher);
impl Prefetcher for NextLineAdapter {
    fn on_fetch(&mut self, block: BlockAddress) -> Vec<BlockAddress> {
        self.0.on_fetch(block)
    }
}

struct RdipAdapter(RdipPrefetcher);
impl Prefetcher for RdipAdapter {
    fn on_demand_miss(&mut self, block: BlockAddress) {
        self.0.on_demand_miss(block);
    }
    fn on_control_flow(&mut self, record: &TraceRecord) -> Vec<BlockAddress> {
        self.0.on_call_or_return(record)
    }
    fn storage_bits(&self) -> u64 {
        self.0.storage_bits()
    }
}

struct PifAdapter(PifPrefetcher);
impl Prefetcher for PifAdapter {
    fn on_fetch(&mut self, block: BlockAddress) -> Vec<BlockAddress> {
        self.0.on_fetch(block)
    }
    fn on_retire(&mut self, block: BlockAddress) {
        self.0.train(block);
    }
    fn storage_bits(&self) -> u64 {
        self.0.storage_bits()
    }
}

struct ManaAdapter(ManaPrefetcher);
impl Prefetcher for ManaAdapter {
    fn on_fetch(&mut self, block: BlockAddress) -> Vec<BlockAddress> {
        self.0.on_fetch(block)
    }
    fn on_retire(&mut self, block: BlockAddress) {
        self.0.train(block);
    }
    fn storage_bits(&self) -> u64 {
        self.0.storage_bits()
    }
}
