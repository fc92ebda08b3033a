//! Trace-driven instruction-fetch simulation: the MANA prefetcher (spatial
//! regions, HOBP-compressed tags, successor chaining, SAB replay) next to
//! next-line, RDIP and PIF baselines, with storage accounting and
//! coverage/overprediction metrics.

pub mod baselines;
pub mod cache;
pub mod engine;
pub mod mana;
pub mod prefetcher;
pub mod spatial;
pub mod storage;
pub mod trace;

pub use engine::{run, EngineConfig, RunReport};
pub use trace::{BlockAddress, TraceRecord};
