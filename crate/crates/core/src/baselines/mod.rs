//! Reference prefetchers the MANA model is compared against.

mod nextline;
mod pif;
mod rdip;

pub use nextline::{NextLineConfig, NextLinePrefetcher};
pub use pif::{PifConfig, PifPrefetcher};
pub use rdip::{RdipConfig, RdipPrefetcher, SignatureTracker};
