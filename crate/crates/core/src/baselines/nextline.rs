//! Sequential next-line prefetcher.

use serde::{Deserialize, Serialize};

use crate::trace::BlockAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NextLineConfig {
    pub degree: u32,
}

impl Default for NextLineConfig {
    fn default() -> Self {
        Self { degree: 1 }
    }
}

impl NextLineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.degree == 0 {
            return Err("next-line degree must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NextLinePrefetcher {
    degree: u32,
}

impl NextLinePrefetcher {
    pub fn new(config: NextLineConfig) -> Self {
        config.validate().expect("invalid next-line configuration");
        Self {
            degree: config.degree,
        }
    }

    /// The `degree` blocks after the fetched one, never the block itself.
    /// Candidates past the 40-bit block space are dropped.
    pub fn on_fetch(&self, block: BlockAddress) -> Vec<BlockAddress> {
        (1..=self.degree as i64)
            .filter_map(|d| block.offset(d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::BLOCK_ADDRESS_BITS;

    #[test]
    fn degree_one_returns_the_next_block() {
        let p = NextLinePrefetcher::new(NextLineConfig::default());
        assert_eq!(p.on_fetch(BlockAddress(7)), vec![BlockAddress(8)]);
    }

    #[test]
    fn degree_four_from_zero() {
        let p = NextLinePrefetcher::new(NextLineConfig { degree: 4 });
        let blocks: Vec<u64> = p
            .on_fetch(BlockAddress(0))
            .iter()
            .map(|b| b.value())
            .collect();
        assert_eq!(blocks, vec![1, 2, 3, 4]);
    }

    #[test]
    fn candidates_clamp_at_the_address_space_edge() {
        let p = NextLinePrefetcher::new(NextLineConfig::default());
        let last = BlockAddress((1 << BLOCK_ADDRESS_BITS) - 1);
        assert!(p.on_fetch(last).is_empty());
    }
}
