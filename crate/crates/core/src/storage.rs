//! Storage-cost accounting: per-record bit arithmetic for the modeled
//! prefetchers and the MANA partial-tag/HOBPT trade-off table.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StorageError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// The HOBPT capacity needed to hold every observed high-order-bit pattern,
/// per partial-tag length. Calibrated points; shorter partial tags expose
/// more distinct patterns, with an 8-entry floor at the long end.
pub fn hobp_index_bits(partial_tag_bits: u32) -> Result<u32, StorageError> {
    Ok(match partial_tag_bits {
        0 => 9,
        1 => 8,
        2 => 7,
        5 => 5,
        8 | 11 => 3,
        other => {
            return Err(StorageError::InvalidGeometry(format!(
                "no calibrated HOBPT capacity for partial-tag length {other} \
                 (supported: 0, 1, 2, 5, 8, 11)"
            )))
        }
    })
}

pub const STUDIED_PARTIAL_TAG_BITS: [u32; 6] = [0, 1, 2, 5, 8, 11];

#[derive(Debug, Clone, Copy)]
pub struct BreakdownParams {
    pub address_bits: u32,
    pub block_offset_bits: u32,
    pub table_entries: u64,
    pub table_sets: u64,
    pub partial_tag_bits: u32,
    pub footprint_bits: u32,
    pub successor_bits: u32,
}

impl Default for BreakdownParams {
    fn default() -> Self {
        Self {
            address_bits: 46,
            block_offset_bits: 6,
            table_entries: 4096,
            table_sets: 1024,
            partial_tag_bits: 2,
            footprint_bits: 8,
            successor_bits: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageBreakdown {
    pub partial_tag_bits: u32,
    pub hobp_index_bits: u32,
    /// Width of one stored pattern: block-address bits above set index and
    /// partial tag.
    pub hobp_pattern_bits: u32,
    pub entry_bits: u64,
    pub mana_table_bits: u64,
    pub hobpt_bits: u64,
}

impl StorageBreakdown {
    pub fn sum_bits(&self) -> u64 {
        self.mana_table_bits + self.hobpt_bits
    }
}

pub fn mana_storage_breakdown(params: &BreakdownParams) -> Result<StorageBreakdown, StorageError> {
    let p = params;
    if !p.table_sets.is_power_of_two() || !p.table_entries.is_power_of_two() {
        return Err(StorageError::InvalidGeometry(
            "table entries and sets must be powers of two".into(),
        ));
    }
    if !p.table_entries.is_multiple_of(p.table_sets) {
        return Err(StorageError::InvalidGeometry(
            "table entries must be a multiple of sets".into(),
        ));
    }
    let block_bits = p
        .address_bits
        .checked_sub(p.block_offset_bits)
        .ok_or_else(|| StorageError::InvalidGeometry("offset exceeds address width".into()))?;
    let set_bits = p.table_sets.trailing_zeros();
    if p.partial_tag_bits + set_bits > block_bits {
        return Err(StorageError::InvalidGeometry(format!(
            "partial tag ({}) plus set index ({}) exceeds the {}-bit block address",
            p.partial_tag_bits, set_bits, block_bits
        )));
    }
    let hobp_pattern_bits = block_bits - set_bits - p.partial_tag_bits;
    let index_bits = hobp_index_bits(p.partial_tag_bits)?;
    let entry_bits = (index_bits + p.partial_tag_bits + p.footprint_bits + p.successor_bits) as u64;
    Ok(StorageBreakdown {
        partial_tag_bits: p.partial_tag_bits,
        hobp_index_bits: index_bits,
        hobp_pattern_bits,
        entry_bits,
        mana_table_bits: entry_bits * p.table_entries,
        hobpt_bits: (1u64 << index_bits) * hobp_pattern_bits as u64,
    })
}

/// Formats a bit count in KB (8192 bits) using the fewest decimals (at most
/// two) that stay within 0.01 KB of the exact value, e.g. 118784 -> "14.5".
pub fn format_kb(bits: u64) -> String {
    let kb = bits as f64 / 8192.0;
    for decimals in 0..=2u32 {
        let scale = 10f64.powi(decimals as i32);
        let rounded = (kb * scale).round() / scale;
        if (rounded - kb).abs() < 0.01 {
            return format!("{rounded:.*}", decimals as usize);
        }
    }
    format!("{kb:.2}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    RdipMissTableEntry,
    ShotgunUbtbEntry,
    PifIndexPlusHistoryEntry,
    ManaTableEntry,
}

/// Structure geometries behind the per-record bit costs. Defaults follow the
/// modeled configurations (46-bit addresses, 4K-entry 4-way RDIP Miss Table,
/// 2K-entry 4-way U-BTB, 8K-entry 4-way PIF index over a 32K history).
#[derive(Debug, Clone, Copy)]
pub struct RecordSizeParams {
    pub address_bits: u32,
    pub block_offset_bits: u32,
    pub rdip_signature_bits: u32,
    pub rdip_table_entries: u64,
    pub rdip_table_ways: u32,
    pub rdip_triggers_per_entry: u32,
    pub rdip_footprint_bits: u32,
    pub ubtb_entries: u64,
    pub ubtb_ways: u32,
    pub ubtb_size_bits: u32,
    pub ubtb_type_bits: u32,
    pub ubtb_footprint_bits: u32,
    pub pif_index_entries: u64,
    pub pif_index_ways: u32,
    pub pif_history_entries: u64,
    pub pif_footprint_bits: u32,
    pub mana_hobp_index_bits: u32,
    pub mana_partial_tag_bits: u32,
    pub mana_footprint_bits: u32,
    pub mana_successor_bits: u32,
}

impl Default for RecordSizeParams {
    fn default() -> Self {
        Self {
            address_bits: 46,
            block_offset_bits: 6,
            rdip_signature_bits: 32,
            rdip_table_entries: 4096,
            rdip_table_ways: 4,
            rdip_triggers_per_entry: 3,
            rdip_footprint_bits: 8,
            ubtb_entries: 2048,
            ubtb_ways: 4,
            ubtb_size_bits: 5,
            ubtb_type_bits: 1,
            ubtb_footprint_bits: 8,
            pif_index_entries: 8192,
            pif_index_ways: 4,
            pif_history_entries: 32768,
            pif_footprint_bits: 8,
            mana_hobp_index_bits: 7,
            mana_partial_tag_bits: 2,
            mana_footprint_bits: 8,
            mana_successor_bits: 12,
        }
    }
}

fn set_index_bits(entries: u64, ways: u32) -> u32 {
    (entries / ways as u64).trailing_zeros()
}

/// Bits needed for one prefetching record of the given kind.
pub fn record_size_bits(kind: RecordKind, p: &RecordSizeParams) -> u64 {
    let block_bits = (p.address_bits - p.block_offset_bits) as u64;
    match kind {
        RecordKind::RdipMissTableEntry => {
            // signature tag + 3 x (trigger block + footprint)
            let tag = p.rdip_signature_bits as u64
                - set_index_bits(p.rdip_table_entries, p.rdip_table_ways) as u64;
            tag + p.rdip_triggers_per_entry as u64 * (block_bits + p.rdip_footprint_bits as u64)
        }
        RecordKind::ShotgunUbtbEntry => {
            // basic-block tag + full target + size + type + call/ret footprints
            let tag = p.address_bits as u64 - set_index_bits(p.ubtb_entries, p.ubtb_ways) as u64;
            tag + p.address_bits as u64
                + p.ubtb_size_bits as u64
                + p.ubtb_type_bits as u64
                + 2 * p.ubtb_footprint_bits as u64
        }
        RecordKind::PifIndexPlusHistoryEntry => {
            // index entry (trigger tag + history pointer) + history entry
            let index_tag =
                block_bits - set_index_bits(p.pif_index_entries, p.pif_index_ways) as u64;
            let pointer = p.pif_history_entries.trailing_zeros() as u64;
            let history = block_bits + p.pif_footprint_bits as u64;
            index_tag + pointer + history
        }
        RecordKind::ManaTableEntry => {
            (p.mana_hobp_index_bits
                + p.mana_partial_tag_bits
                + p.mana_footprint_bits
                + p.mana_successor_bits) as u64
        }
    }
}
