//! Instruction-trace data model, file formats and synthetic generators.
//!
//! A trace is a sequence of retired instructions, each carrying a 46-bit
//! virtual address and a branch marker. Control flow is implicit: the next
//! record's address says where execution went. Two on-disk encodings are
//! supported: the binary "MIT1" format and a line-oriented text format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Instruction addresses are 46 bits wide.
pub const ADDRESS_BITS: u32 = 46;
/// 64-byte instruction blocks.
pub const BLOCK_BYTES: u64 = 64;
pub const BLOCK_OFFSET_BITS: u32 = 6;
/// Block addresses are 46 - 6 = 40 bits wide.
pub const BLOCK_ADDRESS_BITS: u32 = ADDRESS_BITS - BLOCK_OFFSET_BITS;

const MAGIC: &[u8; 4] = b"MIT1";
const VERSION: u8 = 0x01;
const RECORD_BYTES: usize = 9;

/// A 40-bit instruction-block address (instruction address >> 6).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockAddress(pub u64);

impl BlockAddress {
    pub fn new(value: u64) -> Option<Self> {
        (value < 1 << BLOCK_ADDRESS_BITS).then_some(Self(value))
    }

    pub fn of_instruction(address: u64) -> Self {
        debug_assert!(address < 1 << ADDRESS_BITS);
        Self(address >> BLOCK_OFFSET_BITS)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Block offset by `delta` blocks, if it stays inside the 40-bit space.
    pub fn offset(self, delta: i64) -> Option<Self> {
        let v = self.0.checked_add_signed(delta)?;
        Self::new(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    None,
    Conditional,
    UnconditionalDirect,
    Call,
    Ret,
    Indirect,
}

impl BranchKind {
    fn from_ordinal(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::None,
            1 => Self::Conditional,
            2 => Self::UnconditionalDirect,
            3 => Self::Call,
            4 => Self::Ret,
            5 => Self::Indirect,
            _ => return None,
        })
    }

    fn ordinal(self) -> u8 {
        match self {
            Self::None => 0,
            Self::Conditional => 1,
            Self::UnconditionalDirect => 2,
            Self::Call => 3,
            Self::Ret => 4,
            Self::Indirect => 5,
        }
    }
}

/// One retired instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub address: u64,
    pub branch_kind: BranchKind,
    pub taken: bool,
}

impl TraceRecord {
    pub fn plain(address: u64) -> Self {
        Self {
            address,
            branch_kind: BranchKind::None,
            taken: false,
        }
    }

    pub fn branch(address: u64, kind: BranchKind, taken: bool) -> Self {
        Self {
            address,
            branch_kind: kind,
            taken,
        }
    }

    pub fn block(&self) -> BlockAddress {
        BlockAddress::of_instruction(self.address)
    }

    pub fn is_valid(&self) -> bool {
        self.address < (1 << ADDRESS_BITS) && !(self.branch_kind == BranchKind::None && self.taken)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {version:#04x} at byte offset {offset}")]
    BadVersion { version: u8, offset: usize },
    #[error("truncated record at byte offset {offset}")]
    TruncatedRecord { offset: usize },
    #[error("address {address:#x} exceeds 46 bits at byte offset {offset}")]
    AddressOutOfRange { address: u64, offset: usize },
    #[error("invalid flag byte {flags:#04x} at byte offset {offset}")]
    BadFlags { flags: u8, offset: usize },
    #[error("record {index} violates trace invariants")]
    InvalidRecord { index: usize },
    #[error("line {line}: {message}")]
    TextSyntax { line: usize, message: String },
}

/// Parses an MIT1 byte stream into records.
pub fn parse_trace(bytes: &[u8]) -> Result<Vec<TraceRecord>, TraceError> {
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(TraceError::BadMagic { offset: 0 });
    }
    if bytes.len() < 5 {
        return Err(TraceError::TruncatedRecord { offset: 4 });
    }
    if bytes[4] != VERSION {
        return Err(TraceError::BadVersion {
            version: bytes[4],
            offset: 4,
        });
    }
    let mut records = Vec::with_capacity((bytes.len() - 5) / RECORD_BYTES);
    let mut offset = 5;
    while offset < bytes.len() {
        if bytes.len() - offset < RECORD_BYTES {
            return Err(TraceError::TruncatedRecord { offset });
        }
        let raw = &bytes[offset..offset + RECORD_BYTES];
        let address = u64::from_le_bytes(raw[0..8].try_into().unwrap());
        if address >= (1 << ADDRESS_BITS) {
            return Err(TraceError::AddressOutOfRange { address, offset });
        }
        let flags = raw[8];
        if flags & 0xF0 != 0 {
            return Err(TraceError::BadFlags {
                flags,
                offset: offset + 8,
            });
        }
        let kind = BranchKind::from_ordinal(flags & 0x07).ok_or(TraceError::BadFlags {
            flags,
            offset: offset + 8,
        })?;
        let taken = flags & 0x08 != 0;
        if kind == BranchKind::None && taken {
            return Err(TraceError::BadFlags {
                flags,
                offset: offset + 8,
            });
        }
        records.push(TraceRecord {
            address,
            branch_kind: kind,
            taken,
        });
        offset += RECORD_BYTES;
    }
    Ok(records)
}

/// Encodes records as an MIT1 byte stream. Bit-exact inverse of `parse_trace`.
pub fn write_trace(records: &[TraceRecord]) -> Result<Vec<u8>, TraceError> {
    let mut bytes = Vec::with_capacity(5 + records.len() * RECORD_BYTES);
    bytes.extend_from_slice(MAGIC);
    bytes.push(VERSION);
    for (index, r) in records.iter().enumerate() {
        if !r.is_valid() {
            return Err(TraceError::InvalidRecord { index });
        }
        bytes.extend_from_slice(&r.address.to_le_bytes());
        bytes.push(r.branch_kind.ordinal() | if r.taken { 0x08 } else { 0 });
    }
    Ok(bytes)
}

/// Parses the text form: one record per line as `ADDR [MARKER]`, where ADDR
/// is lowercase hex and MARKER is a branch suffix letter plus an optional
/// '+' for taken; '#' starts a comment. The marker sits in its own token:
/// suffix letters b and c are hex digits, so gluing them onto the address
/// would make lines like `1fffc0b` unreadable.
pub fn parse_text_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let line_idx = lineno + 1;
        let syntax = |message: String| TraceError::TextSyntax {
            line: line_idx,
            message,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() > 2 {
            return Err(syntax(format!("expected 'ADDR [MARKER]', got {line:?}")));
        }
        let hex = tokens[0].strip_prefix("0x").unwrap_or(tokens[0]);
        let address = u64::from_str_radix(hex, 16)
            .map_err(|_| syntax(format!("bad address {:?}", tokens[0])))?;
        if address >= (1 << ADDRESS_BITS) {
            return Err(syntax(format!("address {address:#x} exceeds 46 bits")));
        }
        let (kind, taken) = match tokens.get(1) {
            None => (BranchKind::None, false),
            Some(marker) => {
                let (letter, taken) = match marker.strip_suffix('+') {
                    Some(rest) => (rest, true),
                    None => (*marker, false),
                };
                let kind = match letter {
                    "c" => BranchKind::Call,
                    "r" => BranchKind::Ret,
                    "b" => BranchKind::Conditional,
                    "j" => BranchKind::UnconditionalDirect,
                    "i" => BranchKind::Indirect,
                    other => return Err(syntax(format!("bad branch marker {other:?}"))),
                };
                (kind, taken)
            }
        };
        records.push(TraceRecord {
            address,
            branch_kind: kind,
            taken,
        });
    }
    Ok(records)
}

pub fn write_text_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{:x}", r.address));
        let letter = match r.branch_kind {
            BranchKind::None => "",
            BranchKind::Conditional => " b",
            BranchKind::UnconditionalDirect => " j",
            BranchKind::Call => " c",
            BranchKind::Ret => " r",
            BranchKind::Indirect => " i",
        };
        out.push_str(letter);
        if r.taken {
            out.push('+');
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    SequentialLoop,
    SegmentedLoop,
    CallChain,
    RandomWalk,
}

/// Parameters for the synthetic trace generators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticTraceSpec {
    pub kind: SyntheticKind,
    pub segment_count: u64,
    pub blocks_per_segment: u64,
    pub iterations: u64,
    pub seed: u64,
}

/// Segment bases sit just over 1 MiB apart so segments never share spatial
/// regions. The extra 8 KiB keeps the bases from aliasing into one
/// metadata-table set, which exact power-of-two strides would force.
pub const SEGMENT_STRIDE_BYTES: u64 = (1 << 20) + 8192;

impl SyntheticTraceSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.segment_count == 0 || self.blocks_per_segment == 0 || self.iterations == 0 {
            return Err("segment_count, blocks_per_segment and iterations must be positive".into());
        }
        let top = self.segment_count * SEGMENT_STRIDE_BYTES + self.blocks_per_segment * BLOCK_BYTES;
        if top >= 1 << ADDRESS_BITS {
            return Err("trace footprint exceeds the 46-bit address space".into());
        }
        Ok(())
    }
}

/// Generates a synthetic trace. Deterministic for a fixed spec and seed.
pub fn generate(spec: &SyntheticTraceSpec) -> Vec<TraceRecord> {
    debug_assert!(spec.validate().is_ok());
    match spec.kind {
        SyntheticKind::SequentialLoop => {
            let blocks = spec.segment_count * spec.blocks_per_segment;
            let mut records = Vec::with_capacity((blocks * spec.iterations) as usize);
            for _ in 0..spec.iterations {
                for b in 0..blocks {
                    records.push(TraceRecord::plain(b * BLOCK_BYTES));
                }
            }
            records
        }
        SyntheticKind::SegmentedLoop => {
            let mut records = Vec::with_capacity(
                (spec.segment_count * spec.blocks_per_segment * spec.iterations) as usize,
            );
            for _ in 0..spec.iterations {
                for seg in 0..spec.segment_count {
                    let base = seg * SEGMENT_STRIDE_BYTES;
                    for b in 0..spec.blocks_per_segment {
                        records.push(TraceRecord::plain(base + b * BLOCK_BYTES));
                    }
                }
            }
            records
        }
        SyntheticKind::CallChain => generate_call_chain(spec),
        SyntheticKind::RandomWalk => {
            let universe = spec.segment_count * spec.blocks_per_segment;
            let steps = universe * spec.iterations;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..steps)
                .map(|_| TraceRecord::plain(rng.gen_range(0..universe) * BLOCK_BYTES))
                .collect()
        }
    }
}

/// Nested call chain: segment k calls segment k+1 after its body, then the
/// stack unwinds with one ret per level. Calls and returns always balance.
fn generate_call_chain(spec: &SyntheticTraceSpec) -> Vec<TraceRecord> {
    let mut records = Vec::new();
    let last_addr =
        |seg: u64| seg * SEGMENT_STRIDE_BYTES + (spec.blocks_per_segment - 1) * BLOCK_BYTES;
    for _ in 0..spec.iterations {
        for seg in 0..spec.segment_count {
            let base = seg * SEGMENT_STRIDE_BYTES;
            for b in 0..spec.blocks_per_segment {
                records.push(TraceRecord::plain(base + b * BLOCK_BYTES));
            }
            if seg + 1 < spec.segment_count {
                // call site: a later instruction in the segment's last block
                records.push(TraceRecord::branch(
                    last_addr(seg) + 4,
                    BranchKind::Call,
                    true,
                ));
            }
        }
        for seg in (1..spec.segment_count).rev() {
            records.push(TraceRecord::branch(
                last_addr(seg) + 8,
                BranchKind::Ret,
                true,
            ));
        }
    }
    records
}
