use serde::Serialize;

use crate::le::{is_zero, put_u32, u32_at};

/// Size of one scaled unit; offsets and lengths are stored with the low 12 bits dropped.
pub const SCALE: u64 = 0x1000;

/// A stored offset or length with 0x1000 resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ScaledOffset {
    pub raw: u32,
    pub resolved: u64,
}

impl ScaledOffset {
    pub const fn from_raw(raw: u32) -> Self {
        ScaledOffset { raw, resolved: (raw as u64) << 12 }
    }

    /// Rounds `bytes` down to the scale unit.
    pub fn from_bytes_floor(bytes: u64) -> Self {
        Self::from_raw((bytes >> 12) as u32)
    }
}

pub const BLOCK_GROUP_TABLE_OFFSET: usize = 0x40;
pub const INDEX_ENTRY_LEN: usize = 16;

/// 16-byte block group index in the partition 1 header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockGroupIndex {
    #[serde(skip)]
    pub raw: [u8; 16],
    pub start_time: u32,
    pub group_number: u8,
}

impl BlockGroupIndex {
    pub fn new(start_time: u32, group_number: u8) -> Self {
        let mut raw = [0u8; 16];
        put_u32(&mut raw, 4, start_time);
        raw[12] = group_number;
        BlockGroupIndex { raw, start_time, group_number }
    }

    pub fn decode(raw: &[u8]) -> Self {
        BlockGroupIndex {
            raw: raw[..16].try_into().unwrap(),
            start_time: u32_at(raw, 4),
            group_number: raw[12],
        }
    }

    /// Copy with a new start time; undescribed bytes are kept.
    pub fn with_start_time(&self, start_time: u32) -> Self {
        let mut raw = self.raw;
        put_u32(&mut raw, 4, start_time);
        BlockGroupIndex { raw, start_time, group_number: self.group_number }
    }
}

/// Partition 1 header, bytes 0x0000-0x3FFF.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition1Header {
    pub video_start: ScaledOffset,
    pub next_write: ScaledOffset,
    pub available_memory: ScaledOffset,
    pub total_memory: ScaledOffset,
    pub block_groups: Vec<BlockGroupIndex>,
}

impl Partition1Header {
    /// Header of a freshly formatted disk.
    pub fn formatted(video_start: u64, total_memory_units: u32) -> Self {
        Partition1Header {
            video_start: ScaledOffset::from_bytes_floor(video_start),
            next_write: ScaledOffset::from_bytes_floor(video_start),
            available_memory: ScaledOffset::from_raw(total_memory_units),
            total_memory: ScaledOffset::from_raw(total_memory_units),
            block_groups: Vec::new(),
        }
    }

    /// Decodes a header region; the group table ends at the first all-zero entry.
    pub fn decode(region: &[u8]) -> Self {
        let mut block_groups = Vec::new();
        let mut off = BLOCK_GROUP_TABLE_OFFSET;
        while off + INDEX_ENTRY_LEN <= region.len() {
            let e = &region[off..off + INDEX_ENTRY_LEN];
            if is_zero(e) {
                break;
            }
            block_groups.push(BlockGroupIndex::decode(e));
            off += INDEX_ENTRY_LEN;
        }
        Partition1Header {
            video_start: ScaledOffset::from_raw(u32_at(region, 0x00)),
            next_write: ScaledOffset::from_raw(u32_at(region, 0x08)),
            available_memory: ScaledOffset::from_raw(u32_at(region, 0x10)),
            total_memory: ScaledOffset::from_raw(u32_at(region, 0x18)),
            block_groups,
        }
    }

    /// Encodes into a region of `len` bytes, zero-filled past the group table.
    pub fn encode(&self, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        put_u32(&mut out, 0x00, self.video_start.raw);
        put_u32(&mut out, 0x08, self.next_write.raw);
        put_u32(&mut out, 0x10, self.available_memory.raw);
        put_u32(&mut out, 0x18, self.total_memory.raw);
        for (i, g) in self.block_groups.iter().enumerate() {
            let off = BLOCK_GROUP_TABLE_OFFSET + i * INDEX_ENTRY_LEN;
            if off + INDEX_ENTRY_LEN > len {
                break;
            }
            out[off..off + INDEX_ENTRY_LEN].copy_from_slice(&g.raw);
        }
        out
    }

    pub fn max_block_groups(len: usize) -> usize {
        (len - BLOCK_GROUP_TABLE_OFFSET) / INDEX_ENTRY_LEN
    }

    /// Start time of the oldest block group still indexed.
    pub fn oldest_group_start(&self) -> Option<u32> {
        self.block_groups.iter().map(|g| g.start_time).min()
    }

    /// Looks like the state right after formatting.
    pub fn is_reset(&self) -> bool {
        self.block_groups.is_empty()
            && self.available_memory.raw == self.total_memory.raw
            && self.next_write == self.video_start
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.available_memory.raw > self.total_memory.raw {
            w.push(format!(
                "available memory {:#x} exceeds total {:#x}",
                self.available_memory.raw, self.total_memory.raw
            ));
        }
        if self.next_write.resolved < self.video_start.resolved {
            w.push(format!(
                "next write offset {:#x} precedes video start {:#x}",
                self.next_write.resolved, self.video_start.resolved
            ));
        }
        w
    }
}
