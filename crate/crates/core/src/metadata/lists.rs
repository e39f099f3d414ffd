//! Video Block List and Video Channel List entries.

use serde::Serialize;

use super::header::ScaledOffset;
use crate::le::{put_u16, put_u32, u16_at, u32_at};

/// One 16-byte block index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockIndexEntry {
    #[serde(skip)]
    pub raw: [u8; 16],
    pub start_time: u32,
    pub block_number: u8,
    pub group_number: u8,
}

impl BlockIndexEntry {
    pub fn new(start_time: u32, block_number: u8, group_number: u8) -> Self {
        let mut raw = [0u8; 16];
        put_u32(&mut raw, 4, start_time);
        raw[11] = block_number;
        raw[12] = group_number;
        BlockIndexEntry { raw, start_time, block_number, group_number }
    }

    pub fn decode(raw: &[u8]) -> Self {
        BlockIndexEntry {
            raw: raw[..16].try_into().unwrap(),
            start_time: u32_at(raw, 4),
            block_number: raw[11],
            group_number: raw[12],
        }
    }

    /// Bytes 0-3 are expected to be zero.
    pub fn reserved_head_clear(&self) -> bool {
        self.raw[..4] == [0; 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StreamType {
    Main,
    Sub,
    Unknown(u8),
}

impl StreamType {
    pub fn from_byte(b: u8) -> Self {
        match b {
            0x00 => StreamType::Main,
            0x20 => StreamType::Sub,
            other => StreamType::Unknown(other),
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            StreamType::Main => 0x00,
            StreamType::Sub => 0x20,
            StreamType::Unknown(b) => b,
        }
    }
}

/// One 16-byte channel index: where a per-channel stream segment lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelIndexEntry {
    #[serde(skip)]
    pub raw: [u8; 16],
    pub channel: u8,
    pub stream_type: StreamType,
    pub frame_length: ScaledOffset,
    pub frame_start_time: u32,
    /// Partition-relative.
    pub frame_start_offset: ScaledOffset,
}

impl ChannelIndexEntry {
    pub fn new(
        channel: u8,
        stream_type: StreamType,
        length_units: u16,
        start_time: u32,
        offset_units: u32,
    ) -> Self {
        let mut raw = [0u8; 16];
        raw[0] = channel;
        raw[1] = stream_type.to_byte();
        put_u16(&mut raw, 2, length_units);
        put_u32(&mut raw, 4, start_time);
        put_u32(&mut raw, 8, offset_units);
        Self::decode(&raw)
    }

    pub fn decode(raw: &[u8]) -> Self {
        ChannelIndexEntry {
            raw: raw[..16].try_into().unwrap(),
            channel: raw[0],
            stream_type: StreamType::from_byte(raw[1]),
            frame_length: ScaledOffset::from_raw(u16_at(raw, 2) as u32),
            frame_start_time: u32_at(raw, 4),
            frame_start_offset: ScaledOffset::from_raw(u32_at(raw, 8)),
        }
    }

    /// Partition-relative `[start, end)` of the segment this entry describes.
    pub fn rel_span(&self) -> (u64, u64) {
        let start = self.frame_start_offset.resolved;
        (start, start + self.frame_length.resolved)
    }

    /// The offset read with a x0x100 scale instead of x0x1000, for diagnostics only.
    pub fn offset_alt_scale(&self) -> u64 {
        (self.frame_start_offset.raw as u64) << 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_entry_example() {
        let mut raw = [0u8; 16];
        raw[..4].copy_from_slice(&[0x02, 0x00, 0xE9, 0x01]);
        raw[8..12].copy_from_slice(&[0x00, 0x00, 0x08, 0x00]);
        let e = ChannelIndexEntry::decode(&raw);
        assert_eq!(e.channel, 2);
        assert_eq!(e.stream_type, StreamType::Main);
        assert_eq!(e.frame_length.resolved, 0x1E9000);
        assert_eq!(e.frame_start_offset.resolved, 0x8000_0000);
        assert_eq!(e.offset_alt_scale(), 0x0800_0000);
    }

    #[test]
    fn sub_stream_byte() {
        let mut raw = [0u8; 16];
        raw[0] = 1;
        raw[1] = 0x20;
        assert_eq!(ChannelIndexEntry::decode(&raw).stream_type, StreamType::Sub);
        raw[1] = 0x7;
        assert_eq!(ChannelIndexEntry::decode(&raw).stream_type, StreamType::Unknown(7));
    }

    #[test]
    fn block_entry_byte_positions() {
        let e = BlockIndexEntry::new(0x692775A3, 0xFF, 3);
        assert_eq!(e.raw[11], 0xFF);
        assert_eq!(e.raw[12], 3);
        assert!(e.reserved_head_clear());
        assert_eq!(BlockIndexEntry::decode(&e.raw), e);
    }
}
