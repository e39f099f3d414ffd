//! Partition 1 metadata: header, Video Block List, Video Channel List and
//! Record State. All offsets handled here are partition-relative; the
//! absolute position is `p1.offset + relative`. All integers little-endian.

mod header;
mod lists;
mod profile;
mod record_state;
pub mod timestamp;

pub use header::{BlockGroupIndex, Partition1Header, ScaledOffset, BLOCK_GROUP_TABLE_OFFSET, INDEX_ENTRY_LEN, SCALE};
pub use lists::{BlockIndexEntry, ChannelIndexEntry, StreamType};
pub use profile::{LayoutProfile, P1Region, Span};
pub use record_state::{RecordIndexEntry, RecordStateTable, RECORD_INDEX_LEN, STATUS_LEN};
pub use timestamp::{render_micros, render_seconds, DeviceTimestamp, RenderedTime};

use serde::Serialize;
use thiserror::Error;

use crate::image::{ByteRange, ImageError, ImageHandle};
use crate::le::{is_zero, u32_at};

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("partition 1 is {have:#x} bytes, region needs {needed:#x}")]
    TruncatedPartition { needed: u64, have: u64 },
    #[error("channel {channel}: {count} anchors overflow the record state subregion")]
    AnchorCountOverflow { channel: u8, count: u8 },
    #[error("video start {video_start:#x} matches no known layout profile")]
    UnknownLayout { video_start: u64 },
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn require(p1: ByteRange, rel_end: u64) -> Result<(), MetadataError> {
    if rel_end > p1.length {
        return Err(MetadataError::TruncatedPartition { needed: rel_end, have: p1.length });
    }
    Ok(())
}

fn read_rel(handle: &ImageHandle, p1: ByteRange, span: Span) -> Result<Vec<u8>, MetadataError> {
    require(p1, span.end)?;
    Ok(handle.read_at(ByteRange::new(p1.offset + span.start, span.len()))?)
}

/// Picks the layout profile from the stored video start offset.
pub fn detect_profile(handle: &ImageHandle, p1: ByteRange) -> Result<LayoutProfile, MetadataError> {
    let raw = read_rel(handle, p1, Span::new(0, 4))?;
    let video_start = ScaledOffset::from_raw(u32_at(&raw, 0)).resolved;
    LayoutProfile::for_video_start(video_start).ok_or(MetadataError::UnknownLayout { video_start })
}

pub fn parse_partition1_header(
    handle: &ImageHandle,
    p1: ByteRange,
    profile: &LayoutProfile,
) -> Result<Partition1Header, MetadataError> {
    Ok(Partition1Header::decode(&read_rel(handle, p1, profile.header)?))
}

const READ_CHUNK: u64 = 1 << 20;

/// Non-zero entries of the Video Block List, in on-disk order.
pub fn parse_block_list(
    handle: &ImageHandle,
    p1: ByteRange,
    profile: &LayoutProfile,
) -> Result<Vec<BlockIndexEntry>, MetadataError> {
    require(p1, profile.block_list.end)?;
    let mut out = Vec::new();
    let mut pos = profile.block_list.start;
    while pos < profile.block_list.end {
        let n = READ_CHUNK.min(profile.block_list.end - pos);
        let chunk = handle.read_at(ByteRange::new(p1.offset + pos, n))?;
        if !is_zero(&chunk) {
            out.extend(
                chunk
                    .chunks_exact(INDEX_ENTRY_LEN)
                    .filter(|e| !is_zero(e))
                    .map(BlockIndexEntry::decode),
            );
        }
        pos += n;
    }
    Ok(out)
}

/// Channel list entries up to the first pair of consecutive all-zero entries.
pub fn parse_channel_list(
    handle: &ImageHandle,
    p1: ByteRange,
    profile: &LayoutProfile,
) -> Result<Vec<ChannelIndexEntry>, MetadataError> {
    const CHUNK: u64 = 64 * 1024;
    require(p1, profile.channel_list.start + INDEX_ENTRY_LEN as u64)?;
    let end = profile.channel_list.end.min(p1.length);
    let mut out = Vec::new();
    let mut zero_run = 0;
    let mut pos = profile.channel_list.start;
    'outer: while pos < end {
        let n = CHUNK.min(end - pos);
        let chunk = handle.read_at(ByteRange::new(p1.offset + pos, n))?;
        for e in chunk.chunks_exact(INDEX_ENTRY_LEN) {
            if is_zero(e) {
                zero_run += 1;
                if zero_run == 2 {
                    break 'outer;
                }
            } else {
                zero_run = 0;
                out.push(ChannelIndexEntry::decode(e));
            }
        }
        pos += n;
    }
    Ok(out)
}

/// Record state tables for channels `1..=num_channels`.
pub fn parse_record_state(
    handle: &ImageHandle,
    p1: ByteRange,
    profile: &LayoutProfile,
    num_channels: u8,
) -> Result<Vec<RecordStateTable>, MetadataError> {
    let num_channels = num_channels.min(profile.max_channels() as u8);
    require(p1, profile.record_subregion(num_channels).end)?;
    (1..=num_channels)
        .map(|ch| {
            let sub = read_rel(handle, p1, profile.record_subregion(ch))?;
            RecordStateTable::decode(ch, &sub)
                .map_err(|count| MetadataError::AnchorCountOverflow { channel: ch, count })
        })
        .collect()
}

/// Location and checksum of the fixed-value region, which is never interpreted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixedValueFingerprint {
    pub range: ByteRange,
    /// CRC-32 over the first 64 KiB (or less when the region is smaller).
    pub crc32: u32,
    pub sampled_bytes: u64,
    pub all_zero: bool,
}

pub fn fingerprint_fixed_value(
    handle: &ImageHandle,
    p1: ByteRange,
    profile: &LayoutProfile,
) -> Result<FixedValueFingerprint, MetadataError> {
    let span = profile.fixed_value();
    let sample = Span::new(span.start, span.start + span.len().min(64 * 1024));
    let bytes = read_rel(handle, p1, sample)?;
    Ok(FixedValueFingerprint {
        range: ByteRange::new(p1.offset + span.start, span.len()),
        crc32: crc32fast::hash(&bytes),
        sampled_bytes: bytes.len() as u64,
        all_zero: is_zero(&bytes),
    })
}

/// Everything parsed out of partition 1's metadata regions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition1Metadata {
    pub profile: LayoutProfile,
    pub partition: ByteRange,
    pub header: Partition1Header,
    pub blocks: Vec<BlockIndexEntry>,
    pub channels: Vec<ChannelIndexEntry>,
    pub record_state: Vec<RecordStateTable>,
    pub fixed_value: FixedValueFingerprint,
}

impl Partition1Metadata {
    pub fn abs(&self, rel: u64) -> u64 {
        self.partition.offset + rel
    }

    /// Absolute range of the video data region.
    pub fn video_region(&self) -> ByteRange {
        ByteRange::new(
            self.abs(self.profile.video_start),
            self.partition.length.saturating_sub(self.profile.video_start),
        )
    }

    /// Record state tables with at least one anchor.
    pub fn recorded_channels(&self) -> impl Iterator<Item = &RecordStateTable> {
        self.record_state.iter().filter(|t| t.anchor_count > 0)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = self.header.warnings();
        for b in &self.blocks {
            if !b.reserved_head_clear() {
                w.push(format!(
                    "block {}.{} has non-zero reserved bytes",
                    b.group_number, b.block_number
                ));
            }
        }
        for c in &self.channels {
            if let StreamType::Unknown(t) = c.stream_type {
                w.push(format!("channel entry for channel {} has unknown stream type {t:#04x}", c.channel));
            }
            if c.frame_start_offset.resolved < self.profile.video_start {
                w.push(format!(
                    "channel {} entry offset {:#x} lies before the video region",
                    c.channel, c.frame_start_offset.resolved
                ));
            }
        }
        for t in &self.record_state {
            if t.anchors.iter().any(|a| !a.hour_aligned()) {
                w.push(format!("channel {} has anchors not on a full hour", t.channel));
            }
        }
        w
    }
}

/// Parses all metadata regions of partition 1 with the given profile.
pub fn parse_partition1(
    handle: &ImageHandle,
    p1: ByteRange,
    profile: &LayoutProfile,
) -> Result<Partition1Metadata, MetadataError> {
    let header = parse_partition1_header(handle, p1, profile)?;
    let blocks = parse_block_list(handle, p1, profile)?;
    let channels = parse_channel_list(handle, p1, profile)?;
    let record_state = parse_record_state(handle, p1, profile, profile.max_channels() as u8)?;
    let fixed_value = fingerprint_fixed_value(handle, p1, profile)?;
    Ok(Partition1Metadata { profile: *profile, partition: p1, header, blocks, channels, record_state, fixed_value })
}
