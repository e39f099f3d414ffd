//! Deletion detection: which mechanism an image reflects, and which streams
//! in the video data region are deleted but still recoverable.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::framestream::{scan_frames_parallel, segment_streams, FrameRecord, StreamSegment};
use crate::gpt::{parse_gpt, GptError, GptLayout};
use crate::image::{ByteRange, ImageError, ImageHandle, SECTOR_SIZE};
use crate::metadata::{
    detect_profile, parse_partition1, render_seconds, LayoutProfile, MetadataError, Partition1Metadata,
    BLOCK_GROUP_TABLE_OFFSET, INDEX_ENTRY_LEN,
};

const SCAN_CHUNK: u64 = 64 << 20;
/// Evidence items list at most this many ranges.
const MAX_LOCATIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mechanism {
    NoneDetected,
    Formatting,
    ExpirationOrOverwrite,
    Indeterminate,
}

impl Mechanism {
    pub fn is_deletion(self) -> bool {
        !matches!(self, Mechanism::NoneDetected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Confidence {
    Conclusive,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EvidenceKind {
    HeaderReset,
    MissingMetadata,
    OrphanTimestamps,
    AvailableMemoryDelta,
    GuidMismatchHint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub kind: EvidenceKind,
    pub detail: String,
    pub locations: Vec<ByteRange>,
    pub confidence: Confidence,
}

/// Best guess between the two mechanisms that share one static signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum LikelyCause {
    Expiration,
    Overwrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeletionVerdict {
    pub mechanism: Mechanism,
    pub evidence: Vec<Evidence>,
    pub confidence: Confidence,
    pub likely_cause: Option<LikelyCause>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CutoffSource {
    /// Streams older than the oldest block group start.
    BlockGroupStart,
    /// Streams no live channel entry accounts for.
    NoMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeletedStreamSet {
    pub streams: Vec<StreamSegment>,
    pub oldest_live_ts: Option<u32>,
    pub cutoff_source: CutoffSource,
    /// Segments not flagged.
    pub live_streams: usize,
    /// Disagreements between the timestamp rule and metadata coverage.
    pub warnings: Vec<String>,
}

impl DeletedStreamSet {
    pub fn total_bytes(&self) -> u64 {
        self.streams.iter().map(|s| s.range().length).sum()
    }
}

#[derive(Debug, Error)]
pub enum DeletionError {
    #[error("images are not of the same disk: {0}")]
    IncompatibleImages(String),
    #[error("image has no partition 1")]
    NoPartition1,
    #[error(transparent)]
    Gpt(#[from] GptError),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// True when a live channel entry spans the whole segment.
pub fn covered_by_metadata(meta: &Partition1Metadata, seg: &StreamSegment) -> bool {
    meta.channels.iter().any(|e| {
        let (start, end) = e.rel_span();
        meta.abs(start) <= seg.start_offset && seg.end_offset <= meta.abs(end)
    })
}

fn secs(us: u64) -> u64 {
    us / 1_000_000
}

fn header_location(meta: &Partition1Metadata) -> ByteRange {
    let groups = meta.header.block_groups.len().max(1);
    ByteRange::new(meta.abs(meta.profile.header.start), (BLOCK_GROUP_TABLE_OFFSET + groups * INDEX_ENTRY_LEN) as u64)
}

fn ranges<'a>(segs: impl Iterator<Item = &'a StreamSegment>) -> Vec<ByteRange> {
    segs.take(MAX_LOCATIONS).map(|s| s.range()).collect()
}

fn guid_hint(layout: &GptLayout) -> Option<Evidence> {
    let (p, s) = (layout.primary.as_ref()?, layout.secondary.as_ref()?);
    (p.disk_guid != s.disk_guid).then(|| Evidence {
        kind: EvidenceKind::GuidMismatchHint,
        detail: format!("primary disk GUID {} differs from secondary {}", p.disk_guid, s.disk_guid),
        locations: vec![
            ByteRange::new(p.current_lba * SECTOR_SIZE, SECTOR_SIZE),
            ByteRange::new(s.current_lba * SECTOR_SIZE, SECTOR_SIZE),
        ],
        confidence: Confidence::Heuristic,
    })
}

/// Verdict from already parsed structures and the segments found in the
/// video data region.
pub fn classify_segments(layout: &GptLayout, meta: &Partition1Metadata, segments: &[StreamSegment]) -> DeletionVerdict {
    let h = &meta.header;
    let mut evidence: Vec<Evidence> = guid_hint(layout).into_iter().collect();
    let uncovered: Vec<&StreamSegment> = segments.iter().filter(|s| !covered_by_metadata(meta, s)).collect();
    let missing = |evidence: &mut Vec<Evidence>| {
        if !uncovered.is_empty() {
            evidence.push(Evidence {
                kind: EvidenceKind::MissingMetadata,
                detail: format!("{} stream segment(s) have no channel list entry", uncovered.len()),
                locations: ranges(uncovered.iter().copied()),
                confidence: Confidence::Conclusive,
            });
        }
    };
    let verdict = |mechanism, evidence, confidence| DeletionVerdict { mechanism, evidence, confidence, likely_cause: None };

    if segments.is_empty() {
        return verdict(Mechanism::NoneDetected, evidence, Confidence::Conclusive);
    }

    let Some(oldest) = h.oldest_group_start() else {
        if h.is_reset() && meta.channels.is_empty() && meta.blocks.is_empty() {
            evidence.push(Evidence {
                kind: EvidenceKind::HeaderReset,
                detail: format!(
                    "block group table empty, available = total = {:#x}, next write at video start",
                    h.total_memory.raw
                ),
                locations: vec![header_location(meta)],
                confidence: Confidence::Conclusive,
            });
            missing(&mut evidence);
            return verdict(Mechanism::Formatting, evidence, Confidence::Conclusive);
        }
        missing(&mut evidence);
        if evidence.is_empty() {
            evidence.push(Evidence {
                kind: EvidenceKind::HeaderReset,
                detail: "block group table empty but header not in its formatted state".into(),
                locations: vec![header_location(meta)],
                confidence: Confidence::Heuristic,
            });
        }
        return verdict(Mechanism::Indeterminate, evidence, Confidence::Heuristic);
    };

    let orphans: Vec<&StreamSegment> = segments.iter().filter(|s| secs(s.last_ts) < oldest as u64).collect();
    if orphans.is_empty() {
        if uncovered.is_empty() {
            return verdict(Mechanism::NoneDetected, evidence, Confidence::Conclusive);
        }
        missing(&mut evidence);
        return verdict(Mechanism::Indeterminate, evidence, Confidence::Heuristic);
    }

    let earliest = orphans.iter().map(|s| s.first_ts).min().unwrap_or_default();
    evidence.push(Evidence {
        kind: EvidenceKind::OrphanTimestamps,
        detail: format!(
            "{} stream segment(s) older than the oldest block group start {} ({oldest:#010x}); earliest {}",
            orphans.len(),
            render_seconds(oldest as u64).text,
            crate::metadata::render_micros(earliest).text
        ),
        locations: ranges(orphans.iter().copied()),
        confidence: Confidence::Conclusive,
    });

    let available = h.available_memory.resolved;
    let total = h.total_memory.resolved.max(1);
    let cause = if available * 20 < total { LikelyCause::Overwrite } else { LikelyCause::Expiration };
    evidence.push(Evidence {
        kind: EvidenceKind::AvailableMemoryDelta,
        detail: format!(
            "available memory {available:#x} of {total:#x} ({:.1}%): {}",
            available as f64 * 100.0 / total as f64,
            match cause {
                LikelyCause::Overwrite => "disk near full, consistent with overwrite",
                LikelyCause::Expiration => "space was freed, consistent with expiration",
            }
        ),
        locations: vec![ByteRange::new(meta.abs(meta.profile.header.start) + 0x10, 4)],
        confidence: Confidence::Heuristic,
    });
    DeletionVerdict {
        mechanism: Mechanism::ExpirationOrOverwrite,
        evidence,
        confidence: Confidence::Conclusive,
        likely_cause: Some(cause),
    }
}

/// Scans the video data region of partition 1.
pub fn scan_segments(handle: &ImageHandle, meta: &Partition1Metadata) -> Result<Vec<StreamSegment>, ImageError> {
    let region = meta.video_region();
    let region = ByteRange::new(region.offset, region.length.min(handle.size_bytes().saturating_sub(region.offset)));
    let scan = scan_frames_parallel(handle, region, SCAN_CHUNK)?;
    segment_streams(&scan.frames, handle)
}

pub fn classify_image(
    handle: &ImageHandle,
    layout: &GptLayout,
    meta: &Partition1Metadata,
) -> Result<DeletionVerdict, ImageError> {
    Ok(classify_segments(layout, meta, &scan_segments(handle, meta)?))
}

/// Splits segments into deleted and live. With block groups present the
/// timestamp cutoff decides; otherwise metadata coverage does, and below
/// the next write offset only when channel entries exist.
pub fn deleted_from_segments(meta: &Partition1Metadata, segments: Vec<StreamSegment>) -> DeletedStreamSet {
    let oldest = meta.header.oldest_group_start();
    let next_write = meta.abs(meta.header.next_write.resolved);
    let mut warnings = Vec::new();
    let mut streams = Vec::new();
    let mut live = 0;
    for s in segments {
        let covered = covered_by_metadata(meta, &s);
        let deleted = match oldest {
            Some(t) => {
                let old = secs(s.last_ts) < t as u64;
                if old == covered {
                    warnings.push(format!(
                        "segment {:#x}: timestamp rule says {}, channel list {}",
                        s.start_offset,
                        if old { "deleted" } else { "live" },
                        if covered { "covers it" } else { "does not cover it" }
                    ));
                }
                old
            }
            None => !covered && (meta.channels.is_empty() || s.start_offset >= next_write),
        };
        if deleted {
            streams.push(s);
        } else {
            live += 1;
        }
    }
    DeletedStreamSet {
        streams,
        oldest_live_ts: oldest,
        cutoff_source: if oldest.is_some() { CutoffSource::BlockGroupStart } else { CutoffSource::NoMetadata },
        live_streams: live,
        warnings,
    }
}

pub fn find_deleted_streams(
    handle: &ImageHandle,
    meta: &Partition1Metadata,
    frames: &[FrameRecord],
) -> Result<DeletedStreamSet, ImageError> {
    Ok(deleted_from_segments(meta, segment_streams(frames, handle)?))
}

/// GPT plus partition 1 metadata of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImageSnapshot {
    pub layout: GptLayout,
    pub meta: Partition1Metadata,
}

impl ImageSnapshot {
    /// Parses an image; the profile is detected when not given.
    pub fn load(handle: &ImageHandle, profile: Option<&LayoutProfile>) -> Result<Self, DeletionError> {
        let layout = parse_gpt(handle)?;
        let p1 = layout.partition1_range.ok_or(DeletionError::NoPartition1)?;
        let profile = match profile {
            Some(p) => *p,
            None => detect_profile(handle, p1)?,
        };
        let meta = parse_partition1(handle, p1, &profile)?;
        Ok(ImageSnapshot { layout, meta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ChangeKind {
    Removed,
    Updated,
    Added,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupChange {
    pub group_number: u8,
    pub kind: ChangeKind,
    pub start_before: Option<u32>,
    pub start_after: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnchorChange {
    pub channel: u8,
    pub hour_timestamp: u32,
    pub kind: ChangeKind,
    pub index_before: Option<usize>,
    pub index_after: Option<usize>,
}

impl AnchorChange {
    /// Same hour kept, at a lower index.
    pub fn shifted_forward(&self) -> bool {
        matches!((self.index_before, self.index_after), (Some(a), Some(b)) if b < a)
    }
}

/// Metadata changes between two images of one disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MechanismDiff {
    pub group_changes: Vec<GroupChange>,
    pub blocks_before: usize,
    pub blocks_after: usize,
    pub blocks_removed: usize,
    pub blocks_added: usize,
    pub channel_entries_before: usize,
    pub channel_entries_after: usize,
    pub channel_entries_removed: usize,
    pub anchor_changes: Vec<AnchorChange>,
    pub available_delta_units: i64,
    pub available_delta_bytes: i64,
    pub next_write_before: u64,
    pub next_write_after: u64,
    pub header_reset_after: bool,
    pub disk_guid_changed: bool,
    pub partition_guids_changed: bool,
    pub fixed_value_changed: bool,
}

impl MechanismDiff {
    pub fn anchors_shifted(&self) -> usize {
        self.anchor_changes.iter().filter(|a| a.shifted_forward()).count()
    }
}

pub fn compare_pre_post(pre: &ImageSnapshot, post: &ImageSnapshot) -> Result<MechanismDiff, DeletionError> {
    let (a, b) = (&pre.meta, &post.meta);
    if a.header.total_memory != b.header.total_memory {
        return Err(DeletionError::IncompatibleImages(format!(
            "total memory {:#x} vs {:#x}",
            a.header.total_memory.raw, b.header.total_memory.raw
        )));
    }
    let (ma, mb) = (&pre.layout.machine, &post.layout.machine);
    if ma.device_id != mb.device_id || ma.model_name != mb.model_name {
        return Err(DeletionError::IncompatibleImages(format!(
            "device {} {} vs {} {}",
            ma.model_name, ma.device_id, mb.model_name, mb.device_id
        )));
    }

    let ga: BTreeMap<u8, u32> = a.header.block_groups.iter().map(|g| (g.group_number, g.start_time)).collect();
    let gb: BTreeMap<u8, u32> = b.header.block_groups.iter().map(|g| (g.group_number, g.start_time)).collect();
    let mut group_changes = Vec::new();
    for n in ga.keys().chain(gb.keys()).copied().collect::<BTreeSet<_>>() {
        let (x, y) = (ga.get(&n).copied(), gb.get(&n).copied());
        let kind = match (x, y) {
            (Some(_), None) => ChangeKind::Removed,
            (None, Some(_)) => ChangeKind::Added,
            (Some(p), Some(q)) if p != q => ChangeKind::Updated,
            _ => continue,
        };
        group_changes.push(GroupChange { group_number: n, kind, start_before: x, start_after: y });
    }

    let key = |e: &crate::metadata::BlockIndexEntry| (e.group_number, e.block_number, e.start_time);
    let ba: BTreeSet<_> = a.blocks.iter().map(key).collect();
    let bb: BTreeSet<_> = b.blocks.iter().map(key).collect();
    let ca: BTreeSet<[u8; 16]> = a.channels.iter().map(|c| c.raw).collect();
    let cb: BTreeSet<[u8; 16]> = b.channels.iter().map(|c| c.raw).collect();

    let mut anchor_changes = Vec::new();
    let channels: BTreeSet<u8> = a.record_state.iter().chain(&b.record_state).map(|t| t.channel).collect();
    for ch in channels {
        let index = |m: &Partition1Metadata| -> BTreeMap<u32, (usize, [u8; 15])> {
            m.record_state
                .iter()
                .filter(|t| t.channel == ch)
                .flat_map(|t| t.anchors.iter().enumerate().map(|(i, x)| (x.hour_timestamp, (i, x.status_bits))))
                .collect()
        };
        let (ia, ib) = (index(a), index(b));
        for hour in ia.keys().chain(ib.keys()).copied().collect::<BTreeSet<_>>() {
            let (x, y) = (ia.get(&hour), ib.get(&hour));
            let kind = match (x, y) {
                (Some(_), None) => ChangeKind::Removed,
                (None, Some(_)) => ChangeKind::Added,
                (Some(p), Some(q)) if p != q => ChangeKind::Updated,
                _ => continue,
            };
            anchor_changes.push(AnchorChange {
                channel: ch,
                hour_timestamp: hour,
                kind,
                index_before: x.map(|v| v.0),
                index_after: y.map(|v| v.0),
            });
        }
    }

    let avail_delta = b.header.available_memory.raw as i64 - a.header.available_memory.raw as i64;
    let pa: Vec<_> = pre.layout.used_entries().map(|e| e.unique_guid).collect();
    let pb: Vec<_> = post.layout.used_entries().map(|e| e.unique_guid).collect();
    Ok(MechanismDiff {
        group_changes,
        blocks_before: a.blocks.len(),
        blocks_after: b.blocks.len(),
        blocks_removed: ba.difference(&bb).count(),
        blocks_added: bb.difference(&ba).count(),
        channel_entries_before: a.channels.len(),
        channel_entries_after: b.channels.len(),
        channel_entries_removed: ca.difference(&cb).count(),
        anchor_changes,
        available_delta_units: avail_delta,
        available_delta_bytes: avail_delta * crate::metadata::SCALE as i64,
        next_write_before: a.header.next_write.resolved,
        next_write_after: b.header.next_write.resolved,
        header_reset_after: b.header.is_reset(),
        disk_guid_changed: pre.layout.disk_guid() != post.layout.disk_guid(),
        partition_guids_changed: pa != pb,
        fixed_value_changed: a.fixed_value != b.fixed_value,
    })
}
