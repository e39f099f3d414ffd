//! Video data region: 20-byte custom frame headers, each followed by an
//! Annex-B NAL payload. Per-channel bursts of frames are closed by a 20-byte
//! all-zero "end of channel" delimiter and padded up to the 0x1000 unit.
//!
//! ```text
//! 0      frame type (0x82 IDR, 0x02 non-IDR)
//! 1..4   80 01 00
//! 4..6   width
//! 6..8   height
//! 8..12  NAL length
//! 12..20 timestamp, Unix microseconds (wall clock)
//! 20..   00 00 00 01, NAL header, ...
//! ```

mod carve;
mod nal;

pub use carve::{carve, carve_file_name, CarveError, CarvedStream, ExportMode};
pub use nal::{
    classify_nal, nal_kinds, split_access_units, start_code_len, start_code_positions, NalError, NalKind,
    START_CODE,
};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::image::{ByteRange, ImageError, ImageHandle};
use crate::le::{is_zero, put_u16, put_u32, put_u64, u16_at, u32_at, u64_at};
use crate::metadata::{render_micros, ChannelIndexEntry, StreamType, SCALE};

pub const HEADER_LEN: usize = 20;
pub const DELIMITER_LEN: usize = 20;
pub const MAGIC: [u8; 3] = [0x80, 0x01, 0x00];
pub const MIN_DIMENSION: u16 = 16;
pub const MAX_DIMENSION: u16 = 8192;
/// Start code plus one NAL header byte.
pub const MIN_NAL_LEN: u32 = 5;
pub const MAX_NAL_LEN: u32 = 16 << 20;
/// Byte used for the filler between a delimiter and the next 0x1000 unit.
pub const PAD_BYTE: u8 = 0xA5;

/// Largest span a single frame can occupy, including both length conventions
/// and the bytes inspected after it.
const MAX_FRAME_SPAN: u64 = HEADER_LEN as u64 + MAX_NAL_LEN as u64 + 4 + DELIMITER_LEN as u64;
const SCAN_CHUNK: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FrameType {
    Idr,
    NonIdr,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x82 => Some(FrameType::Idr),
            0x02 => Some(FrameType::NonIdr),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            FrameType::Idr => 0x82,
            FrameType::NonIdr => 0x02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CustomFrameHeader {
    pub frame_type: FrameType,
    pub width: u16,
    pub height: u16,
    pub nal_length: u32,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum RejectReason {
    BadFrameType,
    BadDimensions,
    BadLength,
    NoStartCode,
    OutsideRegion,
    /// The bytes after the frame are neither a header, a delimiter nor the region end.
    NoBoundary,
}

impl CustomFrameHeader {
    /// Decodes the first 20 bytes of `raw`. Only the magic is checked.
    pub fn decode(raw: &[u8]) -> Option<(u8, Self)> {
        if raw.len() < HEADER_LEN || raw[1..4] != MAGIC {
            return None;
        }
        let type_byte = raw[0];
        let h = CustomFrameHeader {
            frame_type: FrameType::from_byte(type_byte).unwrap_or(FrameType::NonIdr),
            width: u16_at(raw, 4),
            height: u16_at(raw, 6),
            nal_length: u32_at(raw, 8),
            timestamp_us: u64_at(raw, 12),
        };
        Some((type_byte, h))
    }

    /// Field-level validation gate (everything that needs no neighbouring bytes).
    pub fn validate(raw: &[u8]) -> Result<Self, RejectReason> {
        let (type_byte, h) = Self::decode(raw).ok_or(RejectReason::BadFrameType)?;
        if FrameType::from_byte(type_byte).is_none() {
            return Err(RejectReason::BadFrameType);
        }
        let dim_ok = |d: u16| (MIN_DIMENSION..=MAX_DIMENSION).contains(&d);
        if !dim_ok(h.width) || !dim_ok(h.height) {
            return Err(RejectReason::BadDimensions);
        }
        if !(MIN_NAL_LEN..=MAX_NAL_LEN).contains(&h.nal_length) {
            return Err(RejectReason::BadLength);
        }
        Ok(h)
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut raw = [0u8; HEADER_LEN];
        raw[0] = self.frame_type.to_byte();
        raw[1..4].copy_from_slice(&MAGIC);
        put_u16(&mut raw, 4, self.width);
        put_u16(&mut raw, 6, self.height);
        put_u32(&mut raw, 8, self.nal_length);
        put_u64(&mut raw, 12, self.timestamp_us);
        raw
    }

    pub fn timestamp_secs(&self) -> u64 {
        self.timestamp_us / 1_000_000
    }
}

/// Whether the stored NAL length counted the start code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum LengthConvention {
    IncludesStartCode,
    ExcludesStartCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameRecord {
    pub header: CustomFrameHeader,
    /// Absolute offset of the custom header.
    pub abs_offset: u64,
    pub payload_range: ByteRange,
    pub convention: LengthConvention,
}

impl FrameRecord {
    pub fn end(&self) -> u64 {
        self.payload_range.end()
    }

    pub fn range(&self) -> ByteRange {
        ByteRange::from_bounds(self.abs_offset, self.end())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanStats {
    pub candidates: u64,
    pub accepted: u64,
    pub rejects: BTreeMap<RejectReason, u64>,
    pub includes_start_code: u64,
    pub excludes_start_code: u64,
    /// Frames whose header type disagrees with the NAL units they carry.
    pub type_mismatches: u64,
    pub warnings: Vec<String>,
}

const MAX_WARNINGS: usize = 64;

impl ScanStats {
    fn reject(&mut self, r: RejectReason) {
        *self.rejects.entry(r).or_default() += 1;
    }

    fn warn(&mut self, w: String) {
        if self.warnings.len() < MAX_WARNINGS {
            self.warnings.push(w);
        }
    }

    pub fn merge(&mut self, other: ScanStats) {
        self.candidates += other.candidates;
        self.accepted += other.accepted;
        for (k, v) in other.rejects {
            *self.rejects.entry(k).or_default() += v;
        }
        self.includes_start_code += other.includes_start_code;
        self.excludes_start_code += other.excludes_start_code;
        self.type_mismatches += other.type_mismatches;
        for w in other.warnings {
            self.warn(w);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FrameScan {
    pub frames: Vec<FrameRecord>,
    pub stats: ScanStats,
}

fn looks_like_header(b: &[u8]) -> bool {
    b.len() >= 4 && b[1..4] == MAGIC && FrameType::from_byte(b[0]).is_some()
}

/// Bytes at `buf[at..]` mark a legitimate frame end.
fn is_boundary(buf: &[u8], at: usize, buf_is_region_end: bool) -> bool {
    let rest = &buf[at.min(buf.len())..];
    if rest.len() >= DELIMITER_LEN {
        return is_zero(&rest[..DELIMITER_LEN]) || looks_like_header(rest);
    }
    // a short tail is only acceptable right at the region end
    buf_is_region_end && (is_zero(rest) || looks_like_header(rest))
}

/// Header/NAL agreement: IDR frames may open with parameter sets.
fn type_agrees(ft: FrameType, payload: &[u8]) -> bool {
    let kinds = nal_kinds(payload);
    match ft {
        FrameType::Idr => kinds.contains(&NalKind::IdrSlice) || kinds.iter().all(|k| k.is_parameter_set()),
        FrameType::NonIdr => kinds.first() == Some(&NalKind::NonIdrSlice),
    }
}

/// Tries to accept a frame whose header starts at `buf[h..]`.
fn try_frame(buf: &[u8], h: usize, buf_is_region_end: bool) -> Result<(CustomFrameHeader, usize, LengthConvention), RejectReason> {
    let header = CustomFrameHeader::validate(&buf[h..])?;
    let p = h + HEADER_LEN;
    if buf.len() < p + MIN_NAL_LEN as usize {
        return Err(RejectReason::OutsideRegion);
    }
    if buf[p..p + 4] != START_CODE {
        return Err(RejectReason::NoStartCode);
    }
    let n = header.nal_length as usize;
    let mut outside = true;
    for (len, conv) in [(n, LengthConvention::IncludesStartCode), (n + 4, LengthConvention::ExcludesStartCode)] {
        let end = p + len;
        if end > buf.len() {
            continue;
        }
        outside = false;
        if is_boundary(buf, end, buf_is_region_end) {
            return Ok((header, len, conv));
        }
    }
    Err(if outside { RejectReason::OutsideRegion } else { RejectReason::NoBoundary })
}

/// Scans `buf` (which starts at absolute `base`) from `from`, accepting only
/// frames whose header starts before `owned_end`. Returns the frames and the
/// buffer position the next window should resume from.
fn scan_window(
    buf: &[u8],
    base: u64,
    from: usize,
    owned_end: usize,
    buf_is_region_end: bool,
    stats: &mut ScanStats,
) -> (Vec<FrameRecord>, usize) {
    let finder = memchr::memmem::Finder::new(&MAGIC);
    let mut frames = Vec::new();
    let mut pos = from;
    loop {
        if pos >= owned_end {
            break;
        }
        // magic sits one byte into the header
        let Some(hit) = buf.get(pos + 1..).and_then(|rest| finder.find(rest)) else {
            pos = owned_end;
            break;
        };
        let h = pos + hit;
        if h >= owned_end {
            pos = owned_end;
            break;
        }
        stats.candidates += 1;
        match try_frame(buf, h, buf_is_region_end) {
            Ok((header, len, conv)) => {
                let payload = &buf[h + HEADER_LEN..h + HEADER_LEN + len];
                let rec = FrameRecord {
                    header,
                    abs_offset: base + h as u64,
                    payload_range: ByteRange::new(base + (h + HEADER_LEN) as u64, len as u64),
                    convention: conv,
                };
                stats.accepted += 1;
                match conv {
                    LengthConvention::IncludesStartCode => stats.includes_start_code += 1,
                    LengthConvention::ExcludesStartCode => stats.excludes_start_code += 1,
                }
                if !type_agrees(header.frame_type, payload) {
                    stats.type_mismatches += 1;
                    stats.warn(format!(
                        "frame at {:#x}: header type {:?} disagrees with NAL types {:?}",
                        rec.abs_offset,
                        header.frame_type,
                        nal_kinds(payload)
                    ));
                }
                pos = h + HEADER_LEN + len;
                frames.push(rec);
            }
            Err(r) => {
                stats.reject(r);
                pos = h + 1;
            }
        }
    }
    (frames, pos)
}

fn check_region(handle: &ImageHandle, region: ByteRange) -> Result<(), ImageError> {
    if region.end() > handle.size_bytes() {
        return Err(ImageError::OutOfBounds {
            offset: region.offset,
            length: region.length,
            size: handle.size_bytes(),
        });
    }
    Ok(())
}

/// Sequential scan of `region` (absolute). Resynchronises after corrupt spans
/// by sliding to the next magic pattern; padding is skipped the same way.
pub fn scan_frames(handle: &ImageHandle, region: ByteRange) -> Result<FrameScan, ImageError> {
    scan_frames_chunked(handle, region, SCAN_CHUNK)
}

fn scan_frames_chunked(handle: &ImageHandle, region: ByteRange, chunk: u64) -> Result<FrameScan, ImageError> {
    check_region(handle, region)?;
    let mut out = FrameScan::default();
    let mut cursor = region.offset;
    while cursor < region.end() {
        let owned_end = (cursor + chunk).min(region.end());
        let buf_end = (owned_end + MAX_FRAME_SPAN).min(region.end());
        let buf = handle.read_at(ByteRange::from_bounds(cursor, buf_end))?;
        let (frames, next) = scan_window(
            &buf,
            cursor,
            0,
            (owned_end - cursor) as usize,
            buf_end == region.end(),
            &mut out.stats,
        );
        out.frames.extend(frames);
        cursor = (cursor + next as u64).max(owned_end);
    }
    Ok(out)
}

/// Parallel scan over disjoint chunks of `region`. Each worker reads one
/// maximum frame past its chunk; results are merged by offset and any frame
/// overlapping an earlier accepted frame is dropped.
pub fn scan_frames_parallel(handle: &ImageHandle, region: ByteRange, chunk: u64) -> Result<FrameScan, ImageError> {
    check_region(handle, region)?;
    let chunk = chunk.max(4096);
    let starts: Vec<u64> = (region.offset..region.end()).step_by(chunk as usize).collect();
    let parts = starts
        .par_iter()
        .map(|&start| {
            let owned_end = (start + chunk).min(region.end());
            let buf_end = (owned_end + MAX_FRAME_SPAN).min(region.end());
            let buf = handle.read_at(ByteRange::from_bounds(start, buf_end))?;
            let mut stats = ScanStats::default();
            let (frames, _) =
                scan_window(&buf, start, 0, (owned_end - start) as usize, buf_end == region.end(), &mut stats);
            Ok((frames, stats))
        })
        .collect::<Result<Vec<_>, ImageError>>()?;
    let mut out = FrameScan::default();
    let mut last_end = region.offset;
    for (frames, stats) in parts {
        out.stats.merge(stats);
        for f in frames {
            if f.abs_offset >= last_end {
                last_end = f.end();
                out.frames.push(f);
            }
        }
    }
    out.stats.accepted = out.frames.len() as u64;
    Ok(out)
}

/// What closed a stream segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SegmentEnd {
    Delimiter,
    RegionEnd,
    /// Followed by something else: padding, foreign data, or a timestamp step back.
    Break,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StreamSegment {
    pub frames: Vec<FrameRecord>,
    pub start_offset: u64,
    /// End of the last frame (exclusive).
    pub end_offset: u64,
    pub channel_hint: Option<u8>,
    pub stream_hint: Option<StreamType>,
    pub first_ts: u64,
    pub last_ts: u64,
    pub terminator: SegmentEnd,
}

impl StreamSegment {
    fn from_frames(frames: Vec<FrameRecord>, terminator: SegmentEnd) -> Self {
        StreamSegment {
            start_offset: frames[0].abs_offset,
            end_offset: frames.last().unwrap().end(),
            first_ts: frames.iter().map(|f| f.header.timestamp_us).min().unwrap(),
            last_ts: frames.iter().map(|f| f.header.timestamp_us).max().unwrap(),
            channel_hint: None,
            stream_hint: None,
            frames,
            terminator,
        }
    }

    pub fn range(&self) -> ByteRange {
        ByteRange::from_bounds(self.start_offset, self.end_offset)
    }

    /// Frames, delimiter and padding rounded up to the 0x1000 unit.
    pub fn rounded_len(&self) -> u64 {
        (self.end_offset - self.start_offset + DELIMITER_LEN as u64).div_ceil(SCALE) * SCALE
    }

    pub fn annexb_len(&self) -> u64 {
        self.frames.iter().map(|f| f.payload_range.length).sum()
    }

    pub fn describe(&self) -> String {
        format!(
            "{:#x}..{:#x} ch {} {} frames {} .. {}",
            self.start_offset,
            self.end_offset,
            self.channel_hint.map(|c| c.to_string()).unwrap_or_else(|| "?".into()),
            self.frames.len(),
            render_micros(self.first_ts).text,
            render_micros(self.last_ts).text
        )
    }
}

/// Groups frames (from one scan, ordered by offset) into segments. A segment
/// continues while the next frame starts exactly where the previous one ends
/// and its timestamp does not step back.
pub fn segment_streams(frames: &[FrameRecord], handle: &ImageHandle) -> Result<Vec<StreamSegment>, ImageError> {
    let mut segments = Vec::new();
    let mut current: Vec<FrameRecord> = Vec::new();
    for f in frames {
        if let Some(prev) = current.last() {
            let contiguous = f.abs_offset == prev.end() && f.header.timestamp_us >= prev.header.timestamp_us;
            if !contiguous {
                let end = classify_end(handle, prev.end())?;
                segments.push(StreamSegment::from_frames(std::mem::take(&mut current), end));
            }
        }
        current.push(f.clone());
    }
    if let Some(prev) = current.last() {
        let end = classify_end(handle, prev.end())?;
        segments.push(StreamSegment::from_frames(current, end));
    }
    Ok(segments)
}

fn classify_end(handle: &ImageHandle, at: u64) -> Result<SegmentEnd, ImageError> {
    let size = handle.size_bytes();
    if at >= size {
        return Ok(SegmentEnd::RegionEnd);
    }
    let n = (DELIMITER_LEN as u64).min(size - at);
    let bytes = handle.read_at(ByteRange::new(at, n))?;
    Ok(if n == DELIMITER_LEN as u64 && is_zero(&bytes) {
        SegmentEnd::Delimiter
    } else if n < DELIMITER_LEN as u64 && is_zero(&bytes) {
        SegmentEnd::RegionEnd
    } else {
        SegmentEnd::Break
    })
}

/// Fills channel and stream hints from channel list entries whose resolved
/// offset (`p1_base` + relative) equals a segment's start.
pub fn attach_channel_hints(segments: &mut [StreamSegment], p1_base: u64, entries: &[ChannelIndexEntry]) {
    let by_offset: BTreeMap<u64, &ChannelIndexEntry> =
        entries.iter().map(|e| (p1_base + e.frame_start_offset.resolved, e)).collect();
    for s in segments {
        if let Some(e) = by_offset.get(&s.start_offset) {
            s.channel_hint = Some(e.channel);
            s.stream_hint = Some(e.stream_type);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG8_TS: u64 = 0x0006_4486_5C1B_CEE6;

    fn frame(ft: FrameType, ts: u64, body: &[u8]) -> Vec<u8> {
        let nal_type = if ft == FrameType::Idr { 0x65 } else { 0x41 };
        let mut payload = vec![0, 0, 0, 1, nal_type];
        payload.extend_from_slice(body);
        let h = CustomFrameHeader {
            frame_type: ft,
            width: 1920,
            height: 1080,
            nal_length: payload.len() as u32,
            timestamp_us: ts,
        };
        let mut out = h.encode().to_vec();
        out.extend(payload);
        out
    }

    fn image_with(bytes: &[u8]) -> (tempfile::TempDir, ImageHandle) {
        let dir = tempfile::tempdir().unwrap();
        let size = (bytes.len() as u64).div_ceil(512) * 512;
        let mut h = ImageHandle::create_sparse(dir.path().join("v.img"), size).unwrap();
        h.write_at(0, bytes).unwrap();
        (dir, h)
    }

    #[test]
    fn fig8_header_decodes() {
        let mut raw = vec![0x82, 0x80, 0x01, 0x00, 0x80, 0x07, 0x38, 0x04, 0x60, 0x65, 0x01, 0x00];
        raw.extend_from_slice(&FIG8_TS.to_le_bytes());
        let h = CustomFrameHeader::validate(&raw).unwrap();
        assert_eq!(h.frame_type, FrameType::Idr);
        assert_eq!((h.width, h.height), (1920, 1080));
        assert_eq!(h.nal_length, 0x016560);
        assert_eq!(render_micros(h.timestamp_us).text, "2025-11-26 21:48:41.896");
        assert_eq!(h.encode().to_vec(), raw);
    }

    #[test]
    fn zeros_are_not_a_header() {
        let (_d, h) = image_with(&[0u8; 512]);
        let scan = scan_frames(&h, ByteRange::new(0, 512)).unwrap();
        assert!(scan.frames.is_empty());
        assert_eq!(scan.stats.candidates, 0);
    }

    #[test]
    fn bad_type_rejected_scan_continues() {
        let mut bytes = frame(FrameType::Idr, FIG8_TS, &[7; 40]);
        let second = bytes.len();
        bytes.extend(frame(FrameType::NonIdr, FIG8_TS + 40_000, &[8; 30]));
        bytes.extend([0u8; 20]);
        bytes[0] = 0x55;
        let (_d, h) = image_with(&bytes);
        let scan = scan_frames(&h, ByteRange::new(0, h.size_bytes())).unwrap();
        assert_eq!(scan.frames.len(), 1);
        assert_eq!(scan.frames[0].abs_offset, second as u64);
        assert_eq!(scan.stats.rejects[&RejectReason::BadFrameType], 1);
    }

    #[test]
    fn single_frame_segment_with_delimiter() {
        let mut bytes = frame(FrameType::Idr, FIG8_TS, &[9; 11]);
        let end = bytes.len() as u64;
        bytes.extend([0u8; 20]);
        bytes.extend([PAD_BYTE; 100]);
        let (_d, h) = image_with(&bytes);
        let scan = scan_frames(&h, ByteRange::new(0, h.size_bytes())).unwrap();
        let segs = segment_streams(&scan.frames, &h).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].frames.len(), 1);
        assert_eq!(segs[0].end_offset, end);
        assert_eq!(segs[0].terminator, SegmentEnd::Delimiter);
        assert_eq!(scan.stats.includes_start_code, 1);
        assert_eq!(scan.stats.type_mismatches, 0);
    }

    #[test]
    fn length_excluding_start_code_is_tolerated() {
        let mut f = frame(FrameType::NonIdr, FIG8_TS, &[3; 16]);
        let n = u32_at(&f, 8) - 4;
        f[8..12].copy_from_slice(&n.to_le_bytes());
        f.extend([0u8; 20]);
        let (_d, h) = image_with(&f);
        let scan = scan_frames(&h, ByteRange::new(0, h.size_bytes())).unwrap();
        assert_eq!(scan.frames.len(), 1);
        assert_eq!(scan.frames[0].convention, LengthConvention::ExcludesStartCode);
        assert_eq!(scan.frames[0].payload_range.length, n as u64 + 4);
    }

    #[test]
    fn type_disagreement_is_a_warning_not_a_drop() {
        let mut f = frame(FrameType::Idr, FIG8_TS, &[3; 16]);
        f[HEADER_LEN + 4] = 0x41;
        f.extend([0u8; 20]);
        let (_d, h) = image_with(&f);
        let scan = scan_frames(&h, ByteRange::new(0, h.size_bytes())).unwrap();
        assert_eq!(scan.frames.len(), 1);
        assert_eq!(scan.stats.type_mismatches, 1);
    }

    #[test]
    fn timestamp_step_back_splits_segments() {
        let mut bytes = frame(FrameType::Idr, FIG8_TS, &[1; 8]);
        bytes.extend(frame(FrameType::NonIdr, FIG8_TS - 1, &[1; 8]));
        bytes.extend([0u8; 20]);
        let (_d, h) = image_with(&bytes);
        let scan = scan_frames(&h, ByteRange::new(0, h.size_bytes())).unwrap();
        let segs = segment_streams(&scan.frames, &h).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].terminator, SegmentEnd::Break);
    }

    fn stream_bytes(sizes: &[usize], seed: u8) -> (Vec<u8>, Vec<u64>) {
        let mut bytes = vec![PAD_BYTE; 37];
        let mut offsets = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            offsets.push(bytes.len() as u64);
            let body: Vec<u8> = (0..n).map(|j| (j as u8).wrapping_mul(31).wrapping_add(seed) | 1).collect();
            let ft = if i % 5 == 0 { FrameType::Idr } else { FrameType::NonIdr };
            bytes.extend(frame(ft, FIG8_TS + i as u64 * 1000, &body));
            if i % 7 == 6 {
                bytes.extend([0u8; 20]);
                bytes.extend([PAD_BYTE; 13]);
            }
        }
        bytes.extend([0u8; 20]);
        (bytes, offsets)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn chunked_and_parallel_match_sequential(
            sizes in prop::collection::vec(1usize..3000, 1..40),
            seed in any::<u8>(),
            chunk in 4096u64..20000,
        ) {
            let (bytes, offsets) = stream_bytes(&sizes, seed);
            let (_d, h) = image_with(&bytes);
            let region = ByteRange::new(0, h.size_bytes());
            let whole = scan_frames(&h, region).unwrap();
            let got: Vec<u64> = whole.frames.iter().map(|f| f.abs_offset).collect();
            prop_assert_eq!(&got, &offsets);
            let chunked = scan_frames_chunked(&h, region, chunk).unwrap();
            prop_assert_eq!(&chunked.frames, &whole.frames);
            let par = scan_frames_parallel(&h, region, chunk).unwrap();
            prop_assert_eq!(&par.frames, &whole.frames);
        }
    }
}
