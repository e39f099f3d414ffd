//! What the synthesizer wrote, for use as a test oracle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::Serialize;

use crate::framestream::{CustomFrameHeader, DELIMITER_LEN};
use crate::image::ByteRange;
use crate::metadata::{LayoutProfile, StreamType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TruthFrame {
    pub abs_offset: u64,
    pub header: CustomFrameHeader,
    /// Custom header plus payload.
    pub len: u64,
    pub segment: usize,
    /// Set once later writes have made the frame unrecoverable.
    pub destroyed: bool,
}

impl TruthFrame {
    pub fn end(&self) -> u64 {
        self.abs_offset + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SegmentState {
    Live,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TruthSegment {
    /// Frames only, absolute.
    pub range: ByteRange,
    /// Frames, delimiter and padding, absolute.
    pub rounded: ByteRange,
    pub channel: u8,
    pub stream: StreamType,
    pub block_seq: u32,
    pub frames: Range<usize>,
    pub state: SegmentState,
    pub first_ts: u64,
    pub last_ts: u64,
}

impl TruthSegment {
    pub fn delimiter(&self) -> ByteRange {
        ByteRange::new(self.range.end(), DELIMITER_LEN as u64)
    }
}

/// A maximal run of intact frames of one deleted segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResidualRun {
    pub segment: usize,
    pub range: ByteRange,
    pub frames: Range<usize>,
    pub first_ts: u64,
    pub last_ts: u64,
}

/// Metadata summary after one synthesizer step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepSnapshot {
    pub step: String,
    pub next_write: u64,
    pub available_units: u32,
    pub total_units: u32,
    pub block_groups: Vec<(u8, u32)>,
    pub blocks: usize,
    pub channel_entries: usize,
    /// (channel, anchor count) for every configured channel.
    pub anchors: Vec<(u8, usize)>,
    pub disk_full: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundTruth {
    pub profile: LayoutProfile,
    pub partition1: ByteRange,
    pub video_region: ByteRange,
    pub block_size: u64,
    pub frames: Vec<TruthFrame>,
    pub segments: Vec<TruthSegment>,
    pub steps: Vec<StepSnapshot>,
}

impl GroundTruth {
    /// Frames a scanner should find: everything not destroyed.
    pub fn intact_frames(&self) -> impl Iterator<Item = &TruthFrame> {
        self.frames.iter().filter(|f| !f.destroyed)
    }

    pub fn live_segments(&self) -> impl Iterator<Item = &TruthSegment> {
        self.segments.iter().filter(|s| s.state == SegmentState::Live)
    }

    pub fn deleted_segments(&self) -> impl Iterator<Item = &TruthSegment> {
        self.segments.iter().filter(|s| s.state == SegmentState::Deleted)
    }

    /// Deleted data still recoverable, split wherever frames were destroyed.
    pub fn residual_runs(&self) -> Vec<ResidualRun> {
        let mut runs = Vec::new();
        for (id, s) in self.segments.iter().enumerate() {
            if s.state != SegmentState::Deleted {
                continue;
            }
            let mut start: Option<usize> = None;
            for i in s.frames.clone().chain(std::iter::once(s.frames.end)) {
                let intact = i < s.frames.end && !self.frames[i].destroyed;
                match (intact, start) {
                    (true, None) => start = Some(i),
                    (false, Some(a)) => {
                        let fr = &self.frames[a..i];
                        runs.push(ResidualRun {
                            segment: id,
                            range: ByteRange::from_bounds(fr[0].abs_offset, fr[fr.len() - 1].end()),
                            frames: a..i,
                            first_ts: fr.iter().map(|f| f.header.timestamp_us).min().unwrap(),
                            last_ts: fr.iter().map(|f| f.header.timestamp_us).max().unwrap(),
                        });
                        start = None;
                    }
                    _ => {}
                }
            }
        }
        runs.sort_by_key(|r| r.range.offset);
        runs
    }

    /// Frame counts per (channel, stream) over live segments.
    pub fn live_frame_counts(&self) -> BTreeMap<(u8, u8), usize> {
        let mut m = BTreeMap::new();
        for s in self.live_segments() {
            *m.entry((s.channel, s.stream.to_byte())).or_default() += s.frames.len();
        }
        m
    }

    /// Tab-separated sidecar: one record per line, `#` lines are comments.
    ///
    /// Columns: kind, offset (hex, absolute), length, timestamp (µs, or s for
    /// blocks), channel, state. Kinds: `frame`, `segment`, `delimiter`,
    /// `residual`. Step snapshots follow as `step` records whose offset is the
    /// absolute next-write position and whose length is the available bytes.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# kind\toffset\tlength\ttimestamp\tchannel\tstate");
        let _ = writeln!(
            out,
            "# profile={} partition1={:#x}+{:#x} video={:#x}+{:#x} block_size={:#x}",
            self.profile.name,
            self.partition1.offset,
            self.partition1.length,
            self.video_region.offset,
            self.video_region.length,
            self.block_size
        );
        for s in &self.segments {
            let state = match s.state {
                SegmentState::Live => "live",
                SegmentState::Deleted => "deleted",
            };
            let _ = writeln!(
                out,
                "segment\t{:#x}\t{}\t{}\t{}\t{state}",
                s.range.offset, s.range.length, s.first_ts, s.channel
            );
            for f in &self.frames[s.frames.clone()] {
                let fstate = if f.destroyed { "destroyed" } else { state };
                let _ = writeln!(
                    out,
                    "frame\t{:#x}\t{}\t{}\t{}\t{fstate}",
                    f.abs_offset, f.len, f.header.timestamp_us, s.channel
                );
            }
            let d = s.delimiter();
            let _ = writeln!(out, "delimiter\t{:#x}\t{}\t-\t{}\t{state}", d.offset, d.length, s.channel);
        }
        for r in self.residual_runs() {
            let ch = self.segments[r.segment].channel;
            let _ = writeln!(out, "residual\t{:#x}\t{}\t{}\t{ch}\tdeleted", r.range.offset, r.range.length, r.first_ts);
        }
        for st in &self.steps {
            let _ = writeln!(
                out,
                "step\t{:#x}\t{}\t-\t-\t{}",
                self.partition1.offset + st.next_write,
                st.available_units as u64 * 0x1000,
                st.step
            );
        }
        out
    }
}
