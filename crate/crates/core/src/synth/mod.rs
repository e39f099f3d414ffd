//! Synthetic recorder disks with ground truth.
//!
//! A [`Recorder`] owns one image file and behaves like the recorder's write
//! path: video goes into the ring buffer of the video data region as
//! per-channel segments (frames, an end-of-channel delimiter, padding to the
//! 0x1000 unit), and partition 1 metadata is kept coherent after every step.
//! Deletion by formatting, expiration and overwrite mutate the image the same
//! way the recorder does, and everything written is tracked in
//! [`GroundTruth`].

mod bits;
mod es;
mod spec_file;
mod truth;

pub use es::{escape_rbsp, reference_stream, REFERENCE_HEIGHT, REFERENCE_WIDTH};
pub use spec_file::{parse_duration, parse_size, parse_spec, parse_time};
pub use truth::{GroundTruth, ResidualRun, SegmentState, StepSnapshot, TruthFrame, TruthSegment};

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::framestream::{
    nal_kinds, split_access_units, CustomFrameHeader, FrameType, NalKind, DELIMITER_LEN, HEADER_LEN, MAX_DIMENSION,
    MIN_DIMENSION, PAD_BYTE,
};
use crate::gpt::{
    build_gpt, regenerate_guids, write_gpt, GptBuildParams, GptError, GptLayout, MachineData, PARTITION2_BYTES,
    START_SECTORS_BYTES, UNPARTITIONED_TAIL_BYTES,
};
use crate::image::{ByteRange, ImageError, ImageHandle};
use crate::metadata::{
    BlockGroupIndex, BlockIndexEntry, ChannelIndexEntry, LayoutProfile, Partition1Header, RecordIndexEntry,
    RecordStateTable, ScaledOffset, StreamType, BLOCK_GROUP_TABLE_OFFSET, INDEX_ENTRY_LEN, RECORD_INDEX_LEN, SCALE,
    STATUS_LEN,
};

/// Allocatable units of the 160 GB reference disk.
pub const REFERENCE_TOTAL_UNITS: u32 = 0x01BB_33D1;
pub const DEFAULT_MODEL: &str = "HN35080200";
pub const DEFAULT_DEVICE_ID: &str = "SN-0A1B2C3D4E5F";
const BLOCKS_PER_GROUP: u32 = 256;
const MAX_BLOCK_SEQ: u32 = 256 * BLOCKS_PER_GROUP;
const MAX_ANCHORS: usize = u8::MAX as usize;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("spec too large: {0}")]
    SpecTooLarge(String),
    #[error("no block ends before the cutoff {cutoff}")]
    NothingExpired { cutoff: u32 },
    #[error("overwrite needs a full disk")]
    DiskNotFull,
    #[error("cannot {action} in state {state:?}")]
    InvalidState { action: &'static str, state: RecorderState },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Gpt(#[from] GptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordingRound {
    /// Wall-clock seconds of the first frame.
    pub start_time: u32,
    pub duration_s: u32,
    pub frame_interval_ms: u32,
    /// Every `keyint`-th frame is an IDR frame.
    pub keyint: u32,
    pub width: u16,
    pub height: u16,
    pub main: bool,
    pub sub: bool,
}

impl RecordingRound {
    pub fn frame_count(&self) -> u64 {
        (self.duration_s as u64 * 1000 / self.frame_interval_ms.max(1) as u64).max(1)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let dim = MIN_DIMENSION..=MAX_DIMENSION;
        if self.duration_s == 0 || self.frame_interval_ms == 0 || self.keyint == 0 {
            return Err(SynthError::InvalidSpec("round needs positive duration, interval and keyint".into()));
        }
        if !dim.contains(&self.width) || !dim.contains(&self.height) {
            return Err(SynthError::InvalidSpec(format!("resolution {}x{}", self.width, self.height)));
        }
        if !self.main && !self.sub {
            return Err(SynthError::InvalidSpec("round records no stream".into()));
        }
        Ok(())
    }

    fn streams(&self) -> Vec<StreamType> {
        let mut v = Vec::new();
        if self.main {
            v.push(StreamType::Main);
        }
        if self.sub {
            v.push(StreamType::Sub);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DeletionAction {
    Formatting,
    Expiration { retention_s: u32 },
    Overwrite { extra_recording_s: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub profile: LayoutProfile,
    /// Divisor for partition 2, the unpartitioned tail and the default video region.
    pub shrink_factor: u64,
    pub video_region_len: Option<u64>,
    /// Overrides `video_region_len`: partition 1 fills the disk.
    pub disk_size: Option<u64>,
    pub total_memory_units: Option<u32>,
    pub num_channels: u8,
    pub rounds: Vec<RecordingRound>,
    pub deletion: Option<DeletionAction>,
    /// Rounds recorded after the deletion.
    pub resume: Vec<RecordingRound>,
    /// Instant of the expiration sweep; defaults to just after the last frame.
    pub now: Option<u32>,
    pub seed: u64,
    pub source_es: Option<Vec<u8>>,
    /// Video bytes per block; defaults to the ring length / (4 * 256).
    pub block_size: Option<u64>,
    /// Length of one write burst per channel.
    pub segment_s: u32,
    pub device_id: String,
    pub model_name: String,
    pub max_disk_bytes: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            profile: LayoutProfile::COMPACT,
            shrink_factor: 1024,
            video_region_len: None,
            disk_size: None,
            total_memory_units: None,
            num_channels: 1,
            rounds: Vec::new(),
            deletion: None,
            resume: Vec::new(),
            now: None,
            seed: 0,
            source_es: None,
            block_size: None,
            segment_s: 60,
            device_id: DEFAULT_DEVICE_ID.into(),
            model_name: DEFAULT_MODEL.into(),
            max_disk_bytes: 256 << 30,
        }
    }
}

/// Sizes derived from a spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DiskGeometry {
    pub disk_size: u64,
    pub partition1_len: u64,
    pub video_region_len: u64,
    pub total_units: u32,
    pub block_size: u64,
}

impl SynthSpec {
    pub fn geometry(&self) -> Result<DiskGeometry, SynthError> {
        let shrink = self.shrink_factor;
        if shrink == 0 || !shrink.is_power_of_two() || UNPARTITIONED_TAIL_BYTES / shrink < 64 * 512 {
            return Err(SynthError::InvalidSpec(format!("shrink factor {shrink}")));
        }
        let overhead = START_SECTORS_BYTES + PARTITION2_BYTES / shrink + UNPARTITIONED_TAIL_BYTES / shrink;
        let video_start = self.profile.video_start;
        let (disk_size, p1_len) = match self.disk_size {
            Some(d) => {
                let p1 = d.saturating_sub(overhead) / SCALE * SCALE;
                if p1 <= video_start + SCALE {
                    return Err(SynthError::InvalidSpec(format!("disk size {d:#x} leaves no video region")));
                }
                (d / 512 * 512, p1)
            }
            None => {
                let default = ((REFERENCE_TOTAL_UNITS as u64 * SCALE) / shrink / SCALE * SCALE).max(0x10_0000);
                let v = self.video_region_len.unwrap_or(default);
                if v < SCALE || !v.is_multiple_of(SCALE) {
                    return Err(SynthError::InvalidSpec(format!("video region length {v:#x}")));
                }
                (overhead + video_start + v, video_start + v)
            }
        };
        let video_region_len = p1_len - video_start;
        let total_units = match self.total_memory_units {
            Some(t) if t as u64 * SCALE <= video_region_len && t > 0 => t,
            Some(t) => return Err(SynthError::InvalidSpec(format!("total memory {t:#x} units exceeds the video region"))),
            None => u32::try_from(video_region_len / SCALE)
                .map_err(|_| SynthError::SpecTooLarge("video region beyond 32-bit units".into()))?,
        };
        if disk_size > self.max_disk_bytes {
            return Err(SynthError::SpecTooLarge(format!(
                "disk of {disk_size:#x} bytes exceeds the cap {:#x}",
                self.max_disk_bytes
            )));
        }
        let ring = total_units as u64 * SCALE;
        let block_size = match self.block_size {
            Some(b) if b > 0 => b,
            Some(_) => return Err(SynthError::InvalidSpec("block size 0".into())),
            None => (ring / (4 * BLOCKS_PER_GROUP as u64) / SCALE * SCALE).max(SCALE),
        };
        Ok(DiskGeometry { disk_size, partition1_len: p1_len, video_region_len, total_units, block_size })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RecorderState {
    Recording,
    Formatted,
    Expired,
    Overwritten,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RoundOutcome {
    pub frames_written: u64,
    pub segments_written: u64,
    /// Recording stopped because the ring had no free space.
    pub disk_full: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeletionDelta {
    pub blocks_removed: usize,
    pub segments_removed: usize,
    pub freed_bytes: u64,
    pub cutoff: Option<u32>,
}

#[derive(Debug, Clone)]
struct Block {
    seq: u32,
    start_time: u32,
    last_time: u32,
    segments: Vec<usize>,
    bytes: u64,
}

struct PendingFrame {
    header: CustomFrameHeader,
    payload: Vec<u8>,
}

pub struct Recorder {
    handle: ImageHandle,
    layout: GptLayout,
    profile: LayoutProfile,
    p1: ByteRange,
    geometry: DiskGeometry,
    num_channels: u8,
    segment_s: u32,
    rng: ChaCha8Rng,
    source_units: Option<Vec<Vec<u8>>>,
    unit_cursor: BTreeMap<(u8, u8), usize>,

    ring_end: u64,
    next_write: u64,
    available_units: u32,
    blocks: VecDeque<Block>,
    block_open: bool,
    next_seq: u32,
    /// Live segments by partition-relative start: (end, segment id).
    live: BTreeMap<u64, (u64, usize)>,
    /// Intact frames of deleted segments by absolute offset: (frame id, guard end).
    intact_dead: BTreeMap<u64, (usize, u64)>,
    anchors: Vec<Vec<RecordIndexEntry>>,
    /// Live frame count per (channel, hour).
    hour_frames: BTreeMap<(u8, u32), u64>,
    written_block_bytes: u64,
    written_channel_bytes: u64,
    written_anchor_bytes: Vec<u64>,

    state: RecorderState,
    disk_full: bool,
    last_round: Option<RecordingRound>,
    last_frame_us: u64,
    truth: GroundTruth,
}

impl Recorder {
    /// Creates a freshly formatted disk image at `path`.
    pub fn create(spec: &SynthSpec, path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let profile = spec.profile;
        if spec.num_channels == 0 || spec.num_channels as u64 > profile.max_channels() {
            return Err(SynthError::InvalidSpec(format!("{} channels", spec.num_channels)));
        }
        if spec.segment_s == 0 {
            return Err(SynthError::InvalidSpec("segment_s 0".into()));
        }
        let geometry = spec.geometry()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let machine_sector = MachineData::build_sector(&spec.device_id, &spec.model_name);
        let built = build_gpt(
            &GptBuildParams {
                disk_size: geometry.disk_size,
                partition1_bytes: geometry.partition1_len,
                shrink: spec.shrink_factor,
                machine_sector,
            },
            &mut rng,
        )?;
        let mut handle = ImageHandle::create_sparse(path, geometry.disk_size)?;
        handle.write_at(0, &built.start_sectors)?;
        handle.write_at(built.tail_offset, &built.tail)?;
        let p1 = built.layout.partition1_range.expect("built layout has partition 1");

        // vendor constants, never touched afterwards
        let fixed = profile.fixed_value();
        let mut pattern = vec![0u8; fixed.len().min(0x1000) as usize];
        rng.fill_bytes(&mut pattern);
        handle.write_at(p1.offset + fixed.start, &pattern)?;

        let source_units = match &spec.source_es {
            Some(es) => {
                let units: Vec<Vec<u8>> = split_access_units(es).into_iter().map(<[u8]>::to_vec).collect();
                if units.is_empty() {
                    return Err(SynthError::InvalidSpec("source elementary stream has no NAL units".into()));
                }
                Some(units)
            }
            None => None,
        };

        let truth = GroundTruth {
            profile,
            partition1: p1,
            video_region: ByteRange::new(p1.offset + profile.video_start, geometry.video_region_len),
            block_size: geometry.block_size,
            frames: Vec::new(),
            segments: Vec::new(),
            steps: Vec::new(),
        };
        let mut r = Recorder {
            handle,
            layout: built.layout,
            profile,
            p1,
            geometry,
            num_channels: spec.num_channels,
            segment_s: spec.segment_s,
            rng,
            source_units,
            unit_cursor: BTreeMap::new(),
            ring_end: profile.video_start + geometry.total_units as u64 * SCALE,
            next_write: profile.video_start,
            available_units: geometry.total_units,
            blocks: VecDeque::new(),
            block_open: false,
            next_seq: 0,
            live: BTreeMap::new(),
            intact_dead: BTreeMap::new(),
            anchors: vec![Vec::new(); spec.num_channels as usize],
            hour_frames: BTreeMap::new(),
            written_block_bytes: 0,
            written_channel_bytes: 0,
            written_anchor_bytes: vec![0; spec.num_channels as usize],
            state: RecorderState::Recording,
            disk_full: false,
            last_round: None,
            last_frame_us: 0,
            truth,
        };
        r.flush_metadata()?;
        r.snapshot("format");
        Ok(r)
    }

    pub fn handle(&self) -> &ImageHandle {
        &self.handle
    }

    pub fn layout(&self) -> &GptLayout {
        &self.layout
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn geometry(&self) -> DiskGeometry {
        self.geometry
    }

    pub fn state(&self) -> RecorderState {
        self.state
    }

    pub fn disk_full(&self) -> bool {
        self.disk_full
    }

    pub fn last_frame_us(&self) -> u64 {
        self.last_frame_us
    }

    pub fn finish(mut self) -> Result<(ImageHandle, GroundTruth), SynthError> {
        self.handle.flush()?;
        Ok((self.handle, self.truth))
    }

    pub fn record_round(&mut self, round: &RecordingRound) -> Result<RoundOutcome, SynthError> {
        if self.state != RecorderState::Recording {
            return Err(SynthError::InvalidState { action: "record", state: self.state });
        }
        let out = self.record(round, false)?;
        self.flush_metadata()?;
        self.snapshot("round");
        Ok(out)
    }

    /// Recording after formatting starts over at the video start; after
    /// expiration it appends behind the newest remaining data.
    pub fn resume_recording(&mut self, round: &RecordingRound) -> Result<RoundOutcome, SynthError> {
        if !matches!(self.state, RecorderState::Formatted | RecorderState::Expired) {
            return Err(SynthError::InvalidState { action: "resume recording", state: self.state });
        }
        self.state = RecorderState::Recording;
        let out = self.record(round, false)?;
        self.flush_metadata()?;
        self.snapshot("resume");
        Ok(out)
    }

    pub fn apply_formatting(&mut self) -> Result<DeletionDelta, SynthError> {
        let mut layout = regenerate_guids(&self.layout, &mut self.rng);
        write_gpt(&mut self.handle, &mut layout)?;
        self.layout = layout;
        let mut delta = DeletionDelta::default();
        while !self.blocks.is_empty() {
            self.delete_oldest_block(&mut delta);
        }
        self.block_open = false;
        self.next_seq = 0;
        self.next_write = self.profile.video_start;
        self.available_units = self.geometry.total_units;
        for a in &mut self.anchors {
            a.clear();
        }
        self.hour_frames.clear();
        self.disk_full = false;
        self.flush_metadata()?;
        self.state = RecorderState::Formatted;
        self.snapshot("formatting");
        Ok(delta)
    }

    /// One atomic sweep at `now`: removes the oldest blocks whose every frame
    /// is older than `now - retention_s`.
    pub fn apply_expiration(&mut self, retention_s: u32, now: u32) -> Result<DeletionDelta, SynthError> {
        if retention_s == 0 {
            return Err(SynthError::InvalidSpec("expiration retention 0".into()));
        }
        let cutoff = now.saturating_sub(retention_s);
        let expired = self.blocks.iter().take_while(|b| b.last_time < cutoff).count();
        if expired == 0 {
            return Err(SynthError::NothingExpired { cutoff });
        }
        let mut delta = DeletionDelta { cutoff: Some(cutoff), ..Default::default() };
        for _ in 0..expired {
            self.delete_oldest_block(&mut delta);
        }
        if self.blocks.is_empty() {
            self.block_open = false;
        }
        self.disk_full = false;
        self.flush_metadata()?;
        self.state = RecorderState::Expired;
        self.snapshot("expiration");
        Ok(delta)
    }

    /// Keeps recording for `extra_recording_s` on a full disk, deleting the
    /// oldest blocks to make room.
    pub fn apply_overwrite(&mut self, extra_recording_s: u32) -> Result<DeletionDelta, SynthError> {
        if !self.disk_full {
            return Err(SynthError::DiskNotFull);
        }
        let last = self.last_round.clone().ok_or(SynthError::DiskNotFull)?;
        let round = RecordingRound {
            start_time: (self.last_frame_us / 1_000_000) as u32 + (last.frame_interval_ms / 1000).max(1),
            duration_s: extra_recording_s,
            ..last
        };
        let before: usize = self.truth.deleted_segments().count();
        let freed_before = self.deleted_bytes();
        self.record(&round, true)?;
        self.flush_metadata()?;
        self.state = RecorderState::Overwritten;
        self.snapshot("overwrite");
        let segments_removed = self.truth.deleted_segments().count() - before;
        Ok(DeletionDelta {
            blocks_removed: 0,
            segments_removed,
            freed_bytes: self.deleted_bytes() - freed_before,
            cutoff: None,
        })
    }

    fn deleted_bytes(&self) -> u64 {
        self.truth.deleted_segments().map(|s| s.rounded.length).sum()
    }

    fn rel(&self, abs: u64) -> u64 {
        abs - self.p1.offset
    }

    fn record(&mut self, round: &RecordingRound, overwrite: bool) -> Result<RoundOutcome, SynthError> {
        round.validate()?;
        let start_us = round.start_time as u64 * 1_000_000;
        if self.last_frame_us != 0 && start_us <= self.last_frame_us {
            return Err(SynthError::InvalidSpec(format!(
                "round at {} does not start after the previous recording",
                round.start_time
            )));
        }
        self.last_round = Some(round.clone());
        let mut out = RoundOutcome::default();
        if self.disk_full && !overwrite {
            out.disk_full = true;
            return Ok(out);
        }
        let n = round.frame_count();
        let interval_us = round.frame_interval_ms as u64 * 1000;
        let segment_s = self.segment_s as u64;
        let window_of = |i: u64| (i * interval_us / 1_000_000) / segment_s;
        let mut i = 0;
        while i < n {
            let w = window_of(i);
            let mut j = i;
            while j < n && window_of(j) == w {
                j += 1;
            }
            if self.block_open && self.blocks.back().map(|b| b.bytes >= self.geometry.block_size).unwrap_or(true) {
                self.block_open = false;
            }
            for ch in 1..=self.num_channels {
                for stream in round.streams() {
                    let frames = self.build_frames(round, ch, stream, i..j, start_us, interval_us);
                    let count = frames.len() as u64;
                    if !self.write_segment(ch, stream, frames, overwrite)? {
                        self.disk_full = true;
                        out.disk_full = true;
                        return Ok(out);
                    }
                    out.frames_written += count;
                    out.segments_written += 1;
                }
            }
            i = j;
        }
        Ok(out)
    }

    fn build_frames(
        &mut self,
        round: &RecordingRound,
        ch: u8,
        stream: StreamType,
        idx: std::ops::Range<u64>,
        start_us: u64,
        interval_us: u64,
    ) -> Vec<PendingFrame> {
        let (width, height) = match stream {
            StreamType::Sub => ((round.width / 4).max(MIN_DIMENSION), (round.height / 4).max(MIN_DIMENSION)),
            _ => (round.width, round.height),
        };
        idx.map(|i| {
            let (frame_type, payload) = match &self.source_units {
                Some(units) => {
                    let cursor = self.unit_cursor.entry((ch, stream.to_byte())).or_default();
                    let unit = units[*cursor % units.len()].clone();
                    *cursor += 1;
                    let ft = if nal_kinds(&unit).contains(&NalKind::IdrSlice) { FrameType::Idr } else { FrameType::NonIdr };
                    (ft, unit)
                }
                None => {
                    let ft = if i % round.keyint as u64 == 0 { FrameType::Idr } else { FrameType::NonIdr };
                    (ft, filler_payload(&mut self.rng, ft, stream))
                }
            };
            PendingFrame {
                header: CustomFrameHeader {
                    frame_type,
                    width,
                    height,
                    nal_length: payload.len() as u32,
                    timestamp_us: start_us + i * interval_us,
                },
                payload,
            }
        })
        .collect()
    }

    /// Writes one segment; false when the ring has no room and overwriting is off.
    fn write_segment(
        &mut self,
        ch: u8,
        stream: StreamType,
        frames: Vec<PendingFrame>,
        overwrite: bool,
    ) -> Result<bool, SynthError> {
        let body: u64 = frames.iter().map(|f| (HEADER_LEN + f.payload.len()) as u64).sum();
        let rounded = (body + DELIMITER_LEN as u64).div_ceil(SCALE) * SCALE;
        if rounded / SCALE > u16::MAX as u64 {
            return Err(SynthError::SpecTooLarge(format!("segment of {rounded:#x} bytes exceeds the 16-bit length field")));
        }
        let Some(p) = self.place(rounded, overwrite)? else {
            return Ok(false);
        };
        let first_s = (frames[0].header.timestamp_us / 1_000_000) as u32;
        let last_s = (frames.last().unwrap().header.timestamp_us / 1_000_000) as u32;
        if !self.block_open {
            self.open_block(first_s)?;
        }
        let max_entries = (self.profile.channel_list.len() / INDEX_ENTRY_LEN as u64) as usize - 2;
        if self.live.len() + 1 > max_entries {
            return Err(SynthError::SpecTooLarge("channel list is full".into()));
        }

        let mut bytes = Vec::with_capacity(rounded as usize);
        let abs = self.p1.offset + p;
        let seg_id = self.truth.segments.len();
        let first_frame = self.truth.frames.len();
        for f in &frames {
            let off = abs + bytes.len() as u64;
            bytes.extend_from_slice(&f.header.encode());
            bytes.extend_from_slice(&f.payload);
            self.truth.frames.push(TruthFrame {
                abs_offset: off,
                header: f.header,
                len: (HEADER_LEN + f.payload.len()) as u64,
                segment: seg_id,
                destroyed: false,
            });
        }
        bytes.resize(bytes.len() + DELIMITER_LEN, 0);
        bytes.resize(rounded as usize, PAD_BYTE);
        self.handle.write_at(abs, &bytes)?;
        self.destroy(abs, abs + rounded);

        self.truth.segments.push(TruthSegment {
            range: ByteRange::new(abs, body),
            rounded: ByteRange::new(abs, rounded),
            channel: ch,
            stream,
            block_seq: self.blocks.back().unwrap().seq,
            frames: first_frame..self.truth.frames.len(),
            state: SegmentState::Live,
            first_ts: frames[0].header.timestamp_us,
            last_ts: frames.last().unwrap().header.timestamp_us,
        });
        self.live.insert(p, (p + rounded, seg_id));
        let block = self.blocks.back_mut().unwrap();
        block.segments.push(seg_id);
        block.bytes += rounded;
        block.last_time = block.last_time.max(last_s);
        self.available_units -= (rounded / SCALE) as u32;
        self.next_write = p + rounded;
        self.last_frame_us = self.last_frame_us.max(frames.last().unwrap().header.timestamp_us);
        for f in &frames {
            self.mark_recorded(ch, f.header.timestamp_us)?;
        }
        Ok(true)
    }

    fn overlaps_live(&self, start: u64, len: u64) -> bool {
        self.live
            .range(..start + len)
            .next_back()
            .map(|(_, (end, _))| *end > start)
            .unwrap_or(false)
    }

    fn place(&mut self, rounded: u64, overwrite: bool) -> Result<Option<u64>, SynthError> {
        let video_start = self.profile.video_start;
        if rounded > self.ring_end - video_start {
            return Err(SynthError::SpecTooLarge(format!("segment of {rounded:#x} bytes exceeds the ring")));
        }
        let mut p = self.next_write;
        if p + rounded > self.ring_end {
            p = video_start;
        }
        let units = (rounded / SCALE) as u32;
        let mut delta = DeletionDelta::default();
        while self.overlaps_live(p, rounded) || self.available_units < units {
            if !overwrite {
                return Ok(None);
            }
            if self.block_open && self.blocks.len() == 1 {
                return Err(SynthError::SpecTooLarge("one block is larger than the ring".into()));
            }
            self.delete_oldest_block(&mut delta);
        }
        Ok(Some(p))
    }

    fn open_block(&mut self, start_time: u32) -> Result<(), SynthError> {
        let seq = self.next_seq;
        if seq >= MAX_BLOCK_SEQ {
            return Err(SynthError::SpecTooLarge("block numbering exhausted".into()));
        }
        if self.blocks.len() + 1 > (self.profile.block_list.len() / INDEX_ENTRY_LEN as u64) as usize {
            return Err(SynthError::SpecTooLarge("block list is full".into()));
        }
        self.blocks.push_back(Block { seq, start_time, last_time: start_time, segments: Vec::new(), bytes: 0 });
        self.next_seq += 1;
        self.block_open = true;
        Ok(())
    }

    fn delete_oldest_block(&mut self, delta: &mut DeletionDelta) {
        let Some(block) = self.blocks.pop_front() else { return };
        if self.blocks.is_empty() {
            self.block_open = false;
        }
        delta.blocks_removed += 1;
        for id in block.segments {
            let seg = &mut self.truth.segments[id];
            seg.state = SegmentState::Deleted;
            let rel = seg.rounded.offset - self.p1.offset;
            let units = (seg.rounded.length / SCALE) as u32;
            let ch = seg.channel;
            let frames = seg.frames.clone();
            self.live.remove(&rel);
            self.available_units += units;
            delta.segments_removed += 1;
            delta.freed_bytes += units as u64 * SCALE;
            let last = frames.end - 1;
            for i in frames {
                let f = &self.truth.frames[i];
                // the scanner needs the next header's first bytes, or the whole delimiter
                let guard = f.end() + if i == last { DELIMITER_LEN as u64 } else { 4 };
                let (abs, hour, destroyed) = (f.abs_offset, hour_of(f.header.timestamp_us), f.destroyed);
                if !destroyed {
                    self.intact_dead.insert(abs, (i, guard));
                }
                self.unmark_recorded(ch, hour);
            }
        }
    }

    /// Marks deleted frames hit by a write to `[start, end)` as destroyed.
    fn destroy(&mut self, start: u64, end: u64) {
        let mut hit = Vec::new();
        for (&off, &(id, guard)) in self.intact_dead.range(..end).rev() {
            if guard <= start {
                break;
            }
            hit.push((off, id));
        }
        for (off, id) in hit {
            self.intact_dead.remove(&off);
            self.truth.frames[id].destroyed = true;
        }
    }

    fn mark_recorded(&mut self, ch: u8, ts_us: u64) -> Result<(), SynthError> {
        let secs = (ts_us / 1_000_000) as u32;
        let hour = secs - secs % 3600;
        let minute = (secs % 3600) / 60;
        *self.hour_frames.entry((ch, hour)).or_default() += 1;
        let cap = MAX_ANCHORS.min(((self.profile.record_subregion_len as usize) - 1) / RECORD_INDEX_LEN);
        let anchors = &mut self.anchors[ch as usize - 1];
        // main and sub frames of one window can straddle an hour boundary
        let idx = match anchors.iter().rposition(|a| a.hour_timestamp <= hour) {
            Some(i) if anchors[i].hour_timestamp == hour => i,
            _ if anchors.last().is_some_and(|a| a.hour_timestamp > hour) => {
                return Err(SynthError::InvalidSpec("recording went back in time".into()));
            }
            _ => {
                if anchors.len() >= cap {
                    return Err(SynthError::SpecTooLarge(format!("channel {ch} needs more than {cap} hour anchors")));
                }
                anchors.push(RecordIndexEntry::new(hour, [0; STATUS_LEN]));
                anchors.len() - 1
            }
        };
        let a = &mut anchors[idx];
        let mut bits = a.status_bits;
        bits[(minute / 8) as usize] |= 1 << (minute % 8);
        *a = RecordIndexEntry::new(hour, bits);
        Ok(())
    }

    fn unmark_recorded(&mut self, ch: u8, hour: u32) {
        if let Some(n) = self.hour_frames.get_mut(&(ch, hour)) {
            *n -= 1;
            if *n == 0 {
                self.hour_frames.remove(&(ch, hour));
                // later anchors shift forward
                self.anchors[ch as usize - 1].retain(|a| a.hour_timestamp != hour);
            }
        }
    }

    fn block_groups(&self) -> Vec<BlockGroupIndex> {
        let mut groups: BTreeMap<u32, u32> = BTreeMap::new();
        for b in &self.blocks {
            let g = groups.entry(b.seq / BLOCKS_PER_GROUP).or_insert(b.start_time);
            *g = (*g).min(b.start_time);
        }
        groups.into_iter().map(|(g, t)| BlockGroupIndex::new(t, g as u8)).collect()
    }

    fn header(&self) -> Partition1Header {
        Partition1Header {
            video_start: ScaledOffset::from_bytes_floor(self.profile.video_start),
            next_write: ScaledOffset::from_bytes_floor(self.next_write),
            available_memory: ScaledOffset::from_raw(self.available_units),
            total_memory: ScaledOffset::from_raw(self.geometry.total_units),
            block_groups: self.block_groups(),
        }
    }

    fn write_list(&mut self, start: u64, bytes: Vec<u8>, previous: u64) -> Result<u64, SynthError> {
        let n = bytes.len() as u64;
        self.handle.write_at(self.p1.offset + start, &bytes)?;
        if previous > n {
            self.handle.zero_range(ByteRange::new(self.p1.offset + start + n, previous - n))?;
        }
        Ok(n)
    }

    fn flush_metadata(&mut self) -> Result<(), SynthError> {
        let header = self.header();
        debug_assert!(header.block_groups.len() <= Partition1Header::max_block_groups(self.profile.header.len() as usize));
        debug_assert!(BLOCK_GROUP_TABLE_OFFSET < self.profile.header.len() as usize);
        self.handle.write_at(self.p1.offset + self.profile.header.start, &header.encode(self.profile.header.len() as usize))?;

        let mut blocks = Vec::with_capacity(self.blocks.len() * INDEX_ENTRY_LEN);
        let mut channels = Vec::new();
        for b in &self.blocks {
            blocks.extend_from_slice(
                &BlockIndexEntry::new(b.start_time, (b.seq % BLOCKS_PER_GROUP) as u8, (b.seq / BLOCKS_PER_GROUP) as u8).raw,
            );
            for &id in &b.segments {
                let s = &self.truth.segments[id];
                let e = ChannelIndexEntry::new(
                    s.channel,
                    s.stream,
                    (s.rounded.length / SCALE) as u16,
                    (s.first_ts / 1_000_000) as u32,
                    (self.rel(s.rounded.offset) / SCALE) as u32,
                );
                channels.extend_from_slice(&e.raw);
            }
        }
        self.written_block_bytes = self.write_list(self.profile.block_list.start, blocks, self.written_block_bytes)?;
        self.written_channel_bytes =
            self.write_list(self.profile.channel_list.start, channels, self.written_channel_bytes)?;

        for ch in 1..=self.num_channels {
            let anchors = self.anchors[ch as usize - 1].clone();
            let table = RecordStateTable { channel: ch, anchor_count: anchors.len() as u8, anchors };
            let used = 1 + table.anchors.len() * RECORD_INDEX_LEN;
            let bytes = table.encode(used);
            let prev = self.written_anchor_bytes[ch as usize - 1];
            let start = self.profile.record_subregion(ch).start;
            self.written_anchor_bytes[ch as usize - 1] = self.write_list(start, bytes, prev)?;
        }
        Ok(())
    }

    fn snapshot(&mut self, step: &str) {
        let header = self.header();
        let snap = StepSnapshot {
            step: step.into(),
            next_write: self.next_write,
            available_units: self.available_units,
            total_units: self.geometry.total_units,
            block_groups: header.block_groups.iter().map(|g| (g.group_number, g.start_time)).collect(),
            blocks: self.blocks.len(),
            channel_entries: self.live.len(),
            anchors: (1..=self.num_channels).map(|c| (c, self.anchors[c as usize - 1].len())).collect(),
            disk_full: self.disk_full,
        };
        self.truth.steps.push(snap);
    }
}

fn hour_of(ts_us: u64) -> u32 {
    let s = (ts_us / 1_000_000) as u32;
    s - s % 3600
}

fn random_nonzero(rng: &mut impl RngCore, n: usize, out: &mut Vec<u8>) {
    let start = out.len();
    out.resize(start + n, 0);
    rng.fill_bytes(&mut out[start..]);
    for b in &mut out[start..] {
        if *b == 0 {
            *b = 0xFF;
        }
    }
}

/// Syntactically framed NAL units with random bodies that contain no zero
/// byte, so no start code or delimiter can appear inside them.
fn filler_payload(rng: &mut ChaCha8Rng, ft: FrameType, stream: StreamType) -> Vec<u8> {
    let div = if stream == StreamType::Sub { 4 } else { 1 };
    let mut p = Vec::new();
    match ft {
        FrameType::Idr => {
            p.extend_from_slice(&[0, 0, 0, 1, 0x67]);
            random_nonzero(rng, 8, &mut p);
            p.extend_from_slice(&[0, 0, 0, 1, 0x68]);
            random_nonzero(rng, 4, &mut p);
            p.extend_from_slice(&[0, 0, 0, 1, 0x65]);
            let n = rng.gen_range(256..1024) / div;
            random_nonzero(rng, n, &mut p);
        }
        FrameType::NonIdr => {
            p.extend_from_slice(&[0, 0, 0, 1, 0x41]);
            let n = rng.gen_range(32..256) / div;
            random_nonzero(rng, n, &mut p);
        }
    }
    p
}

/// Runs a whole spec: rounds, the optional deletion, then any resumed rounds.
pub fn synthesize(spec: &SynthSpec, out_path: impl AsRef<Path>) -> Result<(ImageHandle, GroundTruth), SynthError> {
    let mut r = Recorder::create(spec, out_path)?;
    for round in &spec.rounds {
        r.record_round(round)?;
    }
    match spec.deletion {
        None => {}
        Some(DeletionAction::Formatting) => {
            r.apply_formatting()?;
        }
        Some(DeletionAction::Expiration { retention_s }) => {
            let now = spec.now.unwrap_or((r.last_frame_us() / 1_000_000) as u32 + 1);
            r.apply_expiration(retention_s, now)?;
        }
        Some(DeletionAction::Overwrite { extra_recording_s }) => {
            r.apply_overwrite(extra_recording_s)?;
        }
    }
    for round in &spec.resume {
        r.resume_recording(round)?;
    }
    r.finish()
}

#[cfg(test)]
mod tests;
