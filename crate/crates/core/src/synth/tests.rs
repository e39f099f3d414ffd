use super::*;
use crate::framestream::{scan_frames, segment_streams};
use crate::gpt::parse_gpt;
use crate::metadata::parse_partition1;

fn round(start: u32, duration_s: u32, interval_ms: u32) -> RecordingRound {
    RecordingRound {
        start_time: start,
        duration_s,
        frame_interval_ms: interval_ms,
        keyint: 10,
        width: 1920,
        height: 1080,
        main: true,
        sub: false,
    }
}

const T0: u32 = 0x692775A3;

fn small_spec() -> SynthSpec {
    SynthSpec {
        video_region_len: Some(0x40_0000),
        num_channels: 3,
        rounds: vec![round(T0, 180, 500)],
        seed: 11,
        ..Default::default()
    }
}

fn video_bytes(h: &ImageHandle, t: &GroundTruth) -> Vec<u8> {
    h.read_at(t.video_region).unwrap()
}

#[test]
fn zero_rounds_is_formatted_empty() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { rounds: vec![], ..small_spec() };
    let (h, t) = synthesize(&spec, dir.path().join("a.img")).unwrap();
    let layout = parse_gpt(&h).unwrap();
    assert!(layout.health_warnings(spec.shrink_factor).is_empty(), "{:?}", layout.health_warnings(spec.shrink_factor));
    let meta = parse_partition1(&h, layout.partition1_range.unwrap(), &spec.profile).unwrap();
    assert_eq!(meta.header.available_memory, meta.header.total_memory);
    assert!(meta.header.block_groups.is_empty());
    assert!(meta.header.is_reset());
    assert!(t.frames.is_empty());
    assert_eq!(layout.machine.model_name, DEFAULT_MODEL);
}

#[test]
fn deterministic_for_equal_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let (a, _) = synthesize(&spec, dir.path().join("a.img")).unwrap();
    let (b, _) = synthesize(&spec, dir.path().join("b.img")).unwrap();
    let all = ByteRange::new(0, a.size_bytes());
    assert_eq!(a.read_at(all).unwrap(), b.read_at(all).unwrap());
    let (c, _) = synthesize(&SynthSpec { seed: 12, ..spec }, dir.path().join("c.img")).unwrap();
    assert_ne!(a.read_at(all).unwrap(), c.read_at(all).unwrap());
}

#[test]
fn recording_parses_coherently() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let (h, t) = synthesize(&spec, dir.path().join("a.img")).unwrap();
    let layout = parse_gpt(&h).unwrap();
    let meta = parse_partition1(&h, layout.partition1_range.unwrap(), &spec.profile).unwrap();
    assert!(meta.warnings().is_empty(), "{:?}", meta.warnings());
    assert_eq!(meta.channels.len(), t.live_segments().count());
    for (e, s) in meta.channels.iter().zip(t.live_segments()) {
        assert_eq!(meta.abs(e.frame_start_offset.resolved), s.rounded.offset);
        assert_eq!(e.frame_length.resolved, s.rounded.length);
        assert_eq!(e.channel, s.channel);
    }
    let used: u64 = t.live_segments().map(|s| s.rounded.length).sum();
    assert_eq!(
        (meta.header.total_memory.raw - meta.header.available_memory.raw) as u64 * SCALE,
        used
    );
    // 180 s from 21:48:19 touches hour 21 only
    assert!(meta.recorded_channels().all(|r| r.anchor_count == 1 && r.anchors[0].hour_aligned()));
    assert_eq!(meta.recorded_channels().count(), 3);

    let scan = scan_frames(&h, meta.video_region()).unwrap();
    let found: Vec<u64> = scan.frames.iter().map(|f| f.abs_offset).collect();
    let truth: Vec<u64> = t.intact_frames().map(|f| f.abs_offset).collect();
    assert_eq!(found, truth);
    let segs = segment_streams(&scan.frames, &h).unwrap();
    assert_eq!(segs.len(), t.segments.len());
    for (a, b) in segs.iter().zip(&t.segments) {
        assert_eq!(a.range(), b.range);
        assert_eq!(a.rounded_len(), b.rounded.length);
    }
}

#[test]
fn sub_stream_window_straddles_the_hour() {
    let dir = tempfile::tempdir().unwrap();
    // 21:48:19 + 20 s windows: one runs 21:59:59 .. 22:00:19
    let spec = SynthSpec {
        segment_s: 20,
        rounds: vec![RecordingRound { sub: true, ..round(T0, 1200, 1000) }],
        ..small_spec()
    };
    let (h, _) = synthesize(&spec, dir.path().join("a.img")).unwrap();
    let layout = parse_gpt(&h).unwrap();
    let meta = parse_partition1(&h, layout.partition1_range.unwrap(), &spec.profile).unwrap();
    let hours: Vec<u32> = meta.record_state[0].anchors.iter().map(|a| a.hour_timestamp).collect();
    assert_eq!(hours, vec![T0 - T0 % 3600, T0 - T0 % 3600 + 3600]);
}

#[test]
fn three_hundred_blocks_make_two_groups() {
    let dir = tempfile::tempdir().unwrap();
    // one window per block: 300 windows of 10 s
    let spec = SynthSpec {
        video_region_len: Some(0x80_0000),
        num_channels: 1,
        block_size: Some(SCALE),
        segment_s: 10,
        rounds: vec![round(T0, 3000, 5000)],
        ..Default::default()
    };
    let (h, _) = synthesize(&spec, dir.path().join("a.img")).unwrap();
    let layout = parse_gpt(&h).unwrap();
    let meta = parse_partition1(&h, layout.partition1_range.unwrap(), &spec.profile).unwrap();
    let mut per_group = BTreeMap::new();
    for b in &meta.blocks {
        *per_group.entry(b.group_number).or_insert(0) += 1;
    }
    assert_eq!(per_group, BTreeMap::from([(0u8, 256), (1u8, 44)]));
    assert_eq!(meta.header.block_groups.len(), 2);
    assert_eq!(meta.header.block_groups[0].start_time, T0);
    assert_eq!(meta.blocks[255].block_number, 255);
    assert_eq!(meta.blocks[256].block_number, 0);
}

#[test]
fn formatting_conserves_video_and_resets_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let mut r = Recorder::create(&spec, dir.path().join("a.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    let guid_before = r.layout().disk_guid();
    let before = video_bytes(r.handle(), r.truth());
    r.apply_formatting().unwrap();
    assert_eq!(video_bytes(r.handle(), r.truth()), before);
    assert_ne!(r.layout().disk_guid(), guid_before);
    let (h, t) = r.finish().unwrap();
    let layout = parse_gpt(&h).unwrap();
    assert!(layout.primary.as_ref().unwrap().is_valid());
    let meta = parse_partition1(&h, layout.partition1_range.unwrap(), &spec.profile).unwrap();
    assert!(meta.header.is_reset());
    assert!(meta.blocks.is_empty() && meta.channels.is_empty());
    assert_eq!(meta.recorded_channels().count(), 0);
    assert_eq!(t.residual_runs().len(), t.segments.len());
    assert_eq!(t.live_segments().count(), 0);
}

#[test]
fn expiration_accounting_and_groups() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { block_size: Some(SCALE), segment_s: 30, ..small_spec() };
    let mut r = Recorder::create(&spec, dir.path().join("a.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    let before = video_bytes(r.handle(), r.truth());
    let avail_before = r.truth().steps.last().unwrap().available_units;
    let now = T0 + 180;
    let delta = r.apply_expiration(100, now).unwrap();
    assert_eq!(video_bytes(r.handle(), r.truth()), before);
    let step = r.truth().steps.last().unwrap().clone();
    assert_eq!((step.available_units - avail_before) as u64 * SCALE, delta.freed_bytes);
    let deleted: u64 = r.truth().deleted_segments().map(|s| s.rounded.length).sum();
    assert_eq!(deleted, delta.freed_bytes);
    // windows start at T0, T0+30, ...; the cutoff T0+80 keeps the window from T0+60
    assert_eq!(delta.blocks_removed, 2);
    assert_eq!(step.block_groups, vec![(0, T0 + 60)]);
    assert!(r.truth().deleted_segments().all(|s| s.last_ts / 1_000_000 < (T0 + 60) as u64));
    assert!(matches!(r.apply_expiration(1, T0 + 61), Err(SynthError::NothingExpired { .. })));
}

#[test]
fn expiration_drops_anchor_hours_and_shifts() {
    let dir = tempfile::tempdir().unwrap();
    let h21 = T0 - T0 % 3600;
    let spec = SynthSpec {
        num_channels: 2,
        segment_s: 600,
        block_size: Some(SCALE),
        rounds: vec![round(h21 + 60, 3 * 3600 - 60, 60_000)],
        ..small_spec()
    };
    let mut r = Recorder::create(&spec, dir.path().join("a.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    assert_eq!(r.truth().steps.last().unwrap().anchors, vec![(1, 3), (2, 3)]);
    r.apply_expiration(3600, h21 + 8400).unwrap();
    let (h, _) = r.finish().unwrap();
    let layout = parse_gpt(&h).unwrap();
    let meta = parse_partition1(&h, layout.partition1_range.unwrap(), &spec.profile).unwrap();
    for t in meta.recorded_channels() {
        let hours: Vec<u32> = t.anchors.iter().map(|a| a.hour_timestamp).collect();
        assert_eq!(hours, vec![h21 + 3600, h21 + 7200]);
    }
}

#[test]
fn overwrite_requires_full_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let mut r = Recorder::create(&spec, dir.path().join("a.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    assert!(matches!(r.apply_overwrite(60), Err(SynthError::DiskNotFull)));
}

#[test]
fn overwrite_wraps_and_tracks_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        video_region_len: Some(0x8_0000),
        num_channels: 2,
        segment_s: 20,
        block_size: Some(0x4000),
        rounds: vec![round(T0, 3600, 500)],
        ..Default::default()
    };
    let mut r = Recorder::create(&spec, dir.path().join("a.img")).unwrap();
    let out = r.record_round(&spec.rounds[0]).unwrap();
    assert!(out.disk_full);
    let avail_full = r.truth().steps.last().unwrap().available_units;
    r.apply_overwrite(120).unwrap();
    let step = r.truth().steps.last().unwrap().clone();
    assert!(step.available_units.abs_diff(avail_full) < step.total_units / 4);
    let t = r.truth().clone();
    assert!(t.frames.iter().any(|f| f.destroyed));
    let (h, _) = r.finish().unwrap();
    let scan = scan_frames(&h, t.video_region).unwrap();
    let found: Vec<u64> = scan.frames.iter().map(|f| f.abs_offset).collect();
    let mut expect: Vec<u64> = t.intact_frames().map(|f| f.abs_offset).collect();
    expect.sort();
    assert_eq!(found, expect);
    let oldest = step.block_groups.iter().map(|g| g.1).min().unwrap();
    for run in t.residual_runs() {
        assert!(run.last_ts / 1_000_000 < oldest as u64);
    }
}

#[test]
fn resume_after_formatting_starts_at_video_start() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let mut r = Recorder::create(&spec, dir.path().join("a.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    assert!(matches!(r.resume_recording(&round(T0 + 1000, 10, 500)), Err(SynthError::InvalidState { .. })));
    r.apply_formatting().unwrap();
    r.resume_recording(&round(T0 + 1000, 10, 500)).unwrap();
    let t = r.truth();
    let first_new = t.live_segments().next().unwrap();
    assert_eq!(first_new.rounded.offset, t.video_region.offset);
    assert!(t.frames.iter().any(|f| f.destroyed));
    assert!(!t.residual_runs().is_empty());
}

#[test]
fn resume_after_expiration_appends() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { block_size: Some(SCALE), segment_s: 30, ..small_spec() };
    let mut r = Recorder::create(&spec, dir.path().join("a.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    let end = r.truth().steps.last().unwrap().next_write;
    r.apply_expiration(100, T0 + 180).unwrap();
    r.resume_recording(&round(T0 + 1000, 10, 500)).unwrap();
    let t = r.truth();
    let newest = t.live_segments().last().unwrap();
    assert!(newest.rounded.offset >= t.partition1.offset + end);
    assert!(t.frames.iter().all(|f| !f.destroyed));
}

#[test]
fn rounds_must_move_forward() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { rounds: vec![round(T0, 10, 500), round(T0 + 5, 10, 500)], ..small_spec() };
    assert!(matches!(synthesize(&spec, dir.path().join("a.img")), Err(SynthError::InvalidSpec(_))));
}

#[test]
fn oversize_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { max_disk_bytes: 1 << 20, ..small_spec() };
    assert!(matches!(synthesize(&spec, dir.path().join("a.img")), Err(SynthError::SpecTooLarge(_))));
}

#[test]
fn reference_stream_wraps_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let es = reference_stream(12, 5);
    let spec = SynthSpec {
        num_channels: 1,
        segment_s: 3600,
        source_es: Some(es.clone()),
        rounds: vec![RecordingRound {
            width: REFERENCE_WIDTH,
            height: REFERENCE_HEIGHT,
            ..round(T0, 12, 1000)
        }],
        ..small_spec()
    };
    let (h, t) = synthesize(&spec, dir.path().join("a.img")).unwrap();
    assert_eq!(t.segments.len(), 1);
    let payloads: Vec<u8> = t.frames.iter().flat_map(|f| {
        h.read_at(ByteRange::new(f.abs_offset + HEADER_LEN as u64, f.len - HEADER_LEN as u64)).unwrap()
    }).collect();
    assert_eq!(payloads, es);
    let idr = t.frames.iter().filter(|f| f.header.frame_type == FrameType::Idr).count();
    assert_eq!(idr, 3);
}

#[test]
fn sidecar_lists_every_frame() {
    let dir = tempfile::tempdir().unwrap();
    let (_, t) = synthesize(&small_spec(), dir.path().join("a.img")).unwrap();
    let tsv = t.to_tsv();
    let frames = tsv.lines().filter(|l| l.starts_with("frame\t")).count();
    assert_eq!(frames, t.frames.len());
    assert!(tsv.lines().filter(|l| !l.starts_with('#')).all(|l| l.split('\t').count() == 6));
}
