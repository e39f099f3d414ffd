#![allow(dead_code)]

use std::path::Path;

use nvrfs::deletion::ImageSnapshot;
use nvrfs::image::{ByteRange, ImageHandle};
use nvrfs::synth::{synthesize, DeletionAction, GroundTruth, RecordingRound, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2025-11-26 21:48:19
pub const T0: u32 = 0x692775A3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Plain,
    Formatting,
    FormattingResumed,
    Expiration,
    Overwrite,
}

pub const DELETIONS: [Scenario; 4] =
    [Scenario::Formatting, Scenario::FormattingResumed, Scenario::Expiration, Scenario::Overwrite];

pub fn round(start: u32, duration_s: u32, interval_ms: u32) -> RecordingRound {
    RecordingRound {
        start_time: start,
        duration_s,
        frame_interval_ms: interval_ms,
        keyint: 8,
        width: 1920,
        height: 1080,
        main: true,
        sub: false,
    }
}

/// A small recording with the given deletion applied, varied by `seed`.
pub fn scenario(kind: Scenario, seed: u64) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = rng.gen_range(1..=4u8);
    let interval = rng.gen_range(2..=8) * 125;
    let sub = rng.gen_bool(0.5);
    let mk = |start, dur| RecordingRound { sub, ..round(start, dur, interval) };
    let base = SynthSpec {
        video_region_len: Some(0x80_0000),
        num_channels: channels,
        segment_s: 30,
        block_size: Some(0x1000),
        seed,
        ..Default::default()
    };
    match kind {
        Scenario::Plain => SynthSpec { rounds: vec![mk(T0, 240)], ..base },
        Scenario::Formatting => SynthSpec { rounds: vec![mk(T0, 240)], deletion: Some(DeletionAction::Formatting), ..base },
        Scenario::FormattingResumed => SynthSpec {
            rounds: vec![mk(T0, 240)],
            deletion: Some(DeletionAction::Formatting),
            resume: vec![mk(T0 + 3600, 60)],
            ..base
        },
        Scenario::Expiration => SynthSpec {
            rounds: vec![mk(T0, 180), mk(T0 + 7200, 180)],
            deletion: Some(DeletionAction::Expiration { retention_s: 3600 }),
            ..base
        },
        Scenario::Overwrite => SynthSpec {
            video_region_len: Some(0x10_0000),
            block_size: Some(0x4_0000),
            segment_s: 20,
            rounds: vec![mk(T0, 6 * 3600)],
            deletion: Some(DeletionAction::Overwrite { extra_recording_s: 20 }),
            ..base
        },
    }
}

pub fn build(spec: &SynthSpec, dir: &Path, name: &str) -> (ImageHandle, GroundTruth) {
    synthesize(spec, dir.join(name)).unwrap_or_else(|e| panic!("synthesize {name}: {e}"))
}

pub fn snapshot(h: &ImageHandle) -> ImageSnapshot {
    ImageSnapshot::load(h, None).unwrap()
}

/// Absolute ranges of deleted frames still intact, per the synthesizer.
pub fn residual_ranges(t: &GroundTruth) -> Vec<ByteRange> {
    t.residual_runs().iter().map(|r| r.range).collect()
}
