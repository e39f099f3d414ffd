mod common;

use common::*;
use nvrfs::bindiff::*;
use nvrfs::gpt::parse_gpt;
use nvrfs::image::ImageHandle;
use nvrfs::metadata::{LayoutProfile, P1Region};
use nvrfs::synth::{Recorder, SynthSpec};
use proptest::prelude::*;

fn naive(a: &[u8], b: &[u8]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for i in 0..a.len() {
        if a[i] != b[i] {
            match out.last_mut() {
                Some(l) if l.0 + l.1 == i as u64 => l.1 += 1,
                _ => out.push((i as u64, 1)),
            }
        }
    }
    out
}

fn spans(r: &DiffReport) -> Vec<(u64, u64)> {
    r.ranges.iter().map(|x| (x.abs_offset, x.length)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_byte_loop(
        sectors in 1u64..64,
        muts in prop::collection::vec((0u64..32768, 1u64..600, any::<u8>()), 0..12),
    ) {
        let len = sectors * 512;
        let dir = tempfile::tempdir().unwrap();
        let a: Vec<u8> = (0..len).map(|i| (i * 7 % 251) as u8).collect();
        let mut b = a.clone();
        for (off, n, v) in muts {
            let off = off % len;
            for x in &mut b[off as usize..(off + n).min(len) as usize] {
                *x ^= v | 1;
            }
        }
        let mut ha = ImageHandle::create_sparse(dir.path().join("a"), len).unwrap();
        let mut hb = ImageHandle::create_sparse(dir.path().join("b"), len).unwrap();
        ha.write_at(0, &a).unwrap();
        hb.write_at(0, &b).unwrap();
        let expect = naive(&a, &b);
        for block in [512, 4096, 1 << 20] {
            let opts = DiffOptions { block_size: block, ..Default::default() };
            let ab = diff_images(&ha, &hb, &opts, None).unwrap();
            let ba = diff_images(&hb, &ha, &opts, None).unwrap();
            prop_assert_eq!(spans(&ab), expect.clone());
            prop_assert_eq!(spans(&ba), expect.clone());
            prop_assert_eq!(ab.total_differing_bytes, expect.iter().map(|r| r.1).sum::<u64>());
            for (x, y) in ab.ranges.iter().zip(&ba.ranges) {
                prop_assert_eq!(&x.sample_a, &y.sample_b);
            }
        }
    }
}

#[test]
fn recording_touches_metadata_and_video_only() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { rounds: vec![round(T0, 120, 500)], num_channels: 2, ..scenario(Scenario::Plain, 0) };
    let mut r = Recorder::create(&spec, dir.path().join("rec.img")).unwrap();
    std::fs::copy(r.handle().path(), dir.path().join("formatted.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    let (rec, _) = r.finish().unwrap();
    let formatted = ImageHandle::open(dir.path().join("formatted.img"), false).unwrap();
    let layout = parse_gpt(&rec).unwrap();
    let opts = DiffOptions { profile: Some(LayoutProfile::COMPACT), ..Default::default() };
    let report = diff_images(&formatted, &rec, &opts, Some(&layout)).unwrap();
    let regions = report.by_region();
    for g in [P1Region::Header, P1Region::BlockList, P1Region::ChannelList, P1Region::RecordState, P1Region::VideoData] {
        assert!(regions.contains_key(&g), "{g:?} missing from {regions:?}");
    }
    assert!(!regions.contains_key(&P1Region::FixedValue));
    assert!(report.ranges.iter().all(|x| x.partition == Some(PartitionId::Partition1)));
    let p1 = layout.partition1_range.unwrap();
    assert!(report.ranges.iter().all(|x| x.rel_offset == Some(x.abs_offset - p1.offset)));
}

#[test]
fn formatting_changes_start_sectors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = scenario(Scenario::Formatting, 0);
    let mut r = Recorder::create(&spec, dir.path().join("f.img")).unwrap();
    r.record_round(&spec.rounds[0]).unwrap();
    std::fs::copy(r.handle().path(), dir.path().join("pre.img")).unwrap();
    r.apply_formatting().unwrap();
    let (post, _) = r.finish().unwrap();
    let pre = ImageHandle::open(dir.path().join("pre.img"), false).unwrap();
    let layout = parse_gpt(&pre).unwrap();
    let opts = DiffOptions { profile: Some(LayoutProfile::COMPACT), ..Default::default() };
    let report = diff_images(&pre, &post, &opts, Some(&layout)).unwrap();
    let parts: std::collections::BTreeSet<_> = report.ranges.iter().filter_map(|x| x.partition).collect();
    assert!(parts.contains(&PartitionId::StartSectors));
    assert!(parts.contains(&PartitionId::Unpartitioned));
    let regions = report.by_region();
    assert!(!regions.contains_key(&P1Region::VideoData));
    assert!(!regions.contains_key(&P1Region::FixedValue));
}
