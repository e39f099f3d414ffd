use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nvrfs::bindiff::{diff_images, DiffOptions, DiffReport};
use nvrfs::deletion::{
    classify_segments, deleted_from_segments, scan_segments, DeletedStreamSet, DeletionVerdict, ImageSnapshot,
};
use nvrfs::framestream::{attach_channel_hints, carve, carve_file_name, ExportMode, StreamSegment};
use nvrfs::gpt::parse_gpt;
use nvrfs::image::ImageHandle;
use nvrfs::metadata::{detect_profile, parse_partition1, LayoutProfile};
use nvrfs::synth::{parse_spec, synthesize, DiskGeometry, SegmentState};
use serde::Serialize;

use crate::inspect::{gpt_info, header_info, render_text, InspectFindings};
use crate::report::{display, Fingerprint, Place, Report, Stamp};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_DELETION: u8 = 3;
pub const EXIT_NOTHING_FOUND: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    /// Prefixes the message with the error variant name.
    fn parse(e: impl fmt::Debug + fmt::Display) -> Self {
        let dbg = format!("{e:?}");
        let kind: String = dbg.chars().take_while(|c| c.is_alphanumeric()).collect();
        Failure::new(EXIT_PARSE, format!("{kind}: {e}"))
    }

    fn io(what: &str, e: impl fmt::Display) -> Self {
        Failure::new(EXIT_FAILURE, format!("{what}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub struct Output {
    pub text: String,
    pub json: String,
    pub code: u8,
}

fn output<T: Serialize>(report: &Report<T>, text: String, code: u8) -> Output {
    let mut text = text;
    for w in &report.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    Output { text, json: report.to_json(), code }
}

pub fn open(path: &Path) -> Result<ImageHandle, Failure> {
    ImageHandle::open(path, false).map_err(|e| Failure::io(&display(path), e))
}

/// `auto`, `full` or `compact`.
pub fn profile_arg(name: &str) -> Result<Option<LayoutProfile>, Failure> {
    match name {
        "auto" => Ok(None),
        n => LayoutProfile::by_name(n)
            .map(Some)
            .ok_or_else(|| Failure::new(EXIT_FAILURE, format!("unknown layout profile {n:?}"))),
    }
}

pub fn load(handle: &ImageHandle, profile: Option<LayoutProfile>) -> Result<ImageSnapshot, Failure> {
    let layout = parse_gpt(handle).map_err(Failure::parse)?;
    let p1 = layout
        .partition1_range
        .ok_or_else(|| Failure::new(EXIT_PARSE, "NoPartition1: partition table lists no partition 1"))?;
    let profile = match profile {
        Some(p) => p,
        None => detect_profile(handle, p1).map_err(Failure::parse)?,
    };
    let meta = parse_partition1(handle, p1, &profile).map_err(Failure::parse)?;
    Ok(ImageSnapshot { layout, meta })
}

fn snapshot_warnings(snap: &ImageSnapshot, shrink: Option<u64>) -> Vec<String> {
    let mut w = snap.meta.warnings();
    if let Some(s) = shrink {
        w.extend(snap.layout.health_warnings(s));
    }
    w
}

pub fn inspect(image: &Path, profile: Option<LayoutProfile>) -> Result<Output, Failure> {
    let h = open(image)?;
    let snap = load(&h, profile)?;
    let findings = InspectFindings { gpt: gpt_info(&snap.layout), partition1: header_info(&snap.meta) };
    let text = render_text(&findings);
    let mut report = Report::new("inspect", vec![Fingerprint::of(&h)], findings);
    report.warnings = snapshot_warnings(&snap, None);
    Ok(output(&report, text, EXIT_OK))
}

fn segments(h: &ImageHandle, snap: &ImageSnapshot) -> Result<Vec<StreamSegment>, Failure> {
    let mut segs = scan_segments(h, &snap.meta).map_err(|e| Failure::io("scanning video data", e))?;
    attach_channel_hints(&mut segs, snap.meta.partition.offset, &snap.meta.channels);
    Ok(segs)
}

#[derive(Debug, Serialize)]
pub struct StreamInfo {
    pub place: Place,
    pub length: String,
    pub frames: usize,
    pub channel: Option<u8>,
    pub first_ts: Stamp,
    pub last_ts: Stamp,
}

impl StreamInfo {
    fn of(s: &StreamSegment, base: u64) -> Self {
        StreamInfo {
            place: Place::new(s.start_offset, Some(base)),
            length: format!("{:#x}", s.range().length),
            frames: s.frames.len(),
            channel: s.channel_hint,
            first_ts: Stamp::micros(s.first_ts),
            last_ts: Stamp::micros(s.last_ts),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ClassifyFindings {
    pub verdict: DeletionVerdict,
    pub oldest_live: Option<Stamp>,
    pub cutoff_source: nvrfs::deletion::CutoffSource,
    pub segments_scanned: usize,
    pub deleted_streams: Vec<StreamInfo>,
}

pub fn classify(image: &Path, profile: Option<LayoutProfile>) -> Result<Output, Failure> {
    let h = open(image)?;
    let snap = load(&h, profile)?;
    let segs = segments(&h, &snap)?;
    let verdict = classify_segments(&snap.layout, &snap.meta, &segs);
    let n = segs.len();
    let set: DeletedStreamSet = deleted_from_segments(&snap.meta, segs);
    let base = snap.meta.partition.offset;
    let findings = ClassifyFindings {
        oldest_live: set.oldest_live_ts.map(Stamp::secs),
        cutoff_source: set.cutoff_source,
        segments_scanned: n,
        deleted_streams: set.streams.iter().map(|s| StreamInfo::of(s, base)).collect(),
        verdict,
    };

    let v = &findings.verdict;
    let mut text = String::new();
    let _ = writeln!(text, "mechanism   {:?} ({:?})", v.mechanism, v.confidence);
    if let Some(c) = v.likely_cause {
        let _ = writeln!(text, "likely      {c:?} (heuristic)");
    }
    if let Some(t) = &findings.oldest_live {
        let _ = writeln!(text, "oldest live {} ({})", t.text, t.raw);
    }
    let _ = writeln!(text, "segments    {n} scanned, {} deleted", findings.deleted_streams.len());
    for e in &v.evidence {
        let _ = writeln!(text, "evidence    {:?} [{:?}]: {}", e.kind, e.confidence, e.detail);
        for r in e.locations.iter().take(8) {
            let _ = writeln!(text, "              {:#x} len {:#x}", r.offset, r.length);
        }
        if e.locations.len() > 8 {
            let _ = writeln!(text, "              ... {} more", e.locations.len() - 8);
        }
    }
    let code = if v.mechanism.is_deletion() { EXIT_DELETION } else { EXIT_OK };
    let mut report = Report::new("classify", vec![Fingerprint::of(&h)], findings);
    report.warnings = snapshot_warnings(&snap, None);
    report.warnings.extend(set.warnings);
    Ok(output(&report, text, code))
}

pub struct CarveArgs {
    pub deleted_only: bool,
    pub mode: ExportMode,
    pub out: PathBuf,
    pub from_ts: Option<u32>,
    pub to_ts: Option<u32>,
    pub ext: String,
}

#[derive(Debug, Serialize)]
pub struct CarvedFile {
    pub file: String,
    pub deleted: bool,
    pub stream: StreamInfo,
    pub bytes_written: u64,
}

#[derive(Debug, Serialize)]
pub struct CarveFindings {
    pub mode: ExportMode,
    pub deleted_only: bool,
    pub out_dir: String,
    pub files: Vec<CarvedFile>,
}

pub fn carve_cmd(image: &Path, profile: Option<LayoutProfile>, args: &CarveArgs) -> Result<Output, Failure> {
    let h = open(image)?;
    let snap = load(&h, profile)?;
    let segs = segments(&h, &snap)?;
    let set = deleted_from_segments(&snap.meta, segs.clone());
    let deleted: BTreeSet<u64> = set.streams.iter().map(|s| s.start_offset).collect();
    let from = args.from_ts.map(|t| t as u64 * 1_000_000).unwrap_or(0);
    let to = args.to_ts.map(|t| (t as u64 + 1) * 1_000_000).unwrap_or(u64::MAX);
    let chosen: Vec<&StreamSegment> = segs
        .iter()
        .filter(|s| !args.deleted_only || deleted.contains(&s.start_offset))
        .filter(|s| s.last_ts >= from && s.first_ts < to)
        .collect();

    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&display(&args.out), e))?;
    let base = snap.meta.partition.offset;
    let mut files = Vec::new();
    for s in &chosen {
        let path = args.out.join(carve_file_name(s, &args.ext));
        let c = carve(&h, s, args.mode, &path).map_err(|e| Failure::io("carving", e))?;
        files.push(CarvedFile {
            file: display(&path),
            deleted: deleted.contains(&s.start_offset),
            stream: StreamInfo::of(s, base),
            bytes_written: c.bytes_written,
        });
    }

    let mut text = String::new();
    for f in &files {
        let _ = writeln!(
            text,
            "{}  {:>8} bytes  {} frames  {}{}",
            f.file,
            f.bytes_written,
            f.stream.frames,
            f.stream.first_ts.text,
            if f.deleted { "  deleted" } else { "" }
        );
    }
    let _ = writeln!(text, "{} stream(s) carved to {}", files.len(), display(&args.out));
    let code = if args.deleted_only && files.is_empty() { EXIT_NOTHING_FOUND } else { EXIT_OK };
    let findings =
        CarveFindings { mode: args.mode, deleted_only: args.deleted_only, out_dir: display(&args.out), files };
    let mut report = Report::new("carve", vec![Fingerprint::of(&h)], findings);
    report.warnings = set.warnings;
    Ok(output(&report, text, code))
}

pub fn diff(a: &Path, b: &Path, opts: DiffOptions, use_layout: bool) -> Result<Output, Failure> {
    let (ha, hb) = (open(a)?, open(b)?);
    let mut opts = opts;
    let mut warnings = Vec::new();
    let layout = if use_layout {
        match parse_gpt(&ha) {
            Ok(l) => {
                if opts.profile.is_none() {
                    opts.profile = l.partition1_range.and_then(|p1| detect_profile(&ha, p1).ok());
                }
                Some(l)
            }
            Err(e) => {
                warnings.push(format!("no layout annotation: {e}"));
                None
            }
        }
    } else {
        None
    };
    let report: DiffReport = diff_images(&ha, &hb, &opts, layout.as_ref()).map_err(|e| match e {
        nvrfs::bindiff::DiffError::UnequalSize { .. } => {
            Failure::new(EXIT_FAILURE, format!("{e}; pass --allow-unequal to compare the common prefix"))
        }
        e => Failure::io("diff", e),
    })?;
    let text = report.to_text();
    let mut r = Report::new("diff", vec![Fingerprint::of(&ha), Fingerprint::of(&hb)], report);
    r.warnings = warnings;
    Ok(output(&r, text, EXIT_OK))
}

#[derive(Debug, Serialize)]
pub struct SynthFindings {
    pub spec: String,
    pub image: String,
    pub sidecar: String,
    pub geometry: DiskGeometry,
    pub frames: usize,
    pub frames_destroyed: usize,
    pub segments_live: usize,
    pub segments_deleted: usize,
    pub residual_runs: usize,
    pub steps: Vec<String>,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".truth.tsv");
    PathBuf::from(s)
}

pub fn synth(spec_path: &Path, out: &Path) -> Result<Output, Failure> {
    let text = fs::read_to_string(spec_path).map_err(|e| Failure::io(&display(spec_path), e))?;
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let spec = parse_spec(&text, base).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", display(spec_path))))?;
    let geometry = spec.geometry().map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let (h, truth) = synthesize(&spec, out).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let sidecar = sidecar_path(out);
    fs::write(&sidecar, truth.to_tsv()).map_err(|e| Failure::io(&display(&sidecar), e))?;

    let count = |st| truth.segments.iter().filter(|s| s.state == st).count();
    let findings = SynthFindings {
        spec: display(spec_path),
        image: display(out),
        sidecar: display(&sidecar),
        geometry,
        frames: truth.frames.len(),
        frames_destroyed: truth.frames.iter().filter(|f| f.destroyed).count(),
        segments_live: count(SegmentState::Live),
        segments_deleted: count(SegmentState::Deleted),
        residual_runs: truth.residual_runs().len(),
        steps: truth.steps.iter().map(|s| s.step.clone()).collect(),
    };
    let mut t = String::new();
    let _ = writeln!(t, "image     {} ({:#x} bytes)", findings.image, geometry.disk_size);
    let _ = writeln!(t, "sidecar   {}", findings.sidecar);
    let _ = writeln!(t, "video     {:#x} bytes, block size {:#x}", geometry.video_region_len, geometry.block_size);
    let _ = writeln!(t, "frames    {} ({} destroyed)", findings.frames, findings.frames_destroyed);
    let _ = writeln!(
        t,
        "segments  {} live, {} deleted, {} residual run(s)",
        findings.segments_live, findings.segments_deleted, findings.residual_runs
    );
    let _ = writeln!(t, "steps     {}", findings.steps.join(", "));
    let report = Report::new("synth", vec![Fingerprint::of(&h)], findings);
    Ok(output(&report, t, EXIT_OK))
}
