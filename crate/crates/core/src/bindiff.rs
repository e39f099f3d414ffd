//! Block-wise byte comparison of two images.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gpt::GptLayout;
use crate::image::{ByteRange, ImageError, ImageHandle};
use crate::metadata::{LayoutProfile, P1Region};

pub const DEFAULT_BLOCK_SIZE: u64 = 4096;
pub const SAMPLE_LEN: usize = 16;
/// Bytes handled by one worker.
const WORKER_SPAN: u64 = 8 << 20;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("images differ in size: {a} vs {b} bytes")]
    UnequalSize { a: u64, b: u64 },
    #[error("block size must be positive")]
    ZeroBlockSize,
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PartitionId {
    StartSectors,
    Partition1,
    Partition2,
    Unpartitioned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffRange {
    pub abs_offset: u64,
    pub length: u64,
    pub partition: Option<PartitionId>,
    pub rel_offset: Option<u64>,
    /// Partition 1 region, when a layout profile was given.
    pub region: Option<P1Region>,
    pub sample_a: Vec<u8>,
    pub sample_b: Vec<u8>,
}

impl DiffRange {
    pub fn range(&self) -> ByteRange {
        ByteRange::new(self.abs_offset, self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub ranges: Vec<DiffRange>,
    pub total_differing_bytes: u64,
    pub block_size: u64,
    pub images: (PathBuf, PathBuf),
    /// Sizes, when they differ and only the common prefix was compared.
    pub unequal_sizes: Option<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffOptions {
    pub block_size: u64,
    /// Merge ranges separated by fewer than this many equal bytes.
    pub coalesce_gap: u64,
    /// Compare the common prefix of images of different size.
    pub allow_unequal: bool,
    pub profile: Option<LayoutProfile>,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions { block_size: DEFAULT_BLOCK_SIZE, coalesce_gap: 0, allow_unequal: false, profile: None }
    }
}

/// Appends `[start, end)` to `runs`, extending the last run when adjacent.
fn push_run(runs: &mut Vec<(u64, u64)>, start: u64, end: u64) {
    match runs.last_mut() {
        Some(last) if last.1 == start => last.1 = end,
        _ => runs.push((start, end)),
    }
}

/// Differing runs of two equally long buffers, offset by `base`.
fn byte_runs(a: &[u8], b: &[u8], base: u64, runs: &mut Vec<(u64, u64)>) {
    let mut i = 0;
    while i < a.len() {
        let Some(d) = a[i..].iter().zip(&b[i..]).position(|(x, y)| x != y) else {
            break;
        };
        let start = i + d;
        let len = a[start..].iter().zip(&b[start..]).position(|(x, y)| x == y).unwrap_or(a.len() - start);
        push_run(runs, base + start as u64, base + (start + len) as u64);
        i = start + len;
    }
}

fn diff_span(a: &ImageHandle, b: &ImageHandle, span: ByteRange, block: u64) -> Result<Vec<(u64, u64)>, ImageError> {
    let mut runs = Vec::new();
    let mut ba = vec![0u8; block.min(span.length) as usize];
    let mut bb = ba.clone();
    let mut pos = span.offset;
    while pos < span.end() {
        let n = block.min(span.end() - pos) as usize;
        a.read_into(pos, &mut ba[..n])?;
        b.read_into(pos, &mut bb[..n])?;
        if ba[..n] != bb[..n] {
            byte_runs(&ba[..n], &bb[..n], pos, &mut runs);
        }
        pos += n as u64;
    }
    Ok(runs)
}

/// Maximal differing runs over `[0, len)`.
fn differing_runs(a: &ImageHandle, b: &ImageHandle, len: u64, block: u64) -> Result<Vec<(u64, u64)>, ImageError> {
    let span = (WORKER_SPAN / block).max(1) * block;
    let spans: Vec<ByteRange> =
        (0..len).step_by(span as usize).map(|s| ByteRange::new(s, span.min(len - s))).collect();
    let parts: Vec<Vec<(u64, u64)>> =
        spans.into_par_iter().map(|s| diff_span(a, b, s, block)).collect::<Result<_, _>>()?;
    let mut runs = Vec::new();
    for (s, e) in parts.into_iter().flatten() {
        push_run(&mut runs, s, e);
    }
    Ok(runs)
}

fn coalesce(runs: Vec<(u64, u64)>, gap: u64) -> Vec<(u64, u64)> {
    if gap == 0 {
        return runs;
    }
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(runs.len());
    for (s, e) in runs {
        match out.last_mut() {
            Some(last) if s - last.1 < gap => last.1 = e,
            _ => out.push((s, e)),
        }
    }
    out
}

fn annotate(abs: u64, layout: &GptLayout, profile: Option<&LayoutProfile>) -> (PartitionId, Option<u64>, Option<P1Region>) {
    if let Some(p1) = layout.partition1_range.filter(|p| p.contains(abs)) {
        let rel = abs - p1.offset;
        return (PartitionId::Partition1, Some(rel), profile.map(|p| p.classify(rel)));
    }
    if let Some(p2) = layout.partition2_range.filter(|p| p.contains(abs)) {
        return (PartitionId::Partition2, Some(abs - p2.offset), None);
    }
    let first = layout.partition1_range.map(|p| p.offset).unwrap_or(u64::MAX);
    if abs < first {
        (PartitionId::StartSectors, Some(abs), None)
    } else {
        let end = layout.partition2_range.or(layout.partition1_range).map(|p| p.end()).unwrap_or(0);
        (PartitionId::Unpartitioned, Some(abs - end), None)
    }
}

pub fn diff_images(
    a: &ImageHandle,
    b: &ImageHandle,
    opts: &DiffOptions,
    layout: Option<&GptLayout>,
) -> Result<DiffReport, DiffError> {
    if opts.block_size == 0 {
        return Err(DiffError::ZeroBlockSize);
    }
    let (sa, sb) = (a.size_bytes(), b.size_bytes());
    if sa != sb && !opts.allow_unequal {
        return Err(DiffError::UnequalSize { a: sa, b: sb });
    }
    let len = sa.min(sb);
    let runs = differing_runs(a, b, len, opts.block_size)?;
    let total: u64 = runs.iter().map(|(s, e)| e - s).sum();
    let mut ranges = Vec::with_capacity(runs.len());
    for (s, e) in coalesce(runs, opts.coalesce_gap) {
        let n = (SAMPLE_LEN as u64).min(e - s);
        let (partition, rel_offset, region) = match layout {
            Some(l) => {
                let (p, r, g) = annotate(s, l, opts.profile.as_ref());
                (Some(p), r, g)
            }
            None => (None, None, None),
        };
        ranges.push(DiffRange {
            abs_offset: s,
            length: e - s,
            partition,
            rel_offset,
            region,
            sample_a: a.read_at(ByteRange::new(s, n))?,
            sample_b: b.read_at(ByteRange::new(s, n))?,
        });
    }
    Ok(DiffReport {
        ranges,
        total_differing_bytes: total,
        block_size: opts.block_size,
        images: (a.path().to_path_buf(), b.path().to_path_buf()),
        unequal_sizes: (sa != sb).then_some((sa, sb)),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

impl DiffReport {
    /// Range count and byte total per partition 1 region.
    pub fn by_region(&self) -> BTreeMap<P1Region, (usize, u64)> {
        let mut m = BTreeMap::new();
        for r in &self.ranges {
            if let Some(g) = r.region {
                let e = m.entry(g).or_insert((0, 0));
                e.0 += 1;
                e.1 += r.length;
            }
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "a: {}", self.images.0.display());
        let _ = writeln!(out, "b: {}", self.images.1.display());
        if let Some((x, y)) = self.unequal_sizes {
            let _ = writeln!(out, "sizes differ ({x:#x} vs {y:#x}); common prefix compared");
        }
        let _ = writeln!(
            out,
            "{} range(s), {:#x} differing bytes, block size {:#x}",
            self.ranges.len(),
            self.total_differing_bytes,
            self.block_size
        );
        for r in &self.ranges {
            let place = match (r.partition, r.rel_offset) {
                (Some(p), Some(rel)) => match r.region {
                    Some(g) => format!(" {p:?}+{rel:#x} {g:?}"),
                    None => format!(" {p:?}+{rel:#x}"),
                },
                _ => String::new(),
            };
            let _ = writeln!(out, "{:#014x} len {:#x}{place}", r.abs_offset, r.length);
            let _ = writeln!(out, "  a: {}", hex(&r.sample_a));
            let _ = writeln!(out, "  b: {}", hex(&r.sample_b));
        }
        out
    }
}
