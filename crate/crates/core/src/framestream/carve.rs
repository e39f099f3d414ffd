//! Export of stream segments to files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::StreamSegment;
use crate::image::{ByteRange, ImageError, ImageHandle};
use crate::metadata::timestamp::compact_micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ExportMode {
    /// Verbatim bytes, custom headers included.
    RawWithCustomHeaders,
    /// NAL payloads only.
    AnnexB,
}

#[derive(Debug, Error)]
pub enum CarveError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CarvedStream {
    pub source: ByteRange,
    pub channel: Option<u8>,
    pub first_ts: u64,
    pub last_ts: u64,
    pub frames: usize,
    pub export_mode: ExportMode,
    pub output_path: PathBuf,
    pub bytes_written: u64,
}

/// `ch<N>_<first ts>_<offset>.<ext>`, with `chunk` when no channel is known.
pub fn carve_file_name(segment: &StreamSegment, ext: &str) -> String {
    let ch = segment.channel_hint.map(|c| format!("ch{c}")).unwrap_or_else(|| "chunk".into());
    format!("{ch}_{}_{:#x}.{ext}", compact_micros(segment.first_ts), segment.start_offset)
}

const COPY_CHUNK: u64 = 8 << 20;

pub fn carve(
    handle: &ImageHandle,
    segment: &StreamSegment,
    mode: ExportMode,
    out_path: &Path,
) -> Result<CarvedStream, CarveError> {
    let io_err = |source| CarveError::Io { path: out_path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(out_path).map_err(io_err)?);
    let ranges: Vec<ByteRange> = match mode {
        ExportMode::RawWithCustomHeaders => vec![segment.range()],
        ExportMode::AnnexB => segment.frames.iter().map(|f| f.payload_range).collect(),
    };
    let mut written = 0;
    for r in ranges {
        let mut pos = r.offset;
        while pos < r.end() {
            let n = COPY_CHUNK.min(r.end() - pos);
            out.write_all(&handle.read_at(ByteRange::new(pos, n))?).map_err(io_err)?;
            pos += n;
            written += n;
        }
    }
    out.flush().map_err(io_err)?;
    Ok(CarvedStream {
        source: segment.range(),
        channel: segment.channel_hint,
        first_ts: segment.first_ts,
        last_ts: segment.last_ts,
        frames: segment.frames.len(),
        export_mode: mode,
        output_path: out_path.to_path_buf(),
        bytes_written: written,
    })
}
