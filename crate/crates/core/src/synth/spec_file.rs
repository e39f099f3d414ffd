//! Line-oriented `key=value` spec files.
//!
//! ```text
//! # comment
//! profile=compact              # compact | full
//! shrink_factor=1024
//! video_region_len=16M         # or disk_size=160000000000
//! total_memory_units=0x01BB33D1
//! num_channels=8
//! seed=7
//! segment_s=60
//! block_size=64K
//! source_es=reference:30,10    # built-in stream (frames, keyint) or a file path
//! round=2025-11-26 21:48:19,300,1000,30,1920x1080,main+sub
//! deletion=expiration:1d       # formatting | expiration:<retention> | overwrite:<extra>
//! now=2025-12-05 18:22:00
//! resume=2025-12-06 09:00:00,60,1000,30,1920x1080,main
//! ```
//!
//! `round` and `resume` take: start, duration, frame interval in ms, IDR
//! interval in frames, resolution, streams (`main`, `sub` or `main+sub`).
//! Times are epoch seconds or `YYYY-MM-DD HH:MM:SS` wall clock; durations
//! are seconds with an optional `m`, `h` or `d` suffix; sizes accept `0x`
//! and `K`/`M`/`G` suffixes.

use std::path::Path;

use chrono::NaiveDateTime;

use super::{reference_stream, DeletionAction, RecordingRound, SynthError, SynthSpec};
use crate::metadata::LayoutProfile;

fn bad(line: usize, msg: impl std::fmt::Display) -> SynthError {
    SynthError::InvalidSpec(format!("line {line}: {msg}"))
}

fn parse_int(s: &str) -> Option<u64> {
    let s = s.trim().replace('_', "");
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Byte count with optional binary `K`, `M` or `G` suffix.
pub fn parse_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mul) = match s.chars().last()? {
        'K' | 'k' => (&s[..s.len() - 1], 1u64 << 10),
        'M' | 'm' => (&s[..s.len() - 1], 1 << 20),
        'G' | 'g' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    parse_int(num)?.checked_mul(mul)
}

/// Seconds with optional `s`, `m`, `h` or `d` suffix.
pub fn parse_duration(s: &str) -> Option<u32> {
    let s = s.trim();
    let (num, mul) = match s.chars().last()? {
        's' => (&s[..s.len() - 1], 1u64),
        'm' => (&s[..s.len() - 1], 60),
        'h' => (&s[..s.len() - 1], 3600),
        'd' => (&s[..s.len() - 1], 86400),
        _ => (s, 1),
    };
    u32::try_from(parse_int(num)?.checked_mul(mul)?).ok()
}

/// Epoch seconds or a wall-clock `YYYY-MM-DD HH:MM:SS`.
pub fn parse_time(s: &str) -> Option<u32> {
    let s = s.trim();
    if let Some(v) = parse_int(s) {
        return u32::try_from(v).ok();
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .and_then(|t| u32::try_from(t.and_utc().timestamp()).ok())
}

fn parse_round(line: usize, v: &str) -> Result<RecordingRound, SynthError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 6 {
        return Err(bad(line, "round needs start,duration,interval_ms,keyint,WxH,streams"));
    }
    let (w, h) = parts[4].split_once(['x', 'X']).ok_or_else(|| bad(line, "resolution must be WxH"))?;
    let num = |s: &str, what: &str| parse_int(s).ok_or_else(|| bad(line, format!("bad {what} '{s}'")));
    let streams: Vec<&str> = parts[5].split('+').collect();
    if streams.iter().any(|s| *s != "main" && *s != "sub") {
        return Err(bad(line, format!("bad streams '{}'", parts[5])));
    }
    Ok(RecordingRound {
        start_time: parse_time(parts[0]).ok_or_else(|| bad(line, format!("bad time '{}'", parts[0])))?,
        duration_s: parse_duration(parts[1]).ok_or_else(|| bad(line, format!("bad duration '{}'", parts[1])))?,
        frame_interval_ms: num(parts[2], "interval")? as u32,
        keyint: num(parts[3], "keyint")? as u32,
        width: num(w, "width")? as u16,
        height: num(h, "height")? as u16,
        main: streams.contains(&"main"),
        sub: streams.contains(&"sub"),
    })
}

/// Parses a spec file; relative `source_es` paths resolve against `base_dir`.
pub fn parse_spec(text: &str, base_dir: &Path) -> Result<SynthSpec, SynthError> {
    let mut spec = SynthSpec::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split_once('#').map(|(a, _)| a).unwrap_or(raw).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| bad(line, "expected key=value"))?;
        let (key, value) = (key.trim(), value.trim());
        let size = || parse_size(value).ok_or_else(|| bad(line, format!("bad size '{value}'")));
        match key {
            "profile" => {
                spec.profile = LayoutProfile::by_name(value).ok_or_else(|| bad(line, format!("unknown profile '{value}'")))?
            }
            "shrink_factor" => spec.shrink_factor = size()?,
            "video_region_len" => spec.video_region_len = Some(size()?),
            "disk_size" => spec.disk_size = Some(size()?),
            "total_memory_units" => {
                spec.total_memory_units = Some(u32::try_from(size()?).map_err(|_| bad(line, "units exceed 32 bits"))?)
            }
            "num_channels" => spec.num_channels = u8::try_from(size()?).map_err(|_| bad(line, "too many channels"))?,
            "seed" => spec.seed = size()?,
            "block_size" => spec.block_size = Some(size()?),
            "segment_s" => spec.segment_s = parse_duration(value).ok_or_else(|| bad(line, "bad segment_s"))?,
            "max_disk_bytes" => spec.max_disk_bytes = size()?,
            "device_id" => spec.device_id = value.to_string(),
            "model_name" => spec.model_name = value.to_string(),
            "now" => spec.now = Some(parse_time(value).ok_or_else(|| bad(line, format!("bad time '{value}'")))?),
            "round" => spec.rounds.push(parse_round(line, value)?),
            "resume" => spec.resume.push(parse_round(line, value)?),
            "deletion" => {
                let (kind, arg) = value.split_once(':').unwrap_or((value, ""));
                let dur = || parse_duration(arg).ok_or_else(|| bad(line, format!("bad duration '{arg}'")));
                spec.deletion = Some(match kind {
                    "formatting" => DeletionAction::Formatting,
                    "expiration" => DeletionAction::Expiration { retention_s: dur()? },
                    "overwrite" => DeletionAction::Overwrite { extra_recording_s: dur()? },
                    _ => return Err(bad(line, format!("unknown deletion '{value}'"))),
                });
            }
            "source_es" => {
                spec.source_es = Some(match value.strip_prefix("reference:") {
                    Some(args) => {
                        let (n, k) = args.split_once(',').ok_or_else(|| bad(line, "reference:<frames>,<keyint>"))?;
                        let n = parse_int(n).ok_or_else(|| bad(line, "bad frame count"))? as u32;
                        let k = parse_int(k).ok_or_else(|| bad(line, "bad keyint"))? as u32;
                        reference_stream(n, k)
                    }
                    None => std::fs::read(base_dir.join(value))
                        .map_err(|e| bad(line, format!("reading {value}: {e}")))?,
                });
            }
            _ => return Err(bad(line, format!("unknown key '{key}'"))),
        }
    }
    Ok(spec)
}
