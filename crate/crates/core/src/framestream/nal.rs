//! Minimal Annex-B helpers: NAL unit type lookup and start-code splitting.

use serde::Serialize;
use thiserror::Error;

pub const START_CODE: [u8; 4] = [0, 0, 0, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NalKind {
    IdrSlice,
    NonIdrSlice,
    Sps,
    Pps,
    Other(u8),
}

impl NalKind {
    pub fn from_type(nal_unit_type: u8) -> Self {
        match nal_unit_type & 0x1F {
            5 => NalKind::IdrSlice,
            1 => NalKind::NonIdrSlice,
            7 => NalKind::Sps,
            8 => NalKind::Pps,
            t => NalKind::Other(t),
        }
    }

    pub fn is_parameter_set(self) -> bool {
        matches!(self, NalKind::Sps | NalKind::Pps)
    }

    pub fn is_slice(self) -> bool {
        matches!(self, NalKind::IdrSlice | NalKind::NonIdrSlice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NalError {
    #[error("no Annex-B start code")]
    NoStartCode,
}

/// Length of the start code at the front of `bytes` (4 or 3), if any.
pub fn start_code_len(bytes: &[u8]) -> Option<usize> {
    if bytes.starts_with(&START_CODE) {
        Some(4)
    } else if bytes.starts_with(&START_CODE[1..]) {
        Some(3)
    } else {
        None
    }
}

/// NAL type of the unit at the front of `bytes`, which must begin with a start code.
pub fn classify_nal(bytes: &[u8]) -> Result<NalKind, NalError> {
    let sc = start_code_len(bytes).ok_or(NalError::NoStartCode)?;
    let header = *bytes.get(sc).ok_or(NalError::NoStartCode)?;
    Ok(NalKind::from_type(header))
}

/// Offsets of every start code in `es` (3- or 4-byte), pointing at the first zero.
pub fn start_code_positions(es: &[u8]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(p) = memchr::memmem::find(&es[i..], &START_CODE[1..]) {
        let at = i + p;
        out.push(if at > 0 && es[at - 1] == 0 { at - 1 } else { at });
        i = at + 3;
    }
    out
}

/// Kinds of every NAL unit in an Annex-B byte string, in order.
pub fn nal_kinds(es: &[u8]) -> Vec<NalKind> {
    start_code_positions(es)
        .into_iter()
        .filter_map(|p| classify_nal(&es[p..]).ok())
        .collect()
}

/// Splits an elementary stream into access units: each unit ends with a slice
/// NAL, and parameter sets or other non-slice units attach to the slice that
/// follows them. Every returned unit starts with a start code.
pub fn split_access_units(es: &[u8]) -> Vec<&[u8]> {
    let starts = start_code_positions(es);
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut unit_start = None;
    for (i, &s) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(es.len());
        unit_start.get_or_insert(s);
        if classify_nal(&es[s..]).map(NalKind::is_slice).unwrap_or(false) {
            bounds.push((unit_start.take().unwrap(), end));
        }
    }
    if let Some(s) = unit_start {
        match bounds.last_mut() {
            Some(last) => last.1 = es.len(),
            None => bounds.push((s, es.len())),
        }
    }
    bounds.into_iter().map(|(a, b)| &es[a..b]).collect()
}
