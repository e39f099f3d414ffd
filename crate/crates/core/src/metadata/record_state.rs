//! Per-channel hourly record state tables.

use serde::Serialize;

use crate::le::{put_u32, u32_at};

pub const RECORD_INDEX_LEN: usize = 20;
pub const STATUS_LEN: usize = 15;

/// One 20-byte record index entry (a full-hour "time anchor").
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordIndexEntry {
    #[serde(skip)]
    pub raw: [u8; 20],
    pub hour_timestamp: u32,
    pub status_bits: [u8; STATUS_LEN],
    pub reserved: u8,
}

impl RecordIndexEntry {
    pub fn new(hour_timestamp: u32, status_bits: [u8; STATUS_LEN]) -> Self {
        let mut raw = [0u8; 20];
        put_u32(&mut raw, 0, hour_timestamp);
        raw[4..19].copy_from_slice(&status_bits);
        Self::decode(&raw)
    }

    pub fn decode(raw: &[u8]) -> Self {
        RecordIndexEntry {
            raw: raw[..20].try_into().unwrap(),
            hour_timestamp: u32_at(raw, 0),
            status_bits: raw[4..19].try_into().unwrap(),
            reserved: raw[19],
        }
    }

    pub fn hour_aligned(&self) -> bool {
        self.hour_timestamp.is_multiple_of(3600)
    }

    /// Heuristic: any set status bit is taken to mean something was recorded that hour.
    pub fn heuristic_recorded(&self) -> bool {
        self.status_bits.iter().any(|&b| b != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordStateTable {
    pub channel: u8,
    pub anchor_count: u8,
    pub anchors: Vec<RecordIndexEntry>,
}

impl RecordStateTable {
    pub fn decode(channel: u8, sub: &[u8]) -> Result<Self, u8> {
        let count = sub[0];
        if 1 + count as usize * RECORD_INDEX_LEN > sub.len() {
            return Err(count);
        }
        let anchors = (0..count as usize)
            .map(|i| RecordIndexEntry::decode(&sub[1 + i * RECORD_INDEX_LEN..]))
            .collect();
        Ok(RecordStateTable { channel, anchor_count: count, anchors })
    }

    /// Count byte followed by the anchors, zero-padded to `len`.
    pub fn encode(&self, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        out[0] = self.anchors.len() as u8;
        for (i, a) in self.anchors.iter().enumerate() {
            let off = 1 + i * RECORD_INDEX_LEN;
            out[off..off + RECORD_INDEX_LEN].copy_from_slice(&a.raw);
        }
        out
    }

    /// Runs of consecutive anchors whose timestamps step by exactly one hour.
    pub fn contiguous_spans(&self) -> Vec<(u32, u32)> {
        let mut spans: Vec<(u32, u32)> = Vec::new();
        for a in &self.anchors {
            match spans.last_mut() {
                Some((_, end)) if a.hour_timestamp == end.wrapping_add(3600) => *end = a.hour_timestamp,
                _ => spans.push((a.hour_timestamp, a.hour_timestamp)),
            }
        }
        spans
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeroed_subregion_is_empty() {
        let t = RecordStateTable::decode(1, &[0u8; 0x2000]).unwrap();
        assert_eq!(t.anchor_count, 0);
        assert!(t.anchors.is_empty());
    }

    #[test]
    fn overflowing_count() {
        let mut sub = vec![0u8; 100];
        sub[0] = 5; // needs 101 bytes
        assert_eq!(RecordStateTable::decode(1, &sub), Err(5));
        sub[0] = 4;
        assert!(RecordStateTable::decode(1, &sub).is_ok());
    }

    #[test]
    fn round_trip_and_spans() {
        let base = 1_764_190_800; // 2025-11-26 21:00:00
        let table = RecordStateTable {
            channel: 3,
            anchor_count: 3,
            anchors: vec![
                RecordIndexEntry::new(base, [1; 15]),
                RecordIndexEntry::new(base + 3600, [0; 15]),
                RecordIndexEntry::new(base + 7 * 86400, [2; 15]),
            ],
        };
        let bytes = table.encode(0x2000);
        let back = RecordStateTable::decode(3, &bytes).unwrap();
        assert_eq!(back, table);
        assert!(back.anchors.iter().all(|a| a.hour_aligned()));
        assert_eq!(back.contiguous_spans(), vec![(base, base + 3600), (base + 7 * 86400, base + 7 * 86400)]);
        assert!(!back.anchors[1].heuristic_recorded());
    }
}
