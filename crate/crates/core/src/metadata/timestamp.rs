//! Rendering of recorder timestamps.
//!
//! The recorder stores local wall-clock time as if it were a Unix epoch value,
//! so rendering applies no timezone conversion at all.

use chrono::{DateTime, Datelike};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedTime {
    pub text: String,
    /// False when the value falls outside 2000..=2100.
    pub plausible: bool,
}

/// Timestamp in either of the two stored resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceTimestamp {
    Seconds(u32),
    Micros(u64),
}

impl DeviceTimestamp {
    pub fn render(self) -> RenderedTime {
        match self {
            DeviceTimestamp::Seconds(s) => render_seconds(s as u64),
            DeviceTimestamp::Micros(us) => render_micros(us),
        }
    }
}

fn plausible_year(year: i32) -> bool {
    (2000..=2100).contains(&year)
}

/// `YYYY-MM-DD HH:MM:SS`.
pub fn render_seconds(secs: u64) -> RenderedTime {
    match DateTime::from_timestamp(secs as i64, 0) {
        Some(dt) => {
            let n = dt.naive_utc();
            RenderedTime {
                text: n.format("%Y-%m-%d %H:%M:%S").to_string(),
                plausible: plausible_year(n.year()),
            }
        }
        None => RenderedTime { text: format!("<invalid {secs}>"), plausible: false },
    }
}

/// `YYYY-MM-DD HH:MM:SS.mmm`, milliseconds truncated.
pub fn render_micros(micros: u64) -> RenderedTime {
    let secs = micros / 1_000_000;
    let millis = (micros % 1_000_000) / 1000;
    let mut r = render_seconds(secs);
    if !r.text.starts_with('<') {
        r.text = format!("{}.{millis:03}", r.text);
    }
    r
}

/// Compact form used in carved file names: `YYYYMMDDTHHMMSS.mmm`.
pub fn compact_micros(micros: u64) -> String {
    match DateTime::from_timestamp((micros / 1_000_000) as i64, 0) {
        Some(dt) => format!("{}.{:03}", dt.naive_utc().format("%Y%m%dT%H%M%S"), (micros % 1_000_000) / 1000),
        None => micros.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch() {
        assert_eq!(render_seconds(0).text, "1970-01-01 00:00:00");
        assert!(!render_seconds(0).plausible);
    }

    #[test]
    fn block_group_start_example() {
        let r = DeviceTimestamp::Seconds(0x692775A3).render();
        assert_eq!(r.text, "2025-11-26 21:48:19");
        assert!(r.plausible);
    }

    #[test]
    fn retained_cutoff_example() {
        // only minute precision is published for this value
        assert_eq!(render_seconds(0x693185FF).text, "2025-12-04 13:00:47");
    }

    #[test]
    fn frame_timestamp_example() {
        assert_eq!(render_micros(0x000644865C1BCEE6).text, "2025-11-26 21:48:41.896");
        assert_eq!(compact_micros(0x000644865C1BCEE6), "20251126T214841.896");
    }

    #[test]
    fn out_of_range_is_flagged() {
        let r = render_micros(u64::MAX);
        assert!(!r.plausible);
    }
}
