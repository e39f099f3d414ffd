use serde::Serialize;

/// Partition-relative `[start, end)` span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub start: u64,
    pub end: u64,
}

impl Span {
    pub const fn new(start: u64, end: u64) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, rel: u64) -> bool {
        rel >= self.start && rel < self.end
    }
}

/// Where each metadata region of partition 1 lives.
///
/// `FULL` is the recorder's real layout. `COMPACT` keeps the same region
/// order, record formats and 0x1000 scaling but packs the regions into a few
/// megabytes so synthetic fixtures stay small.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayoutProfile {
    pub name: &'static str,
    pub header: Span,
    pub block_list: Span,
    pub channel_list: Span,
    pub record_state_start: u64,
    pub record_subregion_len: u64,
    /// Channels plus the unassigned first subregion.
    pub record_subregions: u64,
    pub video_start: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum P1Region {
    Header,
    BlockList,
    ChannelList,
    RecordState,
    FixedValue,
    VideoData,
    Reserved,
}

impl LayoutProfile {
    pub const FULL: LayoutProfile = LayoutProfile {
        name: "full",
        header: Span::new(0, 0x4000),
        block_list: Span::new(0x40000, 0x400000),
        channel_list: Span::new(0x400000, 0x4000_0000),
        record_state_start: 0x4000_0000,
        record_subregion_len: 0x20000,
        record_subregions: 9,
        video_start: 0x8000_0000,
    };

    pub const COMPACT: LayoutProfile = LayoutProfile {
        name: "compact",
        header: Span::new(0, 0x4000),
        block_list: Span::new(0x4000, 0x24000),
        channel_list: Span::new(0x24000, 0x124000),
        record_state_start: 0x124000,
        record_subregion_len: 0x2000,
        record_subregions: 9,
        video_start: 0x140000,
    };

    pub fn by_name(name: &str) -> Option<LayoutProfile> {
        match name {
            "full" => Some(Self::FULL),
            "compact" => Some(Self::COMPACT),
            _ => None,
        }
    }

    /// Profile whose video region starts at `video_start` (partition-relative).
    pub fn for_video_start(video_start: u64) -> Option<LayoutProfile> {
        [Self::FULL, Self::COMPACT].into_iter().find(|p| p.video_start == video_start)
    }

    pub fn max_channels(&self) -> u64 {
        self.record_subregions - 1
    }

    pub fn record_state(&self) -> Span {
        Span::new(
            self.record_state_start,
            self.record_state_start + self.record_subregions * self.record_subregion_len,
        )
    }

    /// Subregion of channel `channel` (1-based); subregion 0 is unassigned.
    pub fn record_subregion(&self, channel: u8) -> Span {
        let start = self.record_state_start + channel as u64 * self.record_subregion_len;
        Span::new(start, start + self.record_subregion_len)
    }

    pub fn fixed_value(&self) -> Span {
        Span::new(self.record_state().end, self.video_start)
    }

    pub fn classify(&self, rel: u64) -> P1Region {
        if self.header.contains(rel) {
            P1Region::Header
        } else if self.block_list.contains(rel) {
            P1Region::BlockList
        } else if self.channel_list.contains(rel) {
            P1Region::ChannelList
        } else if self.record_state().contains(rel) {
            P1Region::RecordState
        } else if self.fixed_value().contains(rel) {
            P1Region::FixedValue
        } else if rel >= self.video_start {
            P1Region::VideoData
        } else {
            P1Region::Reserved
        }
    }
}
