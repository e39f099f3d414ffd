use std::collections::BTreeMap;
use std::fmt::Write as _;

use nvrfs::gpt::GptLayout;
use nvrfs::metadata::{Partition1Metadata, ScaledOffset};
use serde::Serialize;

use crate::report::{Place, Stamp};

#[derive(Debug, Serialize)]
pub struct Scaled {
    pub raw: String,
    pub bytes: String,
}

impl From<ScaledOffset> for Scaled {
    fn from(s: ScaledOffset) -> Self {
        Scaled { raw: format!("{:#010x}", s.raw), bytes: format!("{:#x}", s.resolved) }
    }
}

#[derive(Debug, Serialize)]
pub struct PartitionInfo {
    pub index: usize,
    pub name: String,
    pub type_guid: String,
    pub unique_guid: String,
    pub start: String,
    pub length: String,
}

#[derive(Debug, Serialize)]
pub struct GptInfo {
    pub disk_guid: String,
    pub protective_mbr_valid: bool,
    pub primary_valid: bool,
    pub secondary_valid: bool,
    pub secondary_header: Option<String>,
    pub partitions: Vec<PartitionInfo>,
}

#[derive(Debug, Serialize)]
pub struct GroupInfo {
    pub group: u8,
    pub start_time: Stamp,
    pub blocks: usize,
}

#[derive(Debug, Serialize)]
pub struct ChannelInfo {
    pub channel: u8,
    pub entries: usize,
    pub first_entry: Option<Place>,
    pub first_time: Option<Stamp>,
    pub last_time: Option<Stamp>,
    pub anchors: usize,
    pub first_hour: Option<Stamp>,
    pub last_hour: Option<Stamp>,
}

#[derive(Debug, Serialize)]
pub struct HeaderInfo {
    pub profile: &'static str,
    pub partition1: Place,
    pub video_start: Scaled,
    pub next_write: Scaled,
    pub available_memory: Scaled,
    pub total_memory: Scaled,
    pub reset: bool,
    pub block_groups: Vec<GroupInfo>,
    pub block_entries: usize,
    pub channel_entries: usize,
    pub channels: Vec<ChannelInfo>,
    pub fixed_value_crc32: String,
    pub fixed_value_all_zero: bool,
}

#[derive(Debug, Serialize)]
pub struct InspectFindings {
    pub gpt: GptInfo,
    pub partition1: HeaderInfo,
}

pub fn gpt_info(layout: &GptLayout) -> GptInfo {
    GptInfo {
        disk_guid: layout.disk_guid().to_string(),
        protective_mbr_valid: layout.protective_mbr_valid,
        primary_valid: layout.primary.as_ref().is_some_and(|h| h.is_valid()),
        secondary_valid: layout.secondary.as_ref().is_some_and(|h| h.is_valid()),
        secondary_header: layout.secondary.as_ref().map(|h| format!("{:#x}", h.current_lba * 512)),
        partitions: layout
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_unused())
            .map(|(i, e)| PartitionInfo {
                index: i + 1,
                name: e.name.clone(),
                type_guid: e.type_guid.to_string(),
                unique_guid: e.unique_guid.to_string(),
                start: format!("{:#x}", e.byte_range().offset),
                length: format!("{:#x}", e.byte_range().length),
            })
            .collect(),
    }
}

pub fn header_info(meta: &Partition1Metadata) -> HeaderInfo {
    let h = &meta.header;
    let base = Some(meta.partition.offset);
    let mut per_group: BTreeMap<u8, usize> = BTreeMap::new();
    for b in &meta.blocks {
        *per_group.entry(b.group_number).or_default() += 1;
    }
    let mut channels = Vec::new();
    for t in &meta.record_state {
        let entries: Vec<_> = meta.channels.iter().filter(|c| c.channel == t.channel).collect();
        if entries.is_empty() && t.anchors.is_empty() {
            continue;
        }
        channels.push(ChannelInfo {
            channel: t.channel,
            entries: entries.len(),
            first_entry: entries.first().map(|e| Place::new(meta.abs(e.frame_start_offset.resolved), base)),
            first_time: entries.iter().map(|e| e.frame_start_time).min().map(Stamp::secs),
            last_time: entries.iter().map(|e| e.frame_start_time).max().map(Stamp::secs),
            anchors: t.anchors.len(),
            first_hour: t.anchors.first().map(|a| Stamp::secs(a.hour_timestamp)),
            last_hour: t.anchors.last().map(|a| Stamp::secs(a.hour_timestamp)),
        });
    }
    HeaderInfo {
        profile: meta.profile.name,
        partition1: Place::new(meta.partition.offset, None),
        video_start: h.video_start.into(),
        next_write: h.next_write.into(),
        available_memory: h.available_memory.into(),
        total_memory: h.total_memory.into(),
        reset: h.is_reset(),
        block_groups: h
            .block_groups
            .iter()
            .map(|g| GroupInfo {
                group: g.group_number,
                start_time: Stamp::secs(g.start_time),
                blocks: per_group.get(&g.group_number).copied().unwrap_or(0),
            })
            .collect(),
        block_entries: meta.blocks.len(),
        channel_entries: meta.channels.len(),
        channels,
        fixed_value_crc32: format!("{:08x}", meta.fixed_value.crc32),
        fixed_value_all_zero: meta.fixed_value.all_zero,
    }
}

pub fn render_text(f: &InspectFindings) -> String {
    let mut o = String::new();
    let g = &f.gpt;
    let _ = writeln!(o, "GPT");
    let _ = writeln!(o, "  disk GUID        {}", g.disk_guid);
    let _ = writeln!(
        o,
        "  protective MBR   {}   primary {}   secondary {}",
        ok(g.protective_mbr_valid),
        ok(g.primary_valid),
        ok(g.secondary_valid)
    );
    if let Some(s) = &g.secondary_header {
        let _ = writeln!(o, "  secondary header {s}");
    }
    for p in &g.partitions {
        let _ = writeln!(o, "  partition {}  {:<12} start {:>14}  length {:>14}", p.index, p.name, p.start, p.length);
        let _ = writeln!(o, "               type {}  id {}", p.type_guid, p.unique_guid);
    }
    let h = &f.partition1;
    let _ = writeln!(o, "\nPartition 1 ({} layout, at {})", h.profile, h.partition1.abs);
    for (name, v) in [
        ("video start", &h.video_start),
        ("next write", &h.next_write),
        ("available", &h.available_memory),
        ("total", &h.total_memory),
    ] {
        let _ = writeln!(o, "  {name:<16} {} -> {}", v.raw, v.bytes);
    }
    if h.reset {
        let _ = writeln!(o, "  header is in its formatted state");
    }
    let _ = writeln!(o, "  block groups     {}", h.block_groups.len());
    for b in &h.block_groups {
        let _ = writeln!(o, "    group {:>3}  start {} ({})  blocks {}", b.group, b.start_time.text, b.start_time.raw, b.blocks);
    }
    let _ = writeln!(o, "  block entries    {}", h.block_entries);
    let _ = writeln!(o, "  channel entries  {}", h.channel_entries);
    for c in &h.channels {
        let span = match (&c.first_time, &c.last_time) {
            (Some(a), Some(b)) => format!("{} .. {}", a.text, b.text),
            _ => "-".into(),
        };
        let hours = match (&c.first_hour, &c.last_hour) {
            (Some(a), Some(b)) => format!("{} .. {}", a.text, b.text),
            _ => "-".into(),
        };
        let _ = writeln!(o, "    ch {:>2}  {:>5} entries  {span}", c.channel, c.entries);
        let _ = writeln!(o, "           {:>5} anchors  {hours}", c.anchors);
    }
    let _ = writeln!(
        o,
        "  fixed value      crc32 {}{}",
        h.fixed_value_crc32,
        if h.fixed_value_all_zero { " (zero)" } else { "" }
    );
    o
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "BAD"
    }
}
