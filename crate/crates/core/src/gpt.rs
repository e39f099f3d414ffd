//! GPT scaffolding of a recorder disk: protective MBR, primary and secondary
//! headers, partition entry arrays and the machine-data sector.
//!
//! Disk map (sectors of 512 bytes):
//!
//! ```text
//! 0        protective MBR
//! 1        primary GPT header
//! 2        primary partition entry array (4 x 128 bytes)
//! 3..=33   unused
//! 34       machine data (device id, model name)
//! 35..=39  unused
//! 40..     partition 1 (video), then partition 2 (10 GiB, ext4)
//! tail     2 GiB unpartitioned: secondary entry array at tail sector 0,
//!          secondary header at tail sector 32
//! ```
//!
//! Recorder disks keep the backup header inside the unpartitioned tail rather
//! than on the last LBA, so the parser searches for it at the tail offsets as
//! well as the standard location.

use std::fmt;

use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::image::{ByteRange, ImageError, ImageHandle, SECTOR_SIZE};
use crate::le::{is_zero, put_u32, put_u64, u32_at, u64_at};

pub const GPT_SIGNATURE: &[u8; 8] = b"EFI PART";
pub const GPT_REVISION: u32 = 0x0001_0000;
pub const GPT_HEADER_SIZE: u32 = 92;
pub const START_SECTORS: u64 = 40;
pub const START_SECTORS_BYTES: u64 = START_SECTORS * SECTOR_SIZE;
pub const MACHINE_DATA_LBA: u64 = 34;
pub const PARTITION_ENTRY_COUNT: u32 = 4;
pub const PARTITION_ENTRY_SIZE: u32 = 128;
pub const PARTITION2_BYTES: u64 = 10 << 30;
pub const UNPARTITIONED_TAIL_BYTES: u64 = 2 << 30;
/// Sector of the secondary header, counted from the start of the unpartitioned tail.
pub const SECONDARY_HEADER_TAIL_SECTOR: u64 = 32;

/// Partition type used for the proprietary video partition.
pub const VIDEO_PARTITION_TYPE: Guid = Guid([
    0x48, 0x57, 0x4e, 0x56, 0x52, 0x56, 0x49, 0x44, 0x8a, 0x1e, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01,
]);
/// Linux filesystem data.
pub const LINUX_DATA_PARTITION_TYPE: Guid = Guid([
    0xaf, 0x3d, 0xc6, 0x0f, 0x83, 0x84, 0x72, 0x47, 0x8e, 0x79, 0x3d, 0x69, 0xd8, 0x47, 0x7d, 0xe4,
]);

#[derive(Debug, Error)]
pub enum GptError {
    #[error("no valid GPT header signature at the primary or any secondary location")]
    NoGptSignature,
    #[error("image too small: need {needed} bytes, have {have}")]
    TruncatedImage { needed: u64, have: u64 },
    #[error("disk of {disk} bytes cannot hold partition 1 of {partition1} bytes plus fixed regions ({needed} bytes)")]
    InsufficientSize { disk: u64, partition1: u64, needed: u64 },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// GUID as stored on disk (mixed-endian in its textual form).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Guid(pub [u8; 16]);

impl Guid {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        // RFC 4122 version 4, variant 1
        b[7] = (b[7] & 0x0f) | 0x40;
        b[8] = (b[8] & 0x3f) | 0x80;
        Guid(b)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }
}

impl fmt::Display for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.0;
        write!(
            f,
            "{:02X}{:02X}{:02X}{:02X}-{:02X}{:02X}-{:02X}{:02X}-{:02X}{:02X}-",
            b[3], b[2], b[1], b[0], b[5], b[4], b[7], b[6], b[8], b[9]
        )?;
        for x in &b[10..] {
            write!(f, "{:02X}", x)?;
        }
        Ok(())
    }
}

impl fmt::Debug for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Guid({})", self)
    }
}

impl Serialize for Guid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GptHeader {
    pub signature: [u8; 8],
    pub revision: u32,
    pub header_size: u32,
    pub header_crc32: u32,
    pub current_lba: u64,
    pub backup_lba: u64,
    pub first_usable_lba: u64,
    pub last_usable_lba: u64,
    pub disk_guid: Guid,
    pub entry_array_lba: u64,
    pub num_entries: u32,
    pub entry_size: u32,
    pub entries_crc32: u32,
    /// Stored header CRC matched the recomputed one.
    pub header_crc_valid: bool,
    /// Stored entry-array CRC matched the array found at `entry_array_lba`.
    pub entries_crc_valid: bool,
}

impl GptHeader {
    pub fn has_signature(&self) -> bool {
        &self.signature == GPT_SIGNATURE
    }

    pub fn is_valid(&self) -> bool {
        self.has_signature() && self.header_crc_valid && self.entries_crc_valid
    }

    fn entry_array_bytes(&self) -> u64 {
        self.num_entries as u64 * self.entry_size as u64
    }

    fn decode(sector: &[u8]) -> Self {
        let header_size = u32_at(sector, 12);
        let stored_crc = u32_at(sector, 16);
        let header_crc_valid = (92..=512).contains(&header_size) && {
            let mut tmp = sector[..header_size as usize].to_vec();
            put_u32(&mut tmp, 16, 0);
            crc32fast::hash(&tmp) == stored_crc
        };
        GptHeader {
            signature: sector[0..8].try_into().unwrap(),
            revision: u32_at(sector, 8),
            header_size,
            header_crc32: stored_crc,
            current_lba: u64_at(sector, 24),
            backup_lba: u64_at(sector, 32),
            first_usable_lba: u64_at(sector, 40),
            last_usable_lba: u64_at(sector, 48),
            disk_guid: Guid(sector[56..72].try_into().unwrap()),
            entry_array_lba: u64_at(sector, 72),
            num_entries: u32_at(sector, 80),
            entry_size: u32_at(sector, 84),
            entries_crc32: u32_at(sector, 88),
            header_crc_valid,
            entries_crc_valid: false,
        }
    }

    /// Serializes into a full sector; the CRC field is recomputed and stored
    /// back into `self`.
    fn encode(&mut self) -> Vec<u8> {
        let mut s = vec![0u8; SECTOR_SIZE as usize];
        s[0..8].copy_from_slice(&self.signature);
        put_u32(&mut s, 8, self.revision);
        put_u32(&mut s, 12, self.header_size);
        put_u64(&mut s, 24, self.current_lba);
        put_u64(&mut s, 32, self.backup_lba);
        put_u64(&mut s, 40, self.first_usable_lba);
        put_u64(&mut s, 48, self.last_usable_lba);
        s[56..72].copy_from_slice(&self.disk_guid.0);
        put_u64(&mut s, 72, self.entry_array_lba);
        put_u32(&mut s, 80, self.num_entries);
        put_u32(&mut s, 84, self.entry_size);
        put_u32(&mut s, 88, self.entries_crc32);
        let crc = crc32fast::hash(&s[..self.header_size as usize]);
        put_u32(&mut s, 16, crc);
        self.header_crc32 = crc;
        self.header_crc_valid = true;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionEntry {
    pub type_guid: Guid,
    pub unique_guid: Guid,
    pub first_lba: u64,
    pub last_lba: u64,
    pub attributes: u64,
    pub name: String,
}

impl PartitionEntry {
    pub fn unused() -> Self {
        PartitionEntry {
            type_guid: Guid::default(),
            unique_guid: Guid::default(),
            first_lba: 0,
            last_lba: 0,
            attributes: 0,
            name: String::new(),
        }
    }

    pub fn is_unused(&self) -> bool {
        self.type_guid.is_zero()
    }

    pub fn byte_range(&self) -> ByteRange {
        ByteRange::from_bounds(self.first_lba * SECTOR_SIZE, (self.last_lba + 1) * SECTOR_SIZE)
    }

    fn decode(raw: &[u8]) -> Self {
        let units: Vec<u16> = raw[56..128]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .take_while(|&u| u != 0)
            .collect();
        PartitionEntry {
            type_guid: Guid(raw[0..16].try_into().unwrap()),
            unique_guid: Guid(raw[16..32].try_into().unwrap()),
            first_lba: u64_at(raw, 32),
            last_lba: u64_at(raw, 40),
            attributes: u64_at(raw, 48),
            name: String::from_utf16_lossy(&units),
        }
    }

    fn encode(&self, out: &mut [u8]) {
        out.fill(0);
        if self.is_unused() {
            return;
        }
        out[0..16].copy_from_slice(&self.type_guid.0);
        out[16..32].copy_from_slice(&self.unique_guid.0);
        put_u64(out, 32, self.first_lba);
        put_u64(out, 40, self.last_lba);
        put_u64(out, 48, self.attributes);
        for (i, unit) in self.name.encode_utf16().take(36).enumerate() {
            out[56 + 2 * i..58 + 2 * i].copy_from_slice(&unit.to_le_bytes());
        }
    }
}

/// Sector 34 of the start sectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MachineData {
    #[serde(skip)]
    pub raw: Vec<u8>,
    pub device_id: String,
    pub model_name: String,
    /// Every printable run of four or more characters, in sector order.
    pub strings: Vec<String>,
}

impl MachineData {
    pub fn from_sector(raw: Vec<u8>) -> Self {
        let strings = printable_runs(&raw, 4);
        let model_name = strings.iter().find(|s| looks_like_model(s)).cloned().unwrap_or_default();
        let device_id = strings
            .iter()
            .find(|s| !looks_like_model(s))
            .cloned()
            .unwrap_or_default();
        MachineData { raw, device_id, model_name, strings }
    }

    /// Builds a sector holding `device_id` at 0x10 and `model_name` at 0x40,
    /// each NUL-terminated.
    pub fn build_sector(device_id: &str, model_name: &str) -> Vec<u8> {
        let mut s = vec![0u8; SECTOR_SIZE as usize];
        let d = device_id.as_bytes();
        let m = model_name.as_bytes();
        s[0x10..0x10 + d.len().min(0x2f)].copy_from_slice(&d[..d.len().min(0x2f)]);
        s[0x40..0x40 + m.len().min(0x3f)].copy_from_slice(&m[..m.len().min(0x3f)]);
        s
    }
}

fn looks_like_model(s: &str) -> bool {
    s.len() >= 6
        && s.starts_with("HN")
        && s[2..].bytes().all(|b| b.is_ascii_digit() || b.is_ascii_uppercase())
}

/// Runs of printable ASCII of at least `min_len` bytes.
pub fn printable_runs(bytes: &[u8], min_len: usize) -> Vec<String> {
    bytes
        .split(|b| !(0x20..=0x7e).contains(b))
        .filter(|run| run.len() >= min_len)
        .map(|run| String::from_utf8_lossy(run).trim().to_string())
        .filter(|s| s.len() >= min_len)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GptLayout {
    pub disk_size: u64,
    pub protective_mbr_valid: bool,
    pub primary: Option<GptHeader>,
    pub secondary: Option<GptHeader>,
    /// Every slot of the entry array, used or not.
    pub entries: Vec<PartitionEntry>,
    pub secondary_entries_lba: u64,
    pub machine: MachineData,
    pub partition1_range: Option<ByteRange>,
    pub partition2_range: Option<ByteRange>,
}

impl GptLayout {
    pub fn used_entries(&self) -> impl Iterator<Item = &PartitionEntry> {
        self.entries.iter().filter(|e| !e.is_unused())
    }

    /// Header the entries were taken from: the primary when it checks out, else the secondary.
    pub fn authoritative_header(&self) -> &GptHeader {
        match (&self.primary, &self.secondary) {
            (Some(p), _) if p.is_valid() => p,
            (_, Some(s)) if s.is_valid() => s,
            (Some(p), _) => p,
            (None, Some(s)) => s,
            (None, None) => unreachable!("layout always carries at least one header"),
        }
    }

    pub fn disk_guid(&self) -> Guid {
        self.authoritative_header().disk_guid
    }

    /// Start of the unpartitioned tail (the secondary entry array sector).
    pub fn tail_offset(&self) -> u64 {
        self.secondary_entries_lba * SECTOR_SIZE
    }

    /// Deviations from the healthy recorder layout, with region sizes divided by `shrink`.
    pub fn health_warnings(&self, shrink: u64) -> Vec<String> {
        let mut w = Vec::new();
        let used = self.used_entries().count();
        if used != 2 {
            w.push(format!("expected 2 partitions, found {used}"));
        }
        if !self.protective_mbr_valid {
            w.push("protective MBR missing or invalid".into());
        }
        for (name, h) in [("primary", &self.primary), ("secondary", &self.secondary)] {
            match h {
                None => w.push(format!("{name} GPT header not found")),
                Some(h) if !h.header_crc_valid => w.push(format!("{name} GPT header CRC mismatch")),
                Some(h) if !h.entries_crc_valid => {
                    w.push(format!("{name} partition entry array CRC mismatch"))
                }
                _ => {}
            }
        }
        if let Some(p1) = self.partition1_range {
            if p1.offset != START_SECTORS_BYTES {
                w.push(format!("partition 1 starts at {:#x}, expected {:#x}", p1.offset, START_SECTORS_BYTES));
            }
        }
        if let Some(p2) = self.partition2_range {
            if p2.length != PARTITION2_BYTES / shrink {
                w.push(format!("partition 2 is {:#x} bytes, expected {:#x}", p2.length, PARTITION2_BYTES / shrink));
            }
            let tail = self.disk_size.saturating_sub(p2.end());
            if tail != UNPARTITIONED_TAIL_BYTES / shrink {
                w.push(format!("unpartitioned tail is {tail:#x} bytes, expected {:#x}", UNPARTITIONED_TAIL_BYTES / shrink));
            }
        }
        w
    }

    /// Sector-level writes that reproduce MBR, both headers and both entry arrays.
    /// CRC fields in `self` are refreshed. Unused sectors are not touched.
    pub fn encode_structures(&mut self) -> Vec<(u64, Vec<u8>)> {
        let mut array = vec![0u8; (PARTITION_ENTRY_COUNT * PARTITION_ENTRY_SIZE) as usize];
        for (i, e) in self.entries.iter().take(PARTITION_ENTRY_COUNT as usize).enumerate() {
            let sz = PARTITION_ENTRY_SIZE as usize;
            e.encode(&mut array[i * sz..(i + 1) * sz]);
        }
        let entries_crc = crc32fast::hash(&array);
        let mut out = vec![(0, protective_mbr(self.disk_size / SECTOR_SIZE))];
        self.protective_mbr_valid = true;
        for h in [self.primary.as_mut(), self.secondary.as_mut()].into_iter().flatten() {
            h.entries_crc32 = entries_crc;
            h.entries_crc_valid = true;
            let sector = h.encode();
            out.push((h.entry_array_lba * SECTOR_SIZE, array.clone()));
            out.push((h.current_lba * SECTOR_SIZE, sector));
        }
        out
    }
}

pub fn protective_mbr(disk_sectors: u64) -> Vec<u8> {
    let mut s = vec![0u8; SECTOR_SIZE as usize];
    let e = &mut s[446..462];
    e[0] = 0x00;
    e[1..4].copy_from_slice(&[0x00, 0x02, 0x00]);
    e[4] = 0xEE;
    e[5..8].copy_from_slice(&[0xFF, 0xFF, 0xFF]);
    put_u32(e, 8, 1);
    put_u32(e, 12, (disk_sectors.saturating_sub(1)).min(u32::MAX as u64) as u32);
    s[510] = 0x55;
    s[511] = 0xAA;
    s
}

fn mbr_is_protective(sector: &[u8]) -> bool {
    sector[510] == 0x55
        && sector[511] == 0xAA
        && (0..4).any(|i| sector[446 + 16 * i + 4] == 0xEE)
}

fn read_header_at(handle: &ImageHandle, lba: u64) -> Result<Option<GptHeader>, GptError> {
    if (lba + 1) * SECTOR_SIZE > handle.size_bytes() {
        return Ok(None);
    }
    let sector = handle.read_sector(lba)?;
    if &sector[0..8] != GPT_SIGNATURE {
        return Ok(None);
    }
    let mut h = GptHeader::decode(&sector);
    let array_end = (h.entry_array_lba * SECTOR_SIZE).checked_add(h.entry_array_bytes());
    if h.entry_size >= 128 && array_end.is_some_and(|end| end <= handle.size_bytes()) && h.num_entries <= 1024 {
        let array = handle.read_at(ByteRange::new(h.entry_array_lba * SECTOR_SIZE, h.entry_array_bytes()))?;
        h.entries_crc_valid = crc32fast::hash(&array) == h.entries_crc32;
    }
    Ok(Some(h))
}

fn read_entries(handle: &ImageHandle, h: &GptHeader) -> Result<Vec<PartitionEntry>, GptError> {
    if h.entry_size < 128 || h.num_entries > 1024 {
        return Ok(Vec::new());
    }
    let range = ByteRange::new(h.entry_array_lba * SECTOR_SIZE, h.entry_array_bytes());
    if range.end() > handle.size_bytes() {
        return Ok(Vec::new());
    }
    let array = handle.read_at(range)?;
    Ok(array.chunks_exact(h.entry_size as usize).map(PartitionEntry::decode).collect())
}

/// Candidate LBAs for the backup header, most likely first.
fn secondary_candidates(handle: &ImageHandle, primary: Option<&GptHeader>) -> Vec<u64> {
    let sectors = handle.sector_count();
    let mut c = Vec::new();
    if let Some(p) = primary {
        c.push(p.backup_lba);
    }
    for shift in 0..=22 {
        let tail = UNPARTITIONED_TAIL_BYTES >> shift;
        if tail / SECTOR_SIZE <= SECONDARY_HEADER_TAIL_SECTOR || tail > handle.size_bytes() {
            continue;
        }
        c.push((handle.size_bytes() - tail) / SECTOR_SIZE + SECONDARY_HEADER_TAIL_SECTOR);
    }
    if sectors > 0 {
        c.push(sectors - 1);
    }
    c.dedup();
    c
}

/// Parses GPT scaffolding. CRC failures are recorded, not fatal.
pub fn parse_gpt(handle: &ImageHandle) -> Result<GptLayout, GptError> {
    let needed = START_SECTORS_BYTES;
    if handle.size_bytes() < needed {
        return Err(GptError::TruncatedImage { needed, have: handle.size_bytes() });
    }
    let mbr = handle.read_sector(0)?;
    let primary = read_header_at(handle, 1)?;

    let mut secondary = None;
    for lba in secondary_candidates(handle, primary.as_ref()) {
        if lba <= 1 {
            continue;
        }
        if let Some(h) = read_header_at(handle, lba)? {
            if h.current_lba == lba && h.header_crc_valid {
                secondary = Some(h);
                break;
            }
            secondary.get_or_insert(h);
        }
    }
    if primary.is_none() && secondary.is_none() {
        return Err(GptError::NoGptSignature);
    }

    let source = match (&primary, &secondary) {
        (Some(p), _) if p.is_valid() => p,
        (_, Some(s)) if s.is_valid() => s,
        (Some(p), _) => p,
        (None, Some(s)) => s,
        (None, None) => unreachable!(),
    };
    let entries = read_entries(handle, source)?;

    let mut used: Vec<&PartitionEntry> = entries
        .iter()
        .filter(|e| !e.is_unused() && e.first_lba <= e.last_lba)
        .collect();
    used.sort_by_key(|e| e.first_lba);
    let partition1_range = used.first().map(|e| e.byte_range());
    let partition2_range = used.get(1).map(|e| e.byte_range());

    let secondary_entries_lba = secondary
        .as_ref()
        .map(|s| s.entry_array_lba)
        .or_else(|| primary.as_ref().map(|p| p.backup_lba.saturating_sub(SECONDARY_HEADER_TAIL_SECTOR)))
        .unwrap_or(0);

    Ok(GptLayout {
        disk_size: handle.size_bytes(),
        protective_mbr_valid: mbr_is_protective(&mbr),
        primary,
        secondary,
        entries,
        secondary_entries_lba,
        machine: parse_machine_data(handle)?,
        partition1_range,
        partition2_range,
    })
}

pub fn parse_machine_data(handle: &ImageHandle) -> Result<MachineData, GptError> {
    let needed = (MACHINE_DATA_LBA + 1) * SECTOR_SIZE;
    if handle.size_bytes() < needed {
        return Err(GptError::TruncatedImage { needed, have: handle.size_bytes() });
    }
    Ok(MachineData::from_sector(handle.read_sector(MACHINE_DATA_LBA)?))
}

/// Output of [`build_gpt`].
#[derive(Debug, Clone)]
pub struct BuiltGpt {
    pub layout: GptLayout,
    /// The 40 start sectors (MBR, primary header and entries, machine data).
    pub start_sectors: Vec<u8>,
    /// Absolute offset of the unpartitioned tail.
    pub tail_offset: u64,
    /// First 33 sectors of the tail (secondary entries and header).
    pub tail: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct GptBuildParams {
    pub disk_size: u64,
    pub partition1_bytes: u64,
    /// Divisor applied to the 10 GiB partition 2 and the 2 GiB tail.
    pub shrink: u64,
    pub machine_sector: Vec<u8>,
}

/// Lays out a recorder disk: partition 1 from sector 40, partition 2 right
/// before the unpartitioned tail, the tail at the end of the disk.
pub fn build_gpt(params: &GptBuildParams, rng: &mut impl RngCore) -> Result<BuiltGpt, GptError> {
    let shrink = params.shrink.max(1);
    let p2_bytes = PARTITION2_BYTES / shrink;
    let tail_bytes = UNPARTITIONED_TAIL_BYTES / shrink;
    let p1_bytes = params.partition1_bytes / SECTOR_SIZE * SECTOR_SIZE;
    let needed = START_SECTORS_BYTES + p1_bytes + p2_bytes + tail_bytes;
    if params.disk_size < needed
        || !params.disk_size.is_multiple_of(SECTOR_SIZE)
        || tail_bytes / SECTOR_SIZE <= SECONDARY_HEADER_TAIL_SECTOR
        || p1_bytes == 0
    {
        return Err(GptError::InsufficientSize {
            disk: params.disk_size,
            partition1: params.partition1_bytes,
            needed,
        });
    }
    let tail_lba = (params.disk_size - tail_bytes) / SECTOR_SIZE;
    let p2_first = tail_lba - p2_bytes / SECTOR_SIZE;
    let p1_first = START_SECTORS;
    let p1_last = p1_first + p1_bytes / SECTOR_SIZE - 1;

    let mut entries = vec![
        PartitionEntry {
            type_guid: VIDEO_PARTITION_TYPE,
            unique_guid: Guid::random(rng),
            first_lba: p1_first,
            last_lba: p1_last,
            attributes: 0,
            name: "video".into(),
        },
        PartitionEntry {
            type_guid: LINUX_DATA_PARTITION_TYPE,
            unique_guid: Guid::random(rng),
            first_lba: p2_first,
            last_lba: tail_lba - 1,
            attributes: 0,
            name: "system".into(),
        },
    ];
    entries.resize(PARTITION_ENTRY_COUNT as usize, PartitionEntry::unused());

    let disk_guid = Guid::random(rng);
    let secondary_lba = tail_lba + SECONDARY_HEADER_TAIL_SECTOR;
    let header = |current_lba, backup_lba, entry_array_lba| GptHeader {
        signature: *GPT_SIGNATURE,
        revision: GPT_REVISION,
        header_size: GPT_HEADER_SIZE,
        header_crc32: 0,
        current_lba,
        backup_lba,
        first_usable_lba: START_SECTORS,
        last_usable_lba: tail_lba - 1,
        disk_guid,
        entry_array_lba,
        num_entries: PARTITION_ENTRY_COUNT,
        entry_size: PARTITION_ENTRY_SIZE,
        entries_crc32: 0,
        header_crc_valid: false,
        entries_crc_valid: false,
    };

    let mut layout = GptLayout {
        disk_size: params.disk_size,
        protective_mbr_valid: true,
        primary: Some(header(1, secondary_lba, 2)),
        secondary: Some(header(secondary_lba, 1, tail_lba)),
        entries,
        secondary_entries_lba: tail_lba,
        machine: MachineData::from_sector(params.machine_sector.clone()),
        partition1_range: Some(ByteRange::from_bounds(p1_first * SECTOR_SIZE, (p1_last + 1) * SECTOR_SIZE)),
        partition2_range: Some(ByteRange::from_bounds(p2_first * SECTOR_SIZE, tail_lba * SECTOR_SIZE)),
    };

    let tail_offset = tail_lba * SECTOR_SIZE;
    let mut start_sectors = vec![0u8; START_SECTORS_BYTES as usize];
    let mut tail = vec![0u8; ((SECONDARY_HEADER_TAIL_SECTOR + 1) * SECTOR_SIZE) as usize];
    for (off, bytes) in layout.encode_structures() {
        let dst = if off < START_SECTORS_BYTES {
            &mut start_sectors[off as usize..off as usize + bytes.len()]
        } else {
            let rel = (off - tail_offset) as usize;
            &mut tail[rel..rel + bytes.len()]
        };
        dst.copy_from_slice(&bytes);
    }
    let m = (MACHINE_DATA_LBA * SECTOR_SIZE) as usize;
    let sector_len = params.machine_sector.len().min(SECTOR_SIZE as usize);
    start_sectors[m..m + sector_len].copy_from_slice(&params.machine_sector[..sector_len]);

    Ok(BuiltGpt { layout, start_sectors, tail_offset, tail })
}

/// Replaces the disk GUID and every partition's unique GUID; CRCs are
/// recomputed, LBAs untouched.
pub fn regenerate_guids(layout: &GptLayout, rng: &mut impl RngCore) -> GptLayout {
    let mut out = layout.clone();
    let disk_guid = Guid::random(rng);
    for h in [out.primary.as_mut(), out.secondary.as_mut()].into_iter().flatten() {
        h.disk_guid = disk_guid;
    }
    for e in out.entries.iter_mut().filter(|e| !e.is_unused()) {
        e.unique_guid = Guid::random(rng);
    }
    out.encode_structures();
    out
}

/// Writes MBR, both headers and both entry arrays of `layout` to `handle`.
/// Sectors 3-33 and 35-39 are left as they are.
pub fn write_gpt(handle: &mut ImageHandle, layout: &mut GptLayout) -> Result<(), GptError> {
    for (off, bytes) in layout.encode_structures() {
        handle.write_at(off, &bytes)?;
    }
    Ok(())
}

/// True when sectors 3-33 and 35-39 are all zero.
pub fn unused_start_sectors_zero(start_sectors: &[u8]) -> bool {
    let s = SECTOR_SIZE as usize;
    is_zero(&start_sectors[3 * s..34 * s]) && is_zero(&start_sectors[35 * s..40 * s])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Bitwise reflected CRC-32 (poly 0xEDB88320), independent of crc32fast.
    fn crc32_oracle(data: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in data {
            crc ^= b as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
            }
        }
        !crc
    }

    const SHRINK: u64 = 1 << 10;

    fn small_params() -> GptBuildParams {
        let p1 = 4 << 20;
        GptBuildParams {
            disk_size: START_SECTORS_BYTES + p1 + PARTITION2_BYTES / SHRINK + UNPARTITIONED_TAIL_BYTES / SHRINK,
            partition1_bytes: p1,
            shrink: SHRINK,
            machine_sector: MachineData::build_sector("0A1B2C3D4E5F", "HN35080200"),
        }
    }

    fn materialize(dir: &tempfile::TempDir, built: &BuiltGpt, size: u64) -> ImageHandle {
        let mut h = ImageHandle::create_sparse(dir.path().join("gpt.img"), size).unwrap();
        h.write_at(0, &built.start_sectors).unwrap();
        h.write_at(built.tail_offset, &built.tail).unwrap();
        h
    }

    #[test]
    fn crc_oracle_matches_known_vector() {
        assert_eq!(crc32_oracle(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn built_layout_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let params = small_params();
        let built = build_gpt(&params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!(unused_start_sectors_zero(&built.start_sectors));
        let h = materialize(&dir, &built, params.disk_size);
        let parsed = parse_gpt(&h).unwrap();

        assert!(parsed.protective_mbr_valid);
        assert!(parsed.primary.as_ref().unwrap().is_valid());
        assert!(parsed.secondary.as_ref().unwrap().is_valid());
        assert_eq!(parsed.used_entries().count(), 2);
        let p1 = parsed.partition1_range.unwrap();
        assert_eq!(p1.offset, START_SECTORS_BYTES);
        assert_eq!(p1.length, params.partition1_bytes);
        assert_eq!(parsed.partition2_range.unwrap().length, PARTITION2_BYTES / SHRINK);
        assert!(parsed.health_warnings(SHRINK).is_empty(), "{:?}", parsed.health_warnings(SHRINK));
        assert_eq!(parsed.machine.model_name, "HN35080200");
        assert_eq!(parsed.machine.device_id, "0A1B2C3D4E5F");
        assert_eq!(parsed.entries, built.layout.entries);

        // secondary header sits 32 sectors into the tail
        let tail = params.disk_size - UNPARTITIONED_TAIL_BYTES / SHRINK;
        assert_eq!(parsed.secondary.as_ref().unwrap().current_lba * SECTOR_SIZE, tail + 32 * SECTOR_SIZE);
        assert_eq!(parsed.tail_offset(), tail);
    }

    #[test]
    fn stored_crcs_agree_with_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let params = small_params();
        let built = build_gpt(&params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let h = materialize(&dir, &built, params.disk_size);
        let layout = parse_gpt(&h).unwrap();
        for hdr in [layout.primary.unwrap(), layout.secondary.unwrap()] {
            let mut sector = h.read_sector(hdr.current_lba).unwrap();
            let stored = u32_at(&sector, 16);
            sector[16..20].fill(0);
            assert_eq!(crc32_oracle(&sector[..92]), stored);
            let arr = h
                .read_at(ByteRange::new(hdr.entry_array_lba * SECTOR_SIZE, 4 * 128))
                .unwrap();
            assert_eq!(crc32_oracle(&arr), hdr.entries_crc32);
        }
        // primary and secondary arrays are byte-identical
        let a = h.read_at(ByteRange::new(2 * SECTOR_SIZE, 512)).unwrap();
        let b = h.read_at(ByteRange::new(built.tail_offset, 512)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_image_has_no_signature() {
        let dir = tempfile::tempdir().unwrap();
        let h = ImageHandle::create_sparse(dir.path().join("z.img"), 1 << 20).unwrap();
        assert!(matches!(parse_gpt(&h), Err(GptError::NoGptSignature)));
    }

    #[test]
    fn short_image_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let h = ImageHandle::create_sparse(dir.path().join("z.img"), 20 * 512).unwrap();
        assert!(matches!(parse_gpt(&h), Err(GptError::TruncatedImage { .. })));
    }

    #[test]
    fn corrupted_primary_falls_back_to_secondary() {
        let dir = tempfile::tempdir().unwrap();
        let params = small_params();
        let built = build_gpt(&params, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut h = materialize(&dir, &built, params.disk_size);
        // flip one byte of the primary disk GUID
        let off = SECTOR_SIZE + 60;
        let b = h.read_at(ByteRange::new(off, 1)).unwrap()[0];
        h.write_at(off, &[b ^ 0xFF]).unwrap();

        let parsed = parse_gpt(&h).unwrap();
        assert!(!parsed.primary.as_ref().unwrap().header_crc_valid);
        assert!(parsed.secondary.as_ref().unwrap().is_valid());
        assert_eq!(parsed.disk_guid(), built.layout.disk_guid());
        assert_eq!(parsed.partition1_range, built.layout.partition1_range);

        // wipe the primary entirely; the secondary is found by its tail position
        h.write_at(SECTOR_SIZE, &[0u8; 512]).unwrap();
        let parsed = parse_gpt(&h).unwrap();
        assert!(parsed.primary.is_none());
        assert_eq!(parsed.partition2_range, built.layout.partition2_range);
    }

    #[test]
    fn regenerate_guids_changes_only_guids() {
        let dir = tempfile::tempdir().unwrap();
        let params = small_params();
        let built = build_gpt(&params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut h = materialize(&dir, &built, params.disk_size);
        let before = parse_gpt(&h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut once = regenerate_guids(&before, &mut rng);
        let twice = regenerate_guids(&once, &mut rng);
        assert_ne!(once.disk_guid(), twice.disk_guid());

        write_gpt(&mut h, &mut once).unwrap();
        let after = parse_gpt(&h).unwrap();
        assert!(after.primary.as_ref().unwrap().is_valid());
        assert!(after.secondary.as_ref().unwrap().is_valid());
        assert_ne!(after.disk_guid(), before.disk_guid());
        for (a, b) in before.used_entries().zip(after.used_entries()) {
            assert_ne!(a.unique_guid, b.unique_guid);
            assert_eq!((a.first_lba, a.last_lba), (b.first_lba, b.last_lba));
        }
        let (p, q) = (before.primary.unwrap(), after.primary.unwrap());
        assert_eq!(
            (p.current_lba, p.backup_lba, p.first_usable_lba, p.last_usable_lba, p.entry_array_lba),
            (q.current_lba, q.backup_lba, q.first_usable_lba, q.last_usable_lba, q.entry_array_lba)
        );
        assert_ne!(p.header_crc32, q.header_crc32);
        assert_ne!(p.entries_crc32, q.entries_crc32);
    }

    #[test]
    fn insufficient_size() {
        let mut p = small_params();
        p.disk_size -= 512;
        assert!(matches!(
            build_gpt(&p, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(GptError::InsufficientSize { .. })
        ));
    }

    #[test]
    fn machine_data_strings() {
        let zero = MachineData::from_sector(vec![0u8; 512]);
        assert!(zero.device_id.is_empty() && zero.model_name.is_empty());

        let only_model = MachineData::from_sector(MachineData::build_sector("", "HN35080200"));
        assert_eq!(only_model.model_name, "HN35080200");
        assert_eq!(only_model.device_id, "");

        let mut s = vec![0u8; 512];
        s[5..14].copy_from_slice(b"SERIAL-77");
        s[100..110].copy_from_slice(b"HN35080200");
        s[200..203].copy_from_slice(b"abc"); // too short
        let md = MachineData::from_sector(s.clone());
        // oracle: scan for NUL/non-printable separated runs by hand
        let mut expect = Vec::new();
        let mut cur = String::new();
        for &b in &s {
            if (0x20..=0x7e).contains(&b) {
                cur.push(b as char);
            } else {
                if cur.len() >= 4 {
                    expect.push(cur.clone());
                }
                cur.clear();
            }
        }
        assert_eq!(md.strings, expect);
        assert_eq!(md.strings, vec!["SERIAL-77", "HN35080200"]);
        assert_eq!(md.device_id, "SERIAL-77");
    }

    #[test]
    fn guid_text_form() {
        assert_eq!(LINUX_DATA_PARTITION_TYPE.to_string(), "0FC63DAF-8483-4772-8E79-3D69D8477DE4");
    }
}
