//! Structured report shared by all commands.

use std::path::Path;

use nvrfs::gpt::{parse_machine_data, MachineData};
use nvrfs::image::ImageHandle;
use nvrfs::metadata::{render_micros, render_seconds};
use serde::Serialize;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct Fingerprint {
    pub path: String,
    pub size: u64,
    pub device_id: String,
    pub model_name: String,
    pub machine_strings: Vec<String>,
}

impl Fingerprint {
    pub fn of(handle: &ImageHandle) -> Self {
        let machine = parse_machine_data(handle).unwrap_or_else(|_| MachineData::from_sector(Vec::new()));
        Fingerprint {
            path: display(handle.path()),
            size: handle.size_bytes(),
            device_id: machine.device_id,
            model_name: machine.model_name,
            machine_strings: machine.strings,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub tool_version: &'static str,
    pub command: &'static str,
    pub images: Vec<Fingerprint>,
    pub findings: T,
    pub warnings: Vec<String>,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &'static str, images: Vec<Fingerprint>, findings: T) -> Self {
        Report { tool_version: TOOL_VERSION, command, images, findings, warnings: Vec::new() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A stored timestamp: the raw value in hex next to its wall-clock rendering.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub raw: String,
    pub text: String,
}

impl Stamp {
    pub fn secs(v: u32) -> Self {
        Stamp { raw: format!("{v:#010x}"), text: render_seconds(v as u64).text }
    }

    pub fn micros(v: u64) -> Self {
        Stamp { raw: format!("{v:#018x}"), text: render_micros(v).text }
    }
}

/// An offset both absolute and relative to partition 1.
#[derive(Debug, Clone, Serialize)]
pub struct Place {
    pub abs: String,
    pub rel: Option<String>,
}

impl Place {
    pub fn new(abs: u64, p1_base: Option<u64>) -> Self {
        Place {
            abs: format!("{abs:#x}"),
            rel: p1_base.filter(|&b| abs >= b).map(|b| format!("{:#x}", abs - b)),
        }
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
