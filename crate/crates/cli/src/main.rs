mod commands;
mod inspect;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nvrfs::bindiff::{DiffOptions, DEFAULT_BLOCK_SIZE};
use nvrfs::framestream::ExportMode;
use nvrfs::synth::{parse_size, parse_time};

use commands::{CarveArgs, Failure, Output};

#[derive(Parser)]
#[command(name = "nvrfs", version, about = "Inspect, classify, carve and diff NVR disk images")]
struct Cli {
    /// Print the structured JSON report instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Partition 1 layout: auto, full or compact.
    #[arg(long, global = true, default_value = "auto")]
    layout_profile: String,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Raw,
    Annexb,
}

#[derive(Subcommand)]
enum Command {
    /// Print the GPT, machine data and partition 1 metadata.
    Inspect { image: PathBuf },
    /// Report which deletion mechanism the image reflects (exit 3 when one is found).
    Classify { image: PathBuf },
    /// Export stream segments from the video data region.
    Carve {
        image: PathBuf,
        /// Only streams judged deleted (exit 4 when there are none).
        #[arg(long)]
        deleted_only: bool,
        #[arg(long, value_enum, default_value = "raw")]
        mode: Mode,
        #[arg(long, default_value = "carved")]
        out: PathBuf,
        /// Keep streams ending at or after this time.
        #[arg(long, value_parser = time_arg)]
        from_ts: Option<u32>,
        /// Keep streams starting at or before this time.
        #[arg(long, value_parser = time_arg)]
        to_ts: Option<u32>,
        #[arg(long, default_value = "dat")]
        ext: String,
    },
    /// Byte-level comparison of two images.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_parser = size_arg, default_value_t = DEFAULT_BLOCK_SIZE)]
        block_size: u64,
        /// Annotate ranges with partition and region, from the layout of the first image.
        #[arg(long)]
        layout: bool,
        /// Merge ranges closer than this many bytes.
        #[arg(long, value_parser = size_arg, default_value_t = 0)]
        coalesce_gap: u64,
        /// Compare only the common prefix when sizes differ.
        #[arg(long)]
        allow_unequal: bool,
    },
    /// Build a synthetic image and its ground-truth sidecar from a spec file.
    Synth { spec: PathBuf, out: PathBuf },
}

fn time_arg(s: &str) -> Result<u32, String> {
    parse_time(s).ok_or_else(|| format!("not a time: {s:?} (epoch seconds or YYYY-MM-DD HH:MM:SS)"))
}

fn size_arg(s: &str) -> Result<u64, String> {
    parse_size(s).ok_or_else(|| format!("not a size: {s:?}"))
}

fn run(cli: Cli) -> Result<Output, Failure> {
    let profile = commands::profile_arg(&cli.layout_profile)?;
    match cli.cmd {
        Command::Inspect { image } => commands::inspect(&image, profile),
        Command::Classify { image } => commands::classify(&image, profile),
        Command::Carve { image, deleted_only, mode, out, from_ts, to_ts, ext } => {
            let mode = match mode {
                Mode::Raw => ExportMode::RawWithCustomHeaders,
                Mode::Annexb => ExportMode::AnnexB,
            };
            commands::carve_cmd(&image, profile, &CarveArgs { deleted_only, mode, out, from_ts, to_ts, ext })
        }
        Command::Diff { a, b, block_size, layout, coalesce_gap, allow_unequal } => {
            let opts = DiffOptions { block_size, coalesce_gap, allow_unequal, profile };
            commands::diff(&a, &b, opts, layout)
        }
        Command::Synth { spec, out } => commands::synth(&spec, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let body = if json { out.json + "\n" } else { out.text };
            let _ = stdout.write_all(body.as_bytes());
            ExitCode::from(out.code)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
