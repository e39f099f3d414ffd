//! Sector-addressed random access over raw disk images.
//!
//! Images are never loaded whole. Reads are positional (`pread`) so a single
//! [`ImageHandle`] can be shared across threads for reading; writing needs
//! `&mut` access.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub const SECTOR_SIZE: u64 = 512;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image not found: {0}")]
    NotFound(PathBuf),
    #[error("image size {size} is not a multiple of {SECTOR_SIZE} bytes")]
    NotSectorAligned { size: u64 },
    #[error("permission denied: {0}")]
    PermissionDenied(PathBuf),
    #[error("range {offset:#x}+{length:#x} is outside the image ({size:#x} bytes)")]
    OutOfBounds { offset: u64, length: u64, size: u64 },
    #[error("image is opened read-only")]
    ReadOnly,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Absolute byte range inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ByteRange {
    pub offset: u64,
    pub length: u64,
}

impl ByteRange {
    pub const fn new(offset: u64, length: u64) -> Self {
        ByteRange { offset, length }
    }

    /// Range covering `[start, end)`. `end` must not precede `start`.
    pub fn from_bounds(start: u64, end: u64) -> Self {
        debug_assert!(end >= start);
        ByteRange { offset: start, length: end - start }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.length
    }

    pub fn contains(&self, pos: u64) -> bool {
        pos >= self.offset && pos < self.end()
    }

    pub fn overlaps(&self, other: &ByteRange) -> bool {
        self.offset < other.end() && other.offset < self.end()
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }
}

#[derive(Debug)]
pub struct ImageHandle {
    file: File,
    path: PathBuf,
    size_bytes: u64,
    writable: bool,
}

fn map_open_error(err: io::Error, path: &Path) -> ImageError {
    match err.kind() {
        io::ErrorKind::NotFound => ImageError::NotFound(path.to_path_buf()),
        io::ErrorKind::PermissionDenied => ImageError::PermissionDenied(path.to_path_buf()),
        _ => ImageError::Io(err),
    }
}

impl ImageHandle {
    /// Opens an existing raw image. The size must be a whole number of sectors.
    pub fn open(path: impl AsRef<Path>, writable: bool) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .read(true)
            .write(writable)
            .open(path)
            .map_err(|e| map_open_error(e, path))?;
        let size_bytes = file.metadata()?.len();
        if size_bytes % SECTOR_SIZE != 0 {
            return Err(ImageError::NotSectorAligned { size: size_bytes });
        }
        Ok(ImageHandle { file, path: path.to_path_buf(), size_bytes, writable })
    }

    /// Creates (or truncates) a sparse image of `size_bytes`; unwritten areas read as zero.
    pub fn create_sparse(path: impl AsRef<Path>, size_bytes: u64) -> Result<Self, ImageError> {
        let path = path.as_ref();
        if !size_bytes.is_multiple_of(SECTOR_SIZE) {
            return Err(ImageError::NotSectorAligned { size: size_bytes });
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| map_open_error(e, path))?;
        file.set_len(size_bytes)?;
        Ok(ImageHandle { file, path: path.to_path_buf(), size_bytes, writable: true })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    pub fn sector_size(&self) -> u64 {
        SECTOR_SIZE
    }

    pub fn sector_count(&self) -> u64 {
        self.size_bytes / SECTOR_SIZE
    }

    pub fn is_writable(&self) -> bool {
        self.writable
    }

    fn check_range(&self, offset: u64, length: u64) -> Result<(), ImageError> {
        match offset.checked_add(length) {
            Some(end) if end <= self.size_bytes => Ok(()),
            _ => Err(ImageError::OutOfBounds { offset, length, size: self.size_bytes }),
        }
    }

    pub fn read_at(&self, range: ByteRange) -> Result<Vec<u8>, ImageError> {
        self.check_range(range.offset, range.length)?;
        let mut buf = vec![0u8; range.length as usize];
        self.file.read_exact_at(&mut buf, range.offset)?;
        Ok(buf)
    }

    /// Fills `buf` from `offset`.
    pub fn read_into(&self, offset: u64, buf: &mut [u8]) -> Result<(), ImageError> {
        self.check_range(offset, buf.len() as u64)?;
        self.file.read_exact_at(buf, offset)?;
        Ok(())
    }

    pub fn read_sector(&self, lba: u64) -> Result<Vec<u8>, ImageError> {
        self.read_at(ByteRange::new(lba * SECTOR_SIZE, SECTOR_SIZE))
    }

    pub fn write_at(&mut self, offset: u64, bytes: &[u8]) -> Result<(), ImageError> {
        if !self.writable {
            return Err(ImageError::ReadOnly);
        }
        self.check_range(offset, bytes.len() as u64)?;
        self.file.write_all_at(bytes, offset)?;
        Ok(())
    }

    /// Writes zeros over `range` in bounded chunks.
    pub fn zero_range(&mut self, range: ByteRange) -> Result<(), ImageError> {
        const CHUNK: u64 = 1 << 20;
        if !self.writable {
            return Err(ImageError::ReadOnly);
        }
        self.check_range(range.offset, range.length)?;
        let zeros = vec![0u8; CHUNK.min(range.length) as usize];
        let mut pos = range.offset;
        while pos < range.end() {
            let n = CHUNK.min(range.end() - pos) as usize;
            self.file.write_all_at(&zeros[..n], pos)?;
            pos += n as u64;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ImageError> {
        self.file.sync_data()?;
        Ok(())
    }
}
