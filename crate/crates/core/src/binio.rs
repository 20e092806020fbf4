//! Little-endian cursor shared by the binary file readers.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub(crate) fn path(&self) -> &Path {
        &self.path
    }

    pub(crate) fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                path: self.path.clone(),
                detail: format!(
                    "truncated while reading {what}: need {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            }),
        }
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let found = self.take(8, "magic")?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected: String::from_utf8_lossy(expected).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Header dimension that must fit in memory-addressable sizes.
    pub(crate) fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::DimensionMismatch {
            path: self.path.clone(),
            found: format!("{what} = {v}"),
            expected: "a size addressable on this platform".into(),
        })
    }

    /// Byte length of `count` items of `width` bytes, checked against the file size.
    pub(crate) fn payload_len(&self, count: usize, width: usize, what: &str) -> Result<usize> {
        count
            .checked_mul(width)
            .ok_or_else(|| Error::DimensionMismatch {
                path: self.path.clone(),
                found: format!("{count} {what}"),
                expected: "a payload that fits in memory".into(),
            })
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::DimensionMismatch {
                path: self.path.clone(),
                found: format!("{} trailing bytes", self.remaining()),
                expected: "end of file after payload".into(),
            });
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
