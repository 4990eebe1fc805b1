//! Little-endian binary helpers and atomic file writes.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Writes `path` via a sibling temporary file and a rename, so readers never
/// observe a partially written file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let tmp = tmp_path(path);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let res = write(&mut w).and_then(|_| w.flush().map_err(Error::from));
        if let Err(e) = res {
            drop(w);
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub(crate) struct LeWriter<'a> {
    inner: &'a mut dyn Write,
}

impl<'a> LeWriter<'a> {
    pub fn new(inner: &'a mut dyn Write) -> Self {
        LeWriter { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32s<'b>(&mut self, vals: impl IntoIterator<Item = &'b f32>) -> Result<()> {
        let mut buf = Vec::with_capacity(4096);
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
            if buf.len() >= 4096 {
                self.bytes(&buf)?;
                buf.clear();
            }
        }
        self.bytes(&buf)
    }
}

pub(crate) struct LeReader<R> {
    inner: R,
    format: &'static str,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R, format: &'static str) -> Self {
        LeReader { inner, format }
    }

    pub fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::format(self.format, "truncated file"),
            _ => Error::Io(e),
        })
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.bytes(&mut b)?;
        Ok(b)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?];
        self.bytes(&mut raw)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Reads a count field and converts it to `usize`, rejecting absurd sizes.
    pub fn count(&mut self, what: &str, limit: u64) -> Result<usize> {
        let v = self.u64()?;
        if v > limit {
            return Err(self.err(format!("{what} = {v} exceeds limit {limit}")));
        }
        usize::try_from(v).map_err(|_| self.err(format!("{what} does not fit in memory")))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(self.err("trailing bytes after payload")),
        }
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.format, reason)
    }
}
