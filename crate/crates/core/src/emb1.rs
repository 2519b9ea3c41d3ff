//! The `EMB1` container: a 12-byte header (`"EMB1"`, rows as `u32` LE,
//! cols as `u32` LE) followed by `rows * cols` little-endian `f32`s in
//! row-major order. Embedding sets and distance matrices both use it.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Emb1 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Emb1 {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"EMB1\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Integrity(format!("header {rows}x{cols} overflows")))?;
        if payload.len() != expected {
            return Err(Error::Integrity(format!(
                "header declares {rows}x{cols} ({expected} payload bytes) but payload has {} bytes",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Emb1 { rows, cols, data })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Integrity(format!(
                "{}x{} matrix holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        let rows = u32::try_from(self.rows)
            .map_err(|_| Error::Shape(format!("{} rows exceed u32", self.rows)))?;
        let cols = u32::try_from(self.cols)
            .map_err(|_| Error::Shape(format!("{} cols exceed u32", self.cols)))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}
