//! Binary feature tables.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PFFEAT\0\x01"          8 bytes
//! table count                   u32
//! per table:
//!   channel id length, bytes    u32, utf-8
//!   dim                         u64
//!   frame count                 u64
//!   per frame:
//!     frame id length, bytes    u32, utf-8
//!     values                    dim × f64
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::temporal::FrameTable;

const MAGIC: &[u8; 8] = b"PFFEAT\0\x01";

/// Per-frame vectors of one feature channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTable {
    pub channel: String,
    pub dim: usize,
    pub rows: FrameTable,
}

impl ChannelTable {
    pub fn new(channel: impl Into<String>, dim: usize) -> Self {
        Self {
            channel: channel.into(),
            dim,
            rows: FrameTable::new(),
        }
    }

    pub fn insert(&mut self, frame_id: impl Into<String>, values: Vec<f64>) -> Result<(), DatasetError> {
        self.check_len(values.len())?;
        self.rows.insert(frame_id.into(), values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn check_len(&self, got: usize) -> Result<(), DatasetError> {
        if got == self.dim {
            Ok(())
        } else {
            Err(DatasetError::DimMismatch {
                channel: self.channel.clone(),
                expected: self.dim,
                got,
            })
        }
    }

    /// CSV text readable as an external channel: header `frame_id,<dim>`.
    pub fn to_text(&self) -> String {
        let mut s = format!("frame_id,{}\n", self.dim);
        for (id, values) in &self.rows {
            s.push_str(id);
            for v in values {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn encode(tables: &[ChannelTable]) -> Result<Vec<u8>, DatasetError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tables.len() as u32).to_le_bytes());
    for t in tables {
        buf.extend_from_slice(&(t.channel.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.channel.as_bytes());
        buf.extend_from_slice(&(t.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(t.rows.len() as u64).to_le_bytes());
        for (id, values) in &t.rows {
            t.check_len(values.len())?;
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn persist_features(tables: &[ChannelTable], path: &Path) -> Result<(), DatasetError> {
    let buf = encode(tables)?;
    fs::write(path, buf).map_err(|e| DatasetError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: impl Into<String>) -> DatasetError {
        DatasetError::BadFeatureFile {
            path: self.path.to_string(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatasetError> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, DatasetError> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.fail(format!("{what} is not utf-8")))
    }

    /// Reads a frame count and rejects counts the remaining bytes cannot hold.
    fn frame_count(&mut self, dim: u64) -> Result<usize, DatasetError> {
        let frames = self.u64("frame count")?;
        let remaining = (self.buf.len() - self.pos) as u64;
        let need = dim
            .checked_mul(8)
            .and_then(|b| b.checked_add(4))
            .and_then(|b| b.checked_mul(frames));
        match need {
            Some(n) if n <= remaining => Ok(frames as usize),
            _ => Err(self.fail(format!("frame count {frames} with dimension {dim} exceeds file size"))),
        }
    }
}

fn decode(buf: &[u8], path: &str) -> Result<Vec<ChannelTable>, DatasetError> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(MAGIC.len(), "magic").ok() != Some(&MAGIC[..]) {
        r.pos = 0;
        return Err(r.fail("not a feature file (bad magic)"));
    }
    let n_tables = r.u32("table count")?;
    let mut tables = Vec::with_capacity(n_tables.min(64) as usize);
    for _ in 0..n_tables {
        let channel = r.string("channel id")?;
        let dim = r.u64("dimension")?;
        let frames = r.frame_count(dim)?;
        let dim = dim as usize;
        let mut table = ChannelTable::new(channel, dim);
        for _ in 0..frames {
            let id = r.string("frame id")?;
            let values = r
                .take(dim * 8, "values")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if table.rows.insert(id.clone(), values).is_some() {
                return Err(r.fail(format!("duplicate frame id {id}")));
            }
        }
        tables.push(table);
    }
    if r.pos != buf.len() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(tables)
}

pub fn load_features(path: &Path) -> Result<Vec<ChannelTable>, DatasetError> {
    let buf = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    decode(&buf, &path.display().to_string())
}

/// Loads the named channel and checks its dimensionality.
pub fn load_channel(path: &Path, channel: &str, dim: usize) -> Result<ChannelTable, DatasetError> {
    let table = load_features(path)?
        .into_iter()
        .find(|t| t.channel == channel)
        .ok_or_else(|| DatasetError::Manifest {
            path: path.display().to_string(),
            msg: format!("no channel {channel}"),
        })?;
    if table.dim != dim {
        return Err(DatasetError::DimMismatch {
            channel: channel.to_string(),
            expected: dim,
            got: table.dim,
        });
    }
    Ok(table)
}
