//! Corpus files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "PDFC" | version u32 | n_joints u32 | count u64 | name_len u32 | name utf-8 | count*n_joints f64
//! ```
//!
//! The text form holds one pose per line as comma-separated decimals, using
//! the shortest representation that round-trips exactly.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::PoseCorpus;
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &[u8; 4] = b"PDFC";
pub const CORPUS_FORMAT_VERSION: u32 = 1;

pub fn write_corpus<W: Write>(mut w: W, robot_name: &str, n_joints: usize, poses: &[f64]) -> Result<()> {
    let count = poses.len() / n_joints;
    w.write_all(CORPUS_MAGIC)?;
    w.write_all(&CORPUS_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n_joints as u32).to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())?;
    w.write_all(&(robot_name.len() as u32).to_le_bytes())?;
    w.write_all(robot_name.as_bytes())?;
    let mut buf = Vec::with_capacity(poses.len() * 8);
    for x in poses {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Header plus rows of a corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFile {
    pub robot_name: String,
    pub n_joints: usize,
    pub poses: Vec<f64>,
}

impl CorpusFile {
    pub fn count(&self) -> usize {
        self.poses.len() / self.n_joints.max(1)
    }

    pub fn into_corpus(self) -> Result<PoseCorpus> {
        PoseCorpus::from_parts(self.robot_name, self.poses, self.n_joints)
    }
}

pub fn read_corpus<R: Read>(mut r: R) -> Result<CorpusFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = ByteCursor::new(&bytes);
    if cur.take(4)? != CORPUS_MAGIC {
        return Err(Error::Format("not a corpus file".into()));
    }
    let version = cur.u32()?;
    if version != CORPUS_FORMAT_VERSION {
        return Err(Error::FormatVersion { found: version, expected: CORPUS_FORMAT_VERSION });
    }
    let n_joints = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    let name_len = cur.u32()? as usize;
    let robot_name =
        String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| Error::Format("robot name is not utf-8".into()))?;
    if n_joints == 0 {
        return Err(Error::Format("zero joints".into()));
    }
    let values = count.checked_mul(n_joints).ok_or_else(|| Error::Format("pose count overflows".into()))?;
    let poses = cur.f64s(values)?;
    cur.finish()?;
    Ok(CorpusFile { robot_name, n_joints, poses })
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &PoseCorpus) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus.robot_name(), corpus.n_joints(), corpus.poses())?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusFile> {
    read_corpus(std::fs::File::open(path)?)
}

/// One comma-separated pose per line.
pub fn poses_to_text(poses: &[f64], n_joints: usize) -> String {
    let mut out = String::new();
    for row in poses.chunks_exact(n_joints) {
        push_row(&mut out, row);
    }
    out
}

pub(crate) fn push_row(out: &mut String, row: &[f64]) {
    for (i, x) in row.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x:?}").expect("writing to a string");
    }
    out.push('\n');
}

/// Parses the text form; blank lines and `#` comments are skipped.
/// Returns row-major values and the row width.
pub fn poses_from_text(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut values = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = parse_reals(line).map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse(format!("line {}: expected {w} values, found {}", lineno + 1, row.len())))
            }
            _ => {}
        }
        values.extend(row);
    }
    Ok((values, width.unwrap_or(0)))
}

pub(crate) fn parse_reals(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect()
}

/// Bounds-checked little-endian reader over a fully buffered file.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!("truncated at byte {}", self.bytes.len()))),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflows".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}
