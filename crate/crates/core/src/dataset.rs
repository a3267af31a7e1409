//! Labeled dataset files.
//!
//! ```text
//! "PDFL" | version u32 | n_joints u32 | count u64 | count * (n_joints f64, label f64, source u8)
//! ```
//!
//! Integers and floats are little-endian; `source` is 0 = on, 1 = near, 2 = interp.

use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::io::ByteCursor;
use crate::error::{Error, Result};
use crate::sampler::{LabeledSample, Source};

pub const DATASET_MAGIC: &[u8; 4] = b"PDFL";
pub const DATASET_FORMAT_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(mut w: W, n_joints: usize, samples: &[LabeledSample]) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + samples.len() * (8 * n_joints + 9));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n_joints as u32).to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.q.len() != n_joints {
            return Err(Error::DimensionMismatch { expected: n_joints, found: s.q.len() });
        }
        for x in &s.q {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&s.label.to_le_bytes());
        buf.push(s.source as u8);
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Returns the joint count and the samples.
pub fn read_dataset<R: Read>(mut r: R) -> Result<(usize, Vec<LabeledSample>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = ByteCursor::new(&bytes);
    if cur.take(4)? != DATASET_MAGIC {
        return Err(Error::Format("not a labeled dataset file".into()));
    }
    let version = cur.u32()?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::FormatVersion { found: version, expected: DATASET_FORMAT_VERSION });
    }
    let n_joints = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    let record = 8 * n_joints + 9;
    if count.checked_mul(record) != Some(bytes.len() - 20) {
        return Err(Error::Format(format!("expected {count} records of {record} bytes")));
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let q = cur.f64s(n_joints)?;
        let label = cur.f64()?;
        let tag = cur.u8()?;
        let source = Source::from_u8(tag).ok_or_else(|| Error::Format(format!("unknown source tag {tag}")))?;
        samples.push(LabeledSample { q, label, source });
    }
    cur.finish()?;
    Ok((n_joints, samples))
}

pub fn save_dataset(path: impl AsRef<Path>, n_joints: usize, samples: &[LabeledSample]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, n_joints, samples)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(usize, Vec<LabeledSample>)> {
    read_dataset(std::fs::File::open(path)?)
}
