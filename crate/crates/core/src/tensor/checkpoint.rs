//! EVCK checkpoint files: named `f32` tensors, little-endian throughout.
//!
//! ```text
//! magic "EVCK" | version u32 | count u32
//! per tensor: name_len u32 | name utf-8 | rank u32 | extents u32 * rank | values f32 * prod(extents)
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamSet, Tensor};

pub const EVCK_MAGIC: &[u8; 4] = b"EVCK";
pub const EVCK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_checkpoint<W: Write>(params: &ParamSet<f32>, mut w: W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * params.num_scalars());
    buf.extend_from_slice(EVCK_MAGIC);
    buf.extend_from_slice(&EVCK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if bytes.len() < n {
        return Err(CheckpointError::Format("unexpected end of data".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32, CheckpointError> {
    let b = take(bytes, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet<f32>, CheckpointError> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let mut bytes = raw.as_slice();
    if take(&mut bytes, 4)? != EVCK_MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = take_u32(&mut bytes)?;
    if version != EVCK_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let count = take_u32(&mut bytes)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = take_u32(&mut bytes)? as usize;
        let name = std::str::from_utf8(take(&mut bytes, len)?)
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = take_u32(&mut bytes)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut bytes)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| CheckpointError::Format(format!("tensor `{name}` exceeds file size")))?;
        let data = take(&mut bytes, 4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).expect("length checked above");
        if params.get(&name).is_ok() {
            return Err(CheckpointError::Format(format!(
                "duplicate tensor `{name}`"
            )));
        }
        params.insert(name, t);
    }
    if !bytes.is_empty() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    Ok(params)
}
