//! Binary tensor container.
//!
//! ```text
//! container := count:u32le record*
//! record    := "SPT1" rank:u8 dim:u32le{rank} name:[u8; 64] payload:f32le{∏dim}
//! ```
//!
//! Names are UTF-8, at most 64 bytes, zero padded.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"SPT1";
pub const NAME_LEN: usize = 64;

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let count =
        u32::try_from(tensors.len()).map_err(|_| Error::Format("too many records".into()))?;
    let payload: usize = tensors
        .iter()
        .map(|(_, t)| 4 * t.len() + 8 * 4 + NAME_LEN)
        .sum();
    let mut out = Vec::with_capacity(4 + payload);
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        if bytes.len() > NAME_LEN || bytes.contains(&0) {
            return Err(Error::Format(format!("invalid tensor name `{name}`")));
        }
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Format("rank above 255".into()))?;
        out.extend_from_slice(MAGIC);
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension above u32".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        let mut padded = [0u8; NAME_LEN];
        padded[..bytes.len()].copy_from_slice(bytes);
        out.extend_from_slice(&padded);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        if r.take(4)? != MAGIC {
            return Err(Error::Format(format!("bad magic in record {i}")));
        }
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let raw = r.take(NAME_LEN)?;
        let end = raw.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
        let name = std::str::from_utf8(&raw[..end])
            .map_err(|_| Error::Format(format!("record {i} name is not UTF-8")))?
            .to_string();
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("record {i} dimensions overflow")))?;
        let payload = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("payload too large".into()))?,
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    super::write_atomic(path, &encode_tensors(tensors)?)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes)
}

pub fn save_tensor(path: &Path, name: &str, tensor: &Tensor) -> Result<()> {
    save_tensors(path, &[(name.to_string(), tensor.clone())])
}

/// Load a single-record file.
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut v = load_tensors(path)?;
    if v.len() != 1 {
        return Err(Error::Format(format!(
            "{} holds {} tensors, expected one",
            path.display(),
            v.len()
        )));
    }
    Ok(v.pop().unwrap().1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_container_round_trips() {
        let bytes = encode_tensors(&[]).unwrap();
        assert_eq!(bytes, vec![0, 0, 0, 0]);
        assert!(decode_tensors(&bytes).unwrap().is_empty());
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new([2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = encode_tensors(&[("ab".into(), t)]).unwrap();
        assert_eq!(&bytes[0..4], &1u32.to_le_bytes());
        assert_eq!(&bytes[4..8], b"SPT1");
        assert_eq!(bytes[8], 2);
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &1u32.to_le_bytes());
        assert_eq!(&bytes[17..19], b"ab");
        assert!(bytes[19..17 + NAME_LEN].iter().all(|&b| b == 0));
        assert_eq!(&bytes[17 + NAME_LEN..21 + NAME_LEN], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 4 + 1 + 8 + NAME_LEN + 8);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let t = Tensor::from_fn([3, 4], |i| i as f32);
        let bytes = encode_tensors(&[("x".into(), t)]).unwrap();
        for cut in [1, 5, 9, 20, bytes.len() - 1] {
            assert!(matches!(
                decode_tensors(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
    }

    #[test]
    fn bad_magic_and_names() {
        let t = Tensor::scalar(1.0);
        let mut bytes = encode_tensors(&[("x".into(), t.clone())]).unwrap();
        bytes[4] = b'X';
        assert!(matches!(decode_tensors(&bytes), Err(Error::Format(_))));
        let long = "n".repeat(NAME_LEN + 1);
        assert!(encode_tensors(&[(long, t)]).is_err());
    }
}
