//! Named-tensor checkpoint codec.
//!
//! Layout (little-endian): magic `EECK`, `u32` version, `u8` value width
//! (4 or 8 bytes), `u32` input height, `u32` input width, `u32` tensor count,
//! then per tensor: `u16` key length, key bytes, `u8` rank, `u32` dims, values.
//! Files use 32-bit values; the in-process federated transport uses 64-bit
//! values so that updates cross the client boundary losslessly.

use std::path::Path;

use super::model::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn width(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Model parameters plus auxiliary named tensors (input statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub extras: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn extra(&self, key: &str) -> Option<&Tensor> {
        self.extras.iter().find(|(k, _)| k == key).map(|(_, t)| t)
    }
}

pub fn encode(ck: &Checkpoint, precision: Precision) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(precision.width());
    out.extend_from_slice(&(ck.params.arch.in_h as u32).to_le_bytes());
    out.extend_from_slice(&(ck.params.arch.in_w as u32).to_le_bytes());
    let n = ck.params.tensors().len() + ck.extras.len();
    out.extend_from_slice(&(n as u32).to_le_bytes());
    // The identity map shortens the key lifetime so both iterators chain.
    #[allow(clippy::map_identity)]
    let named = ck
        .params
        .named()
        .map(|(k, t)| (k, t))
        .chain(ck.extras.iter().map(|(k, t)| (k.as_str(), t)));
    for (key, t) in named {
        let key: &str = key;
        out.extend_from_slice(&(key.len() as u16).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        out.push(t.shape().len() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            match precision {
                Precision::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
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
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| {
                Error::Integrity(format!("checkpoint truncated at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)
        .map_err(|_| Error::Format("checkpoint too short".into()))?
        != CHECKPOINT_MAGIC
    {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let width = r.u8()?;
    if width != 4 && width != 8 {
        return Err(Error::Format(format!("unsupported value width {width}")));
    }
    let in_h = r.u32()? as usize;
    let in_w = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut named = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let klen = r.u16()? as usize;
        let key = String::from_utf8(r.take(klen)?.to_vec())
            .map_err(|_| Error::Format("checkpoint key is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        if rank > 4 {
            return Err(Error::Format(format!("tensor {key} has rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(
            count
                .checked_mul(width as usize)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data: Vec<f64> = if width == 4 {
            raw.chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        if named.iter().any(|(k, _): &(String, Tensor)| *k == key) {
            return Err(Error::Integrity(format!("duplicate tensor key {key}")));
        }
        named.push((key, Tensor::from_vec(&shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(Error::Integrity("trailing bytes after checkpoint".into()));
    }
    let (param_named, extras): (Vec<_>, Vec<_>) = named
        .into_iter()
        .partition(|(k, _)| super::model::PARAM_KEYS.contains(&k.as_str()));
    let params = ModelParams::from_named_infer(in_h, in_w, param_named)?;
    Ok(Checkpoint { params, extras })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode(ck, Precision::F32))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Arch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let params = ModelParams::init(Arch::default(), &mut ChaCha8Rng::seed_from_u64(8));
        Checkpoint {
            params,
            extras: vec![(
                "input_norm.mean".into(),
                Tensor::from_vec(&[2], vec![0.25, -1.5]),
            )],
        }
    }

    #[test]
    fn f64_transport_is_lossless() {
        let ck = sample();
        assert_eq!(decode(&encode(&ck, Precision::F64)).unwrap(), ck);
    }

    #[test]
    fn f32_files_round_trip_bitwise() {
        let ck = sample();
        let bytes = encode(&ck, Precision::F32);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.params, ck.params.clone().rounded_f32());
        assert_eq!(encode(&back, Precision::F32), bytes);
    }

    #[test]
    fn corrupt_and_truncated_inputs_are_rejected() {
        let bytes = encode(&sample(), Precision::F32);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(decode(&bad_version), Err(Error::Format(_))));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn missing_parameter_is_integrity_error() {
        let ck = sample();
        let mut named: Vec<(String, Tensor)> = ck
            .params
            .named()
            .map(|(k, t)| (k.to_string(), t.clone()))
            .collect();
        named.pop();
        assert!(matches!(
            ModelParams::from_named(Arch::default(), named),
            Err(Error::Integrity(_))
        ));
    }
}
