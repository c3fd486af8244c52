//! Binary dataset container.
//!
//! Header (32 bytes, little-endian): magic `CSI1`, `u32` version, `u32` H,
//! `u32` W, `u32` C, `u32` split tag, `u64` sample count. Each sample is its
//! `H*W*C` f32 tensor followed by a 49-byte record: `u8` label, `u32` UE,
//! 3 x `f64` position, `f64` transmit power, `u32` serving AP, `u32` serving
//! RIS, `u32` phase.

use std::path::Path;

use super::{CsiSample, Dataset, SampleMeta, SplitTag};
use crate::error::{Error, Result};
use crate::io::{content_hash, read_file, write_atomic};
use crate::topology::Point3;

pub const DATASET_MAGIC: &[u8; 4] = b"CSI1";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 32;
pub const META_BYTES: usize = 49;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let per = ds.h * ds.w * ds.c * 4 + META_BYTES;
    let mut out = Vec::with_capacity(HEADER_BYTES + ds.len() * per);
    out.extend_from_slice(DATASET_MAGIC);
    for v in [
        DATASET_VERSION,
        ds.h as u32,
        ds.w as u32,
        ds.c as u32,
        ds.tag.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for s in &ds.samples {
        for v in &s.tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let m = &s.meta;
        out.push(s.label);
        out.extend_from_slice(&m.ue.to_le_bytes());
        for v in [m.position.x, m.position.y, m.position.z, m.p_tx_dbm] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [m.serving_ap, m.serving_ris, m.phase_id] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_BYTES {
        if bytes.len() >= 4 && &bytes[..4] != DATASET_MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        return Err(Error::Integrity(format!(
            "dataset header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let (h, w, c) = (
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
    );
    let tag = SplitTag::from_code(u32_at(bytes, 20))
        .ok_or_else(|| Error::Format(format!("unknown split tag {}", u32_at(bytes, 20))))?;
    let n = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let values = h * w * c;
    let per = values
        .checked_mul(4)
        .and_then(|v| v.checked_add(META_BYTES))
        .ok_or_else(|| Error::Format("dataset dimensions overflow".into()))?;
    let expected = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(per))
        .and_then(|b| b.checked_add(HEADER_BYTES))
        .ok_or_else(|| Error::Format("dataset sample count overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "dataset is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let samples = bytes[HEADER_BYTES..]
        .chunks_exact(per)
        .map(|rec| {
            let tensor = rec[..values * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let m = &rec[values * 4..];
            CsiSample {
                tensor,
                label: m[0],
                meta: SampleMeta {
                    ue: u32_at(m, 1),
                    position: Point3::new(f64_at(m, 5), f64_at(m, 13), f64_at(m, 21)),
                    p_tx_dbm: f64_at(m, 29),
                    serving_ap: u32_at(m, 37),
                    serving_ris: u32_at(m, 41),
                    phase_id: u32_at(m, 45),
                },
            }
        })
        .collect();
    Ok(Dataset {
        h,
        w,
        c,
        tag,
        samples,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}

/// Dimensions, class counts and content hash of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSummary {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub tag: SplitTag,
    pub n: usize,
    pub n_legit: usize,
    pub n_eve: usize,
    pub hash: String,
}

pub fn inspect(path: &Path) -> Result<DatasetSummary> {
    let bytes = read_file(path)?;
    let ds = decode_dataset(&bytes)?;
    let (n_legit, n_eve) = ds.class_counts();
    Ok(DatasetSummary {
        h: ds.h,
        w: ds.w,
        c: ds.c,
        tag: ds.tag,
        n: ds.len(),
        n_legit,
        n_eve,
        hash: content_hash(&bytes),
    })
}
