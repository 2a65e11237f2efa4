//! HRAD activation dumps.
//!
//! A file is one or more records laid out back to back, each holding one
//! mini-batch of one convolutional layer:
//!
//! ```text
//! "HRAD" | version u32 = 1 | layer_id u32 | filter_count u32 | s u32
//!        | vec_len u32 | class_count u32
//!        | s × class index u32
//!        | filter_count × s × vec_len f32   (filter-major)
//! ```
//!
//! All integers and reals are little-endian. The record index within the file
//! is the mini-batch index.

use std::path::Path;

use crate::error::{Error, Result};
use crate::relevance::ActivationBatch;

pub const HRAD_MAGIC: [u8; 4] = *b"HRAD";
pub const HRAD_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 6 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct HradRecord {
    pub layer_id: u32,
    pub filter_count: u32,
    pub samples: u32,
    pub vec_len: u32,
    pub class_count: u32,
    pub labels: Vec<u32>,
    /// `filter_count × samples × vec_len` values, filter-major.
    pub activations: Vec<f32>,
}

impl HradRecord {
    fn payload_len(&self) -> Option<usize> {
        (self.filter_count as usize)
            .checked_mul(self.samples as usize)?
            .checked_mul(self.vec_len as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self
            .payload_len()
            .ok_or_else(|| Error::invalid("activation payload size overflows"))?;
        if self.activations.len() != expected {
            return Err(Error::invalid(format!(
                "record holds {} activations, header implies {expected}",
                self.activations.len()
            )));
        }
        if self.labels.len() != self.samples as usize {
            return Err(Error::invalid(format!(
                "record holds {} labels for {} samples",
                self.labels.len(),
                self.samples
            )));
        }
        if let Some(y) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&y| y as usize).collect()
    }

    /// Activation samples of one filter, upcast to `f64`.
    pub fn filter_batch(&self, filter: usize, batch_id: usize) -> ActivationBatch {
        let per = self.samples as usize * self.vec_len as usize;
        let data = self.activations[filter * per..(filter + 1) * per]
            .iter()
            .map(|&v| v as f64)
            .collect();
        ActivationBatch {
            layer_id: self.layer_id as usize,
            filter_id: filter,
            batch_id,
            count: self.samples as usize,
            dim: self.vec_len as usize,
            data,
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&HRAD_MAGIC);
        for v in [
            HRAD_VERSION,
            self.layer_id,
            self.filter_count,
            self.samples,
            self.vec_len,
            self.class_count,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for y in &self.labels {
            out.extend_from_slice(&y.to_le_bytes());
        }
        for a in &self.activations {
            out.extend_from_slice(&a.to_le_bytes());
        }
    }
}

pub fn encode_hrad(records: &[HradRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        r.validate()?;
        r.encode_into(&mut out);
    }
    Ok(out)
}

pub fn write_hrad(path: impl AsRef<Path>, records: &[HradRecord]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_hrad(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn le_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, "truncated HRAD header"))
}

pub fn decode_hrad(bytes: &[u8]) -> Result<Vec<HradRecord>> {
    if bytes.is_empty() {
        return Err(Error::format(0, "empty HRAD file"));
    }
    let mut records = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if bytes.len() - pos < HEADER_LEN {
            return Err(Error::format(pos as u64, "truncated HRAD header"));
        }
        if bytes[pos..pos + 4] != HRAD_MAGIC {
            return Err(Error::format(pos as u64, "bad HRAD magic"));
        }
        let version = le_u32(bytes, pos + 4)?;
        if version != HRAD_VERSION {
            return Err(Error::UnsupportedVersion {
                format: "HRAD",
                version,
            });
        }
        let layer_id = le_u32(bytes, pos + 8)?;
        let filter_count = le_u32(bytes, pos + 12)?;
        let samples = le_u32(bytes, pos + 16)?;
        let vec_len = le_u32(bytes, pos + 20)?;
        let class_count = le_u32(bytes, pos + 24)?;
        let body = pos + HEADER_LEN;
        let values = (filter_count as usize)
            .checked_mul(samples as usize)
            .and_then(|v| v.checked_mul(vec_len as usize));
        let needed = values
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(samples as usize * 4));
        let needed = match needed {
            Some(n) => n,
            None => {
                return Err(Error::format(
                    (pos + 12) as u64,
                    "filter_count x s x vec_len overflows",
                ))
            }
        };
        if bytes.len() - body < needed {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated HRAD payload: record needs {needed} bytes after header"),
            ));
        }
        let labels: Vec<u32> = bytes[body..body + samples as usize * 4]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let act_start = body + samples as usize * 4;
        let activations: Vec<f32> = bytes[act_start..body + needed]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(i) = labels.iter().position(|&y| y >= class_count) {
            return Err(Error::format(
                (body + 4 * i) as u64,
                format!("label {} out of range for {class_count} classes", labels[i]),
            ));
        }
        records.push(HradRecord {
            layer_id,
            filter_count,
            samples,
            vec_len,
            class_count,
            labels,
            activations,
        });
        pos = body + needed;
    }
    Ok(records)
}

pub fn read_hrad(path: impl AsRef<Path>) -> Result<Vec<HradRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_hrad(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(filters: u32, s: u32, len: u32) -> HradRecord {
        HradRecord {
            layer_id: 2,
            filter_count: filters,
            samples: s,
            vec_len: len,
            class_count: 3,
            labels: (0..s).map(|i| i % 3).collect(),
            activations: (0..filters * s * len)
                .map(|i| i as f32 * 0.25 - 1.0)
                .collect(),
        }
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hrad");
        let recs = vec![record(2, 4, 3), record(2, 4, 3)];
        write_hrad(&path, &recs).unwrap();
        assert_eq!(read_hrad(&path).unwrap(), recs);
    }

    #[test]
    fn rejects_other_versions() {
        let mut bytes = encode_hrad(&[record(1, 2, 2)]).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_hrad(&bytes),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
    }

    #[test]
    fn rejects_bad_magic_truncation_and_overflow() {
        let good = encode_hrad(&[record(1, 2, 2)]).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_hrad(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode_hrad(&good[..good.len() - 1]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            decode_hrad(&good[..10]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            decode_hrad(&[]),
            Err(Error::Format { offset: 0, .. })
        ));

        let mut huge = good[..HEADER_LEN].to_vec();
        for (i, v) in [u32::MAX, u32::MAX, u32::MAX].iter().enumerate() {
            huge[12 + 4 * i..16 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_hrad(&huge), Err(Error::Format { .. })));
    }

    #[test]
    fn filter_batches_are_filter_major() {
        let r = record(2, 3, 2);
        let b = r.filter_batch(1, 0);
        assert_eq!(b.count, 3);
        assert_eq!(b.dim, 2);
        assert_eq!(b.data[0], r.activations[6] as f64);
    }

    proptest! {
        #[test]
        fn random_payloads_round_trip(
            filters in 1u32..4, s in 1u32..6, len in 1u32..5, seed in any::<u64>()
        ) {
            let mut r = record(filters, s, len);
            let mut x = seed;
            for a in r.activations.iter_mut() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *a = f32::from_bits((x >> 32) as u32 & 0x7f7f_ffff);
            }
            let decoded = decode_hrad(&encode_hrad(std::slice::from_ref(&r)).unwrap()).unwrap();
            prop_assert_eq!(decoded.len(), 1);
            let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&decoded[0].activations), bits(&r.activations));
            prop_assert_eq!(&decoded[0].labels, &r.labels);
        }
    }
}
