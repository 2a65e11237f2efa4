//! HRCK binary checkpoints: magic `HRCK`, u32 version, input shape, u32
//! layer count, then per layer a u32 kind tag, its u32 dimensions and, for
//! conv and fc layers, weights followed by biases as little-endian f64.

use std::path::Path;

use crate::error::{Error, Result};

use super::network::{Conv2d, Layer, Linear, NetworkDef, Shape};

pub const HRCK_MAGIC: &[u8; 4] = b"HRCK";
pub const HRCK_VERSION: u32 = 1;

const KIND_CONV: u32 = 1;
const KIND_RELU: u32 = 2;
const KIND_MAXPOOL: u32 = 3;
const KIND_FLATTEN: u32 = 4;
const KIND_LINEAR: u32 = 5;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(net: &NetworkDef) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HRCK_MAGIC);
    put_u32(&mut out, HRCK_VERSION as usize);
    put_u32(&mut out, net.input.channels);
    put_u32(&mut out, net.input.height);
    put_u32(&mut out, net.input.width);
    put_u32(&mut out, net.layers.len());
    for layer in &net.layers {
        match layer {
            Layer::Conv(c) => {
                put_u32(&mut out, KIND_CONV as usize);
                for d in [c.in_channels, c.out_channels, c.kernel, c.stride] {
                    put_u32(&mut out, d);
                }
                put_f64s(&mut out, &c.weight);
                put_f64s(&mut out, &c.bias);
            }
            Layer::Relu => put_u32(&mut out, KIND_RELU as usize),
            Layer::MaxPool { size, stride } => {
                put_u32(&mut out, KIND_MAXPOOL as usize);
                put_u32(&mut out, *size);
                put_u32(&mut out, *stride);
            }
            Layer::Flatten => put_u32(&mut out, KIND_FLATTEN as usize),
            Layer::Linear(l) => {
                put_u32(&mut out, KIND_LINEAR as usize);
                put_u32(&mut out, l.in_features);
                put_u32(&mut out, l.out_features);
                put_f64s(&mut out, &l.weight);
                put_f64s(&mut out, &l.bias);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.pos as u64, format!("{what} size overflows")))?;
        let start = self.pos;
        let b = self.take(len, what)?;
        let values: Vec<f64> = b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(
                start as u64,
                format!("non-finite value in {what}"),
            ));
        }
        Ok(values)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkDef> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != HRCK_MAGIC {
        return Err(Error::format(0, "bad magic, expected HRCK"));
    }
    let version = r.u32("version")? as u32;
    if version != HRCK_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "HRCK",
            version,
        });
    }
    let input = Shape::new(
        r.u32("input channels")?,
        r.u32("input height")?,
        r.u32("input width")?,
    );
    let count = r.u32("layer count")?;
    let mut layers = Vec::new();
    for i in 0..count {
        let at = r.pos as u64;
        let layer = match r.u32("layer kind")? as u32 {
            KIND_CONV => {
                let (cin, cout, k, stride) = (
                    r.u32("conv dims")?,
                    r.u32("conv dims")?,
                    r.u32("conv dims")?,
                    r.u32("conv dims")?,
                );
                let wlen = cout
                    .checked_mul(cin)
                    .and_then(|v| v.checked_mul(k * k))
                    .ok_or_else(|| Error::format(at, "conv size overflows"))?;
                Layer::Conv(Conv2d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                    stride,
                    weight: r.f64s(wlen, "conv weights")?,
                    bias: r.f64s(cout, "conv biases")?,
                })
            }
            KIND_RELU => Layer::Relu,
            KIND_MAXPOOL => Layer::MaxPool {
                size: r.u32("pool size")?,
                stride: r.u32("pool stride")?,
            },
            KIND_FLATTEN => Layer::Flatten,
            KIND_LINEAR => {
                let (fin, fout) = (r.u32("fc dims")?, r.u32("fc dims")?);
                let wlen = fin
                    .checked_mul(fout)
                    .ok_or_else(|| Error::format(at, "fc size overflows"))?;
                Layer::Linear(Linear {
                    in_features: fin,
                    out_features: fout,
                    weight: r.f64s(wlen, "fc weights")?,
                    bias: r.f64s(fout, "fc biases")?,
                })
            }
            other => {
                return Err(Error::format(
                    at,
                    format!("layer {i}: unknown kind tag {other}"),
                ))
            }
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            "trailing bytes after last layer",
        ));
    }
    NetworkDef::new(input, layers)
        .map_err(|e| Error::format(0, format!("inconsistent network: {e}")))
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &NetworkDef) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(net)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkDef> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::network::build_lenet5;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut net = build_lenet5();
        net.init_kaiming(11);
        let bytes = encode_checkpoint(&net);
        assert_eq!(&bytes[..4], b"HRCK");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), net);
    }

    #[test]
    fn rejects_bad_headers() {
        let net = build_lenet5();
        let mut bytes = encode_checkpoint(&net);
        assert!(matches!(
            decode_checkpoint(&bytes[..10]),
            Err(Error::Format { .. })
        ));
        bytes[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::UnsupportedVersion { version: 9, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let net = build_lenet5();
        let bytes = encode_checkpoint(&net);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_checkpoint(&longer).is_err());
    }
}
