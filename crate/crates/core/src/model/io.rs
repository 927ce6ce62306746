//! FGWT weight files.
//!
//! Layout, all integers little-endian:
//! `"FGWT"`, version `u16`, spec fingerprint (8 bytes), tensor count `u32`,
//! then per tensor: path length `u32`, UTF-8 path, rank `u32`, `rank` dims
//! `u32`, and the values as `f32`.

use std::fs;
use std::path::Path;

use super::{ModelError, ModelSpec, ModelWeights, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FGWT";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_weights(weights: &ModelWeights<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + weights.parameter_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&weights.fingerprint);
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for (path, tensor) in weights.entries() {
        out.extend_from_slice(&(path.len() as u32).to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(ModelError::Corrupt("bad magic; not an FGWT weight file".into()));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(ModelError::Corrupt(format!("unsupported format version {version}")));
    }
    let fingerprint: [u8; 8] = r.take(8, "fingerprint")?.try_into().expect("8 bytes");
    let count = r.u32("tensor count")?;
    let mut entries = Vec::new();
    for i in 0..count {
        let len = r.u32("path length")?;
        let path = std::str::from_utf8(r.take(len, "path")?)
            .map_err(|_| ModelError::Corrupt(format!("tensor {i} path is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank == 0 || rank > 8 {
            return Err(ModelError::Corrupt(format!("{path}: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d).filter(|_| d > 0))
            .ok_or_else(|| ModelError::Corrupt(format!("{path}: invalid shape {shape:?}")))?;
        let raw = r.take(numel.saturating_mul(4), "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push((path, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Corrupt(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(ModelWeights::new(fingerprint, entries))
}

pub fn save_weights(weights: &ModelWeights<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(weights)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a weight file and checks it was written for `spec`.
pub fn load_weights(path: &Path, spec: &ModelSpec) -> Result<ModelWeights<f32>> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let weights = decode_weights(&bytes)?;
    let expected = spec.fingerprint();
    if weights.fingerprint != expected {
        return Err(ModelError::FingerprintMismatch {
            expected,
            found: weights.fingerprint,
        });
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, Network, Preset};

    fn mini_weights() -> ModelWeights<f32> {
        Network::<f32>::build(&ModelSpec::preset(Family::Resnet, Preset::Mini), 3)
            .unwrap()
            .into_weights()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = mini_weights();
        let back = decode_weights(&encode_weights(&w)).unwrap();
        assert_eq!(back.fingerprint, w.fingerprint);
        for ((pa, ta), (pb, tb)) in w.entries().iter().zip(back.entries()) {
            assert_eq!(pa, pb);
            assert_eq!(ta.shape(), tb.shape());
            assert!(ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn header_layout() {
        let w = ModelWeights::new(
            *b"abcdefgh",
            vec![("x".into(), Tensor::new(&[2], vec![1.0f32, -0.5]).unwrap())],
        );
        let bytes = encode_weights(&w);
        let mut expected =
            b"FGWT\x01\x00abcdefgh\x01\x00\x00\x00\x01\x00\x00\x00x\x01\x00\x00\x00\x02\x00\x00\x00".to_vec();
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn every_truncation_is_a_typed_error() {
        let bytes = encode_weights(&ModelWeights::new(
            [0; 8],
            vec![(
                "a.weight".into(),
                Tensor::new(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap(),
            )],
        ));
        for cut in 0..bytes.len() {
            assert!(
                matches!(decode_weights(&bytes[..cut]), Err(ModelError::Corrupt(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn corrupted_headers_are_rejected() {
        let mut bytes = encode_weights(&mini_weights());
        bytes[0] = b'X';
        assert!(matches!(decode_weights(&bytes), Err(ModelError::Corrupt(_))));
        let mut bytes = encode_weights(&mini_weights());
        bytes.push(0);
        assert!(matches!(decode_weights(&bytes), Err(ModelError::Corrupt(_))));
        let mut bytes = encode_weights(&mini_weights());
        // blow up the first tensor's path length
        bytes[18..22].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_weights(&bytes), Err(ModelError::Corrupt(_))));
    }

    #[test]
    fn load_checks_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.fgwt");
        save_weights(&mini_weights(), &path).unwrap();
        assert!(load_weights(&path, &ModelSpec::preset(Family::Resnet, Preset::Mini)).is_ok());
        let err = load_weights(&path, &ModelSpec::preset(Family::Xception, Preset::Mini)).unwrap_err();
        assert!(matches!(err, ModelError::FingerprintMismatch { .. }));
    }
}
