//! IDX (MNIST) file parsing, with transparent gzip decompression.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

impl IdxData {
    /// Images scaled to `[0, 1]` as `[n × rows × cols]`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        match self {
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                let scale = T::from_f64_lossy(1.0 / 255.0);
                Tensor::new(
                    vec![*count, *rows, *cols],
                    pixels.iter().map(|&p| T::from_u8(p).unwrap() * scale).collect(),
                )
            }
            IdxData::Labels(_) => Err(Error::Idx {
                offset: 0,
                detail: "expected an image file, found labels".into(),
            }),
        }
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        match self {
            IdxData::Labels(l) => Ok(l.iter().map(|&v| v as usize).collect()),
            IdxData::Images { .. } => Err(Error::Idx {
                offset: 0,
                detail: "expected a label file, found images".into(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            IdxData::Images { count, .. } => *count,
            IdxData::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
                for d in [count, rows, cols] {
                    out.extend_from_slice(&(*d as u32).to_be_bytes());
                }
                out.extend_from_slice(pixels);
            }
            IdxData::Labels(l) => {
                out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
                out.extend_from_slice(&(l.len() as u32).to_be_bytes());
                out.extend_from_slice(l);
            }
        }
        out
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<usize> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::Idx {
            offset,
            detail: format!("truncated header: need 4 bytes, {} available", bytes.len().saturating_sub(offset)),
        })
}

/// Parses uncompressed or gzip-compressed IDX bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut raw).map_err(|e| Error::Idx {
            offset: 0,
            detail: format!("gzip: {e}"),
        })?;
        return parse_idx(&raw);
    }
    let magic = be_u32(bytes, 0)? as u32;
    let (dims, header) = match magic {
        IMAGES_MAGIC => (vec![be_u32(bytes, 4)?, be_u32(bytes, 8)?, be_u32(bytes, 12)?], 16),
        LABELS_MAGIC => (vec![be_u32(bytes, 4)?], 8),
        other => {
            return Err(Error::Idx {
                offset: 0,
                detail: format!("unsupported magic 0x{other:08x} (expected 0x00000803 or 0x00000801)"),
            })
        }
    };
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Idx {
            offset: header + payload.len().min(expected),
            detail: format!(
                "payload holds {} bytes but dims {dims:?} require {expected}",
                payload.len()
            ),
        });
    }
    Ok(match magic {
        IMAGES_MAGIC => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload.to_vec(),
        },
        _ => IdxData::Labels(payload.to_vec()),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    parse_idx(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_read_directly() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 2, 7, 2];
        assert_eq!(parse_idx(&bytes).unwrap().labels().unwrap(), vec![7, 2]);
    }

    #[test]
    fn images_are_scaled_by_255() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 0, 255];
        let t: Tensor<f32> = parse_idx(&bytes).unwrap().to_tensor().unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn errors_carry_offsets() {
        let bad_magic = [0, 0, 8, 2, 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bad_magic), Err(Error::Idx { offset: 0, .. })));
        let truncated = [0, 0, 8, 1, 0, 0, 0, 3, 1, 2];
        assert!(matches!(parse_idx(&truncated), Err(Error::Idx { offset: 10, .. })));
        let short_header = [0, 0, 8, 3, 0, 0];
        assert!(matches!(parse_idx(&short_header), Err(Error::Idx { offset: 4, .. })));
        let too_long = [0, 0, 8, 1, 0, 0, 0, 1, 1, 2];
        assert!(parse_idx(&too_long).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let raw = [0u8, 0, 8, 1, 0, 0, 0, 3, 4, 5, 6];
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx(&gz).unwrap(), parse_idx(&raw).unwrap());
    }
}
