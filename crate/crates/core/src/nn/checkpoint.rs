//! Binary checkpoint format.
//!
//! ```text
//! "LPKD"  u8 version=1
//! u32 input_rank, u32 × input_rank dims
//! u32 tap_index
//! u32 layer_count, then per layer: u8 kind, u32 × n kind-specific dims
//!     0 dense (inputs, outputs)   1 conv2d (in, out, kernel, stride)
//!     2 maxpool2d (size, stride)  3 relu   4 maxout (pieces)   5 flatten
//! u64 parameter_count
//! f32 × parameter_count, layer order, weight before bias
//! ```
//! All integers and reals are little-endian. Parameters are stored as 32-bit
//! reals; `f64` networks are narrowed on save.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::nn::network::{Architecture, InitScheme, Network};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"LPKD";
pub const VERSION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_u32(&mut out, net.input_shape.len());
    for &d in &net.input_shape {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.tap_index);
    put_u32(&mut out, net.layers.len());
    for layer in &net.layers {
        match layer.spec {
            LayerSpec::Dense { inputs, outputs } => {
                out.push(0);
                put_u32(&mut out, inputs);
                put_u32(&mut out, outputs);
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                out.push(1);
                for v in [in_channels, out_channels, kernel, stride] {
                    put_u32(&mut out, v);
                }
            }
            LayerSpec::MaxPool2d { size, stride } => {
                out.push(2);
                put_u32(&mut out, size);
                put_u32(&mut out, stride);
            }
            LayerSpec::Relu => out.push(3),
            LayerSpec::Maxout { pieces } => {
                out.push(4);
                put_u32(&mut out, pieces);
            }
            LayerSpec::Flatten => out.push(5),
        }
    }
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
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
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint {
                offset: self.pos,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            detail: "bad magic (expected \"LPKD\")".into(),
        });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let rank = r.u32("input rank")?;
    if rank > 8 {
        return Err(Error::Checkpoint {
            offset: r.pos - 4,
            detail: format!("implausible input rank {rank}"),
        });
    }
    let input_shape = (0..rank).map(|_| r.u32("input dim")).collect::<Result<Vec<_>>>()?;
    let tap_index = r.u32("tap index")?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let spec = match r.u8("layer kind")? {
            0 => LayerSpec::Dense {
                inputs: r.u32("dense inputs")?,
                outputs: r.u32("dense outputs")?,
            },
            1 => LayerSpec::Conv2d {
                in_channels: r.u32("conv in")?,
                out_channels: r.u32("conv out")?,
                kernel: r.u32("conv kernel")?,
                stride: r.u32("conv stride")?,
            },
            2 => LayerSpec::MaxPool2d {
                size: r.u32("pool size")?,
                stride: r.u32("pool stride")?,
            },
            3 => LayerSpec::Relu,
            4 => LayerSpec::Maxout {
                pieces: r.u32("maxout pieces")?,
            },
            5 => LayerSpec::Flatten,
            k => {
                return Err(Error::Checkpoint {
                    offset: at,
                    detail: format!("unknown layer kind {k}"),
                })
            }
        };
        layers.push(spec);
    }
    let arch = Architecture::new(input_shape, layers, tap_index);
    let table_end = r.pos;
    let mut net = Network::<T>::init(&arch, 0, InitScheme::Uniform { low: 0.0, high: 0.0 })
        .map_err(|e| Error::Checkpoint {
            offset: table_end,
            detail: format!("invalid layer table: {e}"),
        })?;
    let b = r.take(8, "parameter count")?;
    let declared = u64::from_le_bytes(b.try_into().unwrap()) as usize;
    if declared != net.param_count() {
        return Err(Error::Checkpoint {
            offset: table_end,
            detail: format!(
                "parameter count {declared} does not match layer table ({})",
                net.param_count()
            ),
        });
    }
    for p in net.params_mut() {
        let raw = r.take(4 * p.len(), "parameter data")?;
        for (dst, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            *dst = T::from_f64_lossy(v as f64);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            offset: r.pos,
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture::new(
            vec![2, 6, 6],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Maxout { pieces: 2 },
                LayerSpec::MaxPool2d { size: 2, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 8, outputs: 3 },
            ],
            4,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Network::<f32>::init(&arch(), 5, InitScheme::Scaled).unwrap();
        let bytes = encode(&net);
        assert_eq!(&bytes[..5], b"LPKD\x01");
        let back: Network<f32> = decode(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let net = Network::<f32>::init(&arch(), 5, InitScheme::Scaled).unwrap();
        let bytes = encode(&net);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).is_err());
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode::<f32>(&long).is_err());
        let mut ver = bytes;
        ver[4] = 2;
        assert!(decode::<f32>(&ver).is_err());
    }
}
