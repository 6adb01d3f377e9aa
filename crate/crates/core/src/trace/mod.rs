//! Activation traces: the simulator's workload.
//!
//! A trace holds, per layer, the non-negative fixed-point activations in the
//! order the dispatcher broadcasts them (row-major `n, c, y, x`).
//!
//! On-disk format (little-endian throughout):
//!
//! ```text
//! magic        4 bytes  "DSTA"
//! version      u16      1
//! base_width   u8       1..=16
//! reserved     u8       0
//! layer_count  u32
//! per layer:
//!   layer_id     u32
//!   name_len     u16, then name_len bytes of UTF-8
//!   dims         4 x u32 (N, C, H, W)
//!   quant        width u8, frac_bits u8, rounding u8 (0 truncate, 1 nearest-even), reserved u8
//!   value_count  u64, must equal N*C*H*W
//!   values       value_count x u16, each < 2^base_width
//! ```

pub mod net;
pub mod synth;

use crate::fixedpoint::{QuantSpec, Rounding, MAX_WIDTH};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub use net::{run_reference, NetConfig, NetError, Tensor, TinyNet};
pub use synth::{gen_synthetic, SpanWeight, SyntheticLayer, SyntheticSpec, SyntheticTrace};

pub const MAGIC: [u8; 4] = *b"DSTA";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"DSTA\"")]
    BadMagic([u8; 4]),
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("layer {layer} value #{index} = {value} does not fit in {base_width} bits")]
    ValueOutOfRange {
        layer: u32,
        index: usize,
        value: u16,
        base_width: u8,
    },
    #[error("malformed trace: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLayer {
    pub layer_id: u32,
    pub name: String,
    /// `(N, C, H, W)`.
    pub dims: [u32; 4],
    pub quant: QuantSpec,
    pub values: Vec<u16>,
}

impl TraceLayer {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map_values(&self, f: impl Fn(u16) -> u16) -> TraceLayer {
        TraceLayer {
            values: self.values.iter().map(|&v| f(v)).collect(),
            name: self.name.clone(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationTrace {
    pub base_width: u8,
    pub layers: Vec<TraceLayer>,
}

impl ActivationTrace {
    pub fn validate(&self) -> Result<(), TraceError> {
        if !(1..=MAX_WIDTH).contains(&self.base_width) {
            return Err(TraceError::Malformed(format!(
                "base width {} outside 1..=16",
                self.base_width
            )));
        }
        let limit = (1u32 << self.base_width) - 1;
        for layer in &self.layers {
            let expected: u64 = layer.dims.iter().map(|&d| d as u64).product();
            if expected != layer.values.len() as u64 {
                return Err(TraceError::Malformed(format!(
                    "layer `{}` dims {:?} imply {} values, found {}",
                    layer.name,
                    layer.dims,
                    expected,
                    layer.values.len()
                )));
            }
            if layer.name.len() > u16::MAX as usize {
                return Err(TraceError::Malformed(format!(
                    "layer name of {} bytes is too long",
                    layer.name.len()
                )));
            }
            layer
                .quant
                .validate()
                .map_err(|e| TraceError::Malformed(format!("layer `{}`: {e}", layer.name)))?;
            if let Some((index, &value)) = layer
                .values
                .iter()
                .enumerate()
                .find(|(_, &v)| v as u32 > limit)
            {
                return Err(TraceError::ValueOutOfRange {
                    layer: layer.layer_id,
                    index,
                    value,
                    base_width: self.base_width,
                });
            }
        }
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&TraceLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TraceError> {
        self.validate()?;
        let total: usize = self
            .layers
            .iter()
            .map(|l| 2 * l.values.len() + 40 + l.name.len())
            .sum();
        let mut out = Vec::with_capacity(12 + total);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.base_width);
        out.push(0);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&layer.layer_id.to_le_bytes());
            out.extend_from_slice(&(layer.name.len() as u16).to_le_bytes());
            out.extend_from_slice(layer.name.as_bytes());
            for d in layer.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(layer.quant.width);
            out.push(layer.quant.frac_bits);
            out.push(match layer.quant.rounding {
                Rounding::Truncate => 0,
                Rounding::NearestEven => 1,
            });
            out.push(0);
            out.extend_from_slice(&(layer.values.len() as u64).to_le_bytes());
            for v in &layer.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TraceError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(TraceError::BadMagic(magic));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(TraceError::UnsupportedVersion(version));
        }
        let base_width = r.u8("base width")?;
        if !(1..=MAX_WIDTH).contains(&base_width) {
            return Err(TraceError::Malformed(format!(
                "base width {base_width} outside 1..=16"
            )));
        }
        r.u8("reserved")?;
        let layer_count = r.u32("layer count")?;
        let limit = (1u32 << base_width) - 1;

        let mut layers = Vec::new();
        for _ in 0..layer_count {
            let layer_id = r.u32("layer id")?;
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "layer name")?)
                .map_err(|e| TraceError::Malformed(format!("layer name is not UTF-8: {e}")))?
                .to_owned();
            let mut dims = [0u32; 4];
            for d in &mut dims {
                *d = r.u32("dims")?;
            }
            let width = r.u8("quant width")?;
            let frac_bits = r.u8("quant frac bits")?;
            let rounding = match r.u8("quant rounding")? {
                0 => Rounding::Truncate,
                1 => Rounding::NearestEven,
                other => {
                    return Err(TraceError::Malformed(format!(
                        "layer `{name}` has unknown rounding code {other}"
                    )))
                }
            };
            r.u8("reserved")?;
            let quant = QuantSpec::new(width, frac_bits, rounding)
                .map_err(|e| TraceError::Malformed(format!("layer `{name}`: {e}")))?;
            let count = r.u64("value count")?;
            let expected: u64 = dims.iter().map(|&d| d as u64).product();
            if count != expected {
                return Err(TraceError::Malformed(format!(
                    "layer `{name}` stores {count} values but dims {dims:?} imply {expected}"
                )));
            }
            let raw = r.take(
                usize::try_from(count)
                    .ok()
                    .and_then(|c| c.checked_mul(2))
                    .ok_or(TraceError::Truncated {
                        offset: r.pos,
                        what: "values",
                    })?,
                "values",
            )?;
            let mut values = Vec::with_capacity(count as usize);
            for (index, pair) in raw.chunks_exact(2).enumerate() {
                let value = u16::from_le_bytes([pair[0], pair[1]]);
                if value as u32 > limit {
                    return Err(TraceError::ValueOutOfRange {
                        layer: layer_id,
                        index,
                        value,
                        base_width,
                    });
                }
                values.push(value);
            }
            layers.push(TraceLayer {
                layer_id,
                name,
                dims,
                quant,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err(TraceError::Malformed(format!(
                "{} trailing bytes after last layer",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { base_width, layers })
    }

    /// SHA-256 of the encoded trace, hex-encoded.
    pub fn checksum(&self) -> Result<String, TraceError> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], TraceError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(TraceError::Truncated {
                offset: self.pos,
                what,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, TraceError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, TraceError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, TraceError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<ActivationTrace, TraceError> {
    ActivationTrace::from_bytes(&fs::read(path)?)
}

pub fn write_trace(trace: &ActivationTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    fs::write(path, trace.to_bytes()?)?;
    Ok(())
}
