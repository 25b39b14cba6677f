//! Binary weights format.
//!
//! ```text
//! "DOCN"  u32 version  u32 header_len  header (JSON)
//! repeated: u32 name_len  name (UTF-8)  u32 ndim  u32 dims[ndim]  f32 data[prod(dims)]
//! ```
//!
//! All integers and floats are little-endian. The header holds the network
//! configuration and, for training checkpoints, an opaque `checkpoint` object.
//! Parameters come first in declaration order, then batch-norm buffers;
//! checkpoints append tensors under the [`OPTIM_PREFIX`] namespace.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DeOccNet, NamedTensor, NetworkConfig};
use crate::nn::{RunningStats, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DOCN";
pub const VERSION: u32 = 1;
/// Tensors under this prefix carry optimizer state and are ignored when loading weights.
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub header: Header,
    pub tensors: Vec<NamedTensor<f32>>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("value fits the u32 fields of the weights format");
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(file: &WeightFile) -> Vec<u8> {
    let header = serde_json::to_vec(&file.header).expect("header serializes");
    let mut out = Vec::with_capacity(
        16 + header.len()
            + file
                .tensors
                .iter()
                .map(|t| 16 + t.name.len() + 4 * t.value.numel())
                .sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, header.len());
    out.extend_from_slice(&header);
    for t in &file.tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.value.rank());
        for &d in t.value.shape() {
            put_u32(&mut out, d);
        }
        for v in t.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                format_err(format!(
                    "truncated file while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<WeightFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(format_err("not a weights file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(format_err(format!("unsupported weights version {version}")));
    }
    let hlen = r.u32("header length")?;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| format_err(format!("bad header: {e}")))?;
    let mut tensors = Vec::new();
    while !r.done() {
        let nlen = r.u32("name length")?;
        let name = core::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| format_err("tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32("rank")?;
        if ndim > 8 {
            return Err(format_err(format!(
                "tensor {name} has implausible rank {ndim}"
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.u32("dimension")?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| format_err(format!("tensor {name} is too large")))?;
            shape.push(d);
        }
        let nbytes = numel
            .checked_mul(4)
            .ok_or_else(|| format_err(format!("tensor {name} is too large")))?;
        let raw = r.take(nbytes, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let value = Tensor::from_vec(shape, data).map_err(|e| format_err(e.to_string()))?;
        tensors.push(NamedTensor { name, value });
    }
    Ok(WeightFile { header, tensors })
}

fn mismatch(field: &str, expected: impl core::fmt::Debug, found: impl core::fmt::Debug) -> Error {
    Error::ConfigMismatch {
        field: field.into(),
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}

/// Fails with [`Error::ConfigMismatch`] naming the first differing field.
pub fn check_compatible(expected: &NetworkConfig, found: &NetworkConfig) -> Result<()> {
    macro_rules! field {
        ($f:ident) => {
            if expected.$f != found.$f {
                return Err(mismatch(stringify!($f), &expected.$f, &found.$f));
            }
        };
    }
    field!(in_channels);
    field!(angular);
    field!(base_depth);
    field!(encoder_levels);
    field!(aspp_rates);
    field!(aspp_groups);
    field!(leaky_slope);
    field!(no_aspp);
    field!(drop_outer_skip);
    Ok(())
}

const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";

fn stats_tensor(v: &[f64]) -> Tensor<f32> {
    Tensor::from_vec([v.len()].to_vec(), v.iter().map(|&x| x as f32).collect())
        .expect("rank-1 tensor")
}

impl DeOccNet<f32> {
    /// Parameters in declaration order followed by batch-norm buffers.
    pub fn named_tensors(&self) -> Vec<NamedTensor<f32>> {
        let mut out: Vec<NamedTensor<f32>> = self.params.to_vec();
        for (name, s) in &self.stats {
            out.push(NamedTensor {
                name: format!("{name}{MEAN_SUFFIX}"),
                value: stats_tensor(&s.mean),
            });
            out.push(NamedTensor {
                name: format!("{name}{VAR_SUFFIX}"),
                value: stats_tensor(&s.var),
            });
        }
        out
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            header: Header {
                config: self.config.clone(),
                checkpoint: None,
            },
            tensors: self.named_tensors(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.to_weight_file())
    }

    /// Loads every parameter and buffer from `file`. The network is left
    /// unchanged unless the whole file is valid.
    pub fn load_weight_file(&mut self, file: &WeightFile) -> Result<()> {
        check_compatible(&self.config, &file.header.config)?;
        let expected = self.named_tensors();
        let provided: Vec<&NamedTensor<f32>> = file
            .tensors
            .iter()
            .filter(|t| !t.name.starts_with(OPTIM_PREFIX))
            .collect();
        for t in &provided {
            if !expected.iter().any(|e| e.name == t.name) {
                return Err(format_err(format!("unexpected tensor {}", t.name)));
            }
        }
        let mut values = Vec::with_capacity(expected.len());
        for e in &expected {
            let mut hits = provided.iter().filter(|t| t.name == e.name);
            let t = hits
                .next()
                .ok_or_else(|| format_err(format!("missing tensor {}", e.name)))?;
            if hits.next().is_some() {
                return Err(format_err(format!("duplicate tensor {}", e.name)));
            }
            if t.value.shape() != e.value.shape() {
                return Err(format_err(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    t.value.shape(),
                    e.value.shape()
                )));
            }
            if !t.value.all_finite() {
                return Err(Error::NonFinite(format!("tensor {}", e.name)));
            }
            values.push(t.value.clone());
        }
        let n = self.params.len();
        let buffers = values.split_off(n);
        self.set_params(values)?;
        for ((_, s), pair) in self.stats.iter_mut().zip(buffers.chunks_exact(2)) {
            let (mean, var) = (&pair[0], &pair[1]);
            *s = RunningStats {
                mean: mean.data().iter().map(|&v| v as f64).collect(),
                var: var.data().iter().map(|&v| v as f64).collect(),
            };
        }
        Ok(())
    }

    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.load_weight_file(&decode(bytes)?)
    }

    /// Builds a network from the configuration stored in `file` and loads it.
    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        let mut net = Self::build(file.header.config.clone(), 0)?;
        net.load_weight_file(file)?;
        Ok(net)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_weight_file(&decode(bytes)?)
    }
}
