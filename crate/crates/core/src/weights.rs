//! Weight container shared by spatial and JPEG-domain models.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "JDRN"                magic
//! u16                   format version (1)
//! u32                   entry count
//! per entry:
//!   u32 + bytes         name, UTF-8
//!   u8                  dtype code (f32 = 0, f64 = 1)
//!   u32                 rank
//!   u64 × rank          extents
//!   raw                 row-major element data
//! u32 + bytes           metadata, UTF-8 JSON object
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::asm::FrequencyBudget;
use crate::error::{Error, Result};
use crate::model::{InputNormalization, NetworkSpec};
use crate::tensor::{DType, DenseTensor, Scalar};
use crate::transform::QuantTable;

pub const MAGIC: &[u8; 4] = b"JDRN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Spatial,
    Jpeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsMetadata {
    pub domain: Domain,
    pub quant: QuantTable,
    pub budget: FrequencyBudget,
    pub normalization: InputNormalization,
    pub bn_epsilon: f64,
    pub network: NetworkSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightTensor {
    F32(DenseTensor<f32>),
    F64(DenseTensor<f64>),
}

impl WeightTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            WeightTensor::F32(t) => t.shape(),
            WeightTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            WeightTensor::F32(_) => DType::F32,
            WeightTensor::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> DenseTensor<f64> {
        match self {
            WeightTensor::F32(t) => t.cast(),
            WeightTensor::F64(t) => t.clone(),
        }
    }

    /// Converts to `T`, moving the data when the element type already matches.
    pub fn into_scalar<T: Scalar>(self) -> DenseTensor<T> {
        match self {
            WeightTensor::F32(t) => t.into_cast(),
            WeightTensor::F64(t) => t.into_cast(),
        }
    }

    pub fn from_scalar<T: Scalar>(t: DenseTensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => WeightTensor::F32(t.into_cast()),
            DType::F64 => WeightTensor::F64(t.into_cast()),
        }
    }
}

/// Ordered named tensors plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub entries: Vec<(String, WeightTensor)>,
    pub metadata: WeightsMetadata,
}

impl ModelWeights {
    pub fn new(metadata: WeightsMetadata) -> Self {
        ModelWeights { entries: Vec::new(), metadata }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: WeightTensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Option<WeightTensor> {
        let pos = self.entries.iter().position(|(n, _)| n == name)?;
        Some(self.entries.remove(pos).1)
    }

    /// Fetches an entry as `f64`, checking its shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<DenseTensor<f64>> {
        let t = self.get(name).ok_or_else(|| Error::ShapeMismatch(format!("missing weight entry `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::ShapeMismatch(format!("entry `{name}` has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t.to_f64())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[tensor.dtype().code()])?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for &e in tensor.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            match tensor {
                WeightTensor::F32(t) => {
                    for chunk in t.data().chunks(1 << 16) {
                        let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
                        w.write_all(&bytes)?;
                    }
                }
                WeightTensor::F64(t) => {
                    for chunk in t.data().chunks(1 << 15) {
                        let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
                        w.write_all(&bytes)?;
                    }
                }
            }
        }
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| Error::CorruptFile(e.to_string()))?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::VersionMismatch(format!("unknown magic {magic:?}")));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let count = u32::from_le_bytes(read_array(&mut r)?);
        let mut entries = Vec::new();
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let [code] = read_array::<1>(&mut r)?;
            let dtype = DType::from_code(code).ok_or_else(|| Error::CorruptFile(format!("dtype code {code}")))?;
            let rank = u32::from_le_bytes(read_array(&mut r)?) as usize;
            if rank == 0 || rank > 16 {
                return Err(Error::CorruptFile(format!("entry `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&l| l > 0 && l.checked_mul(dtype.size()).is_some())
                .ok_or_else(|| Error::CorruptFile(format!("entry `{name}` has extents {shape:?}")))?;
            let tensor = match dtype {
                DType::F32 => WeightTensor::F32(DenseTensor::new(shape, read_values(&mut r, len, f32::from_le_bytes)?)?),
                DType::F64 => WeightTensor::F64(DenseTensor::new(shape, read_values(&mut r, len, f64::from_le_bytes)?)?),
            };
            entries.push((name, tensor));
        }
        let meta = read_bytes(&mut r)?;
        let metadata = serde_json::from_slice(&meta).map_err(|e| Error::CorruptFile(format!("metadata: {e}")))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::CorruptFile("trailing bytes after metadata".into()));
        }
        Ok(ModelWeights { entries, metadata })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::CorruptFile("unexpected end of file".into()),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut buf = Vec::new();
    let got = r.take(len as u64).read_to_end(&mut buf)?;
    if got != len {
        return Err(Error::CorruptFile("unexpected end of file".into()));
    }
    Ok(buf)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    String::from_utf8(read_bytes(r)?).map_err(|_| Error::CorruptFile("entry name is not UTF-8".into()))
}

fn read_values<V, const N: usize>(r: &mut impl Read, len: usize, decode: fn([u8; N]) -> V) -> Result<Vec<V>> {
    let mut out = Vec::with_capacity(len.min(1 << 24));
    let mut buf = vec![0u8; N * 4096];
    let mut remaining = len;
    while remaining > 0 {
        let n = remaining.min(4096);
        read_exact(r, &mut buf[..n * N])?;
        out.extend(buf[..n * N].chunks_exact(N).map(|c| decode(c.try_into().unwrap())));
        remaining -= n;
    }
    Ok(out)
}
