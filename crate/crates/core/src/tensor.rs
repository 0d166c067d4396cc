//! Dense tensors and the SGT1 binary format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "SGT1" | dtype u8 (0 = f32, 1 = u8) | ndim u8 | ndim x u64 dims | payload
//! ```
//!
//! The payload is row-major. A 2x2 f32 tensor therefore occupies
//! `4 + 1 + 1 + 2*8 + 4*4 = 38` bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGT1";
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }
}

/// A row-major tensor with one to four dimensions.
///
/// Construction validates the shape, so every `DenseTensor` in existence
/// satisfies `product(shape) == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Validation(format!(
                "shape {shape:?} holds {expected} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    /// Narrows `f64` values to `f32`.
    pub fn from_f64_lossy(shape: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::from_f32(shape, data.into_iter().map(|x| x as f32).collect())
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, TensorData::U8(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::Validation("expected an f32 tensor, found u8".into())),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            TensorData::F32(_) => Err(Error::Validation("expected a u8 tensor, found f32".into())),
        }
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        header_len(self.shape.len()) + self.len() * self.dtype().size()
    }
}

fn header_len(ndim: usize) -> usize {
    MAGIC.len() + 2 + 8 * ndim
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_DIMS {
        return Err(Error::Validation(format!(
            "tensor must have 1 to {MAX_DIMS} dimensions, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Validation(format!("zero-sized dimension in shape {shape:?}")));
    }
    Ok(())
}

/// Writes `t` in SGT1 format and returns the number of bytes written.
pub fn write_tensor<W: Write>(t: &DenseTensor, mut sink: W) -> Result<usize> {
    let mut buf = Vec::with_capacity(t.encoded_len());
    buf.extend_from_slice(MAGIC);
    buf.push(t.dtype().code());
    buf.push(t.shape.len() as u8);
    for &d in &t.shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => buf.extend_from_slice(v),
    }
    sink.write_all(&buf)
        .map_err(|e| Error::io("writing SGT1 tensor", e))?;
    Ok(buf.len())
}

fn read_exact_or_format<R: Read>(source: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated stream while reading {what}"))
        } else {
            Error::io(format!("reading {what}"), e)
        }
    })
}

/// Reads one SGT1 tensor from `source`.
pub fn read_tensor<R: Read>(mut source: R) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    read_exact_or_format(&mut source, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"SGT1\"")));
    }
    let mut head = [0u8; 2];
    read_exact_or_format(&mut source, &mut head, "header")?;
    let dtype = DType::from_code(head[0])?;
    let ndim = head[1] as usize;
    if ndim == 0 || ndim > MAX_DIMS {
        return Err(Error::Format(format!("invalid ndim {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut d = [0u8; 8];
        read_exact_or_format(&mut source, &mut d, "dimension")?;
        let d = u64::from_le_bytes(d);
        let d = usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?;
        if d == 0 {
            return Err(Error::Format("zero-sized dimension".into()));
        }
        shape.push(d);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let bytes = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    // Read incrementally so a lying header cannot force a huge allocation.
    let mut payload = Vec::new();
    let got = source
        .by_ref()
        .take(bytes as u64)
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("reading payload", e))?;
    if got != bytes {
        return Err(Error::Format(format!(
            "truncated payload: header declares {count} elements ({bytes} bytes), found {got} bytes"
        )));
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        DType::U8 => TensorData::U8(payload),
    };
    DenseTensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_tensor(t: &DenseTensor, path: &Path) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let n = write_tensor(t, &mut w)?;
    w.flush()
        .map_err(|e| Error::io(format!("flushing {}", path.display()), e))?;
    Ok(n)
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_tensor(BufReader::new(file))
}
