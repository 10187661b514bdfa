//! Little-endian binary container shared by checkpoints and reference banks:
//!
//! ```text
//! magic [4] | version u16 | meta_len u32 | meta [meta_len]
//! tensor_count u32 | tensor*
//! tensor = name_len u16 | name | dtype u8 | rank u8 | dims u32*rank | data
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Real};

/// One tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl StoredTensor {
    pub fn from_slice<T: Real>(name: impl Into<String>, shape: Vec<usize>, data: &[T]) -> Self {
        let mut bytes = Vec::with_capacity(data.len() * T::DTYPE.width());
        data.iter().for_each(|v| v.write_le(&mut bytes));
        Self {
            name: name.into(),
            dtype: T::DTYPE,
            shape,
            bytes,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decodes the payload, converting to `T` if the stored width differs.
    pub fn to_vec<T: Real>(&self) -> Vec<T> {
        match self.dtype {
            DType::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => self
                .bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        }
    }

    fn tensor_error(&self, message: impl Into<String>) -> Error {
        Error::Tensor {
            tensor: self.name.clone(),
            message: message.into(),
        }
    }

    /// Errors (naming this tensor) unless the shape is exactly `shape`.
    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(self.tensor_error(format!("shape {:?}, expected {:?}", self.shape, shape)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub version: u16,
    pub meta: Vec<u8>,
    pub tensors: Vec<StoredTensor>,
}

impl Container {
    pub fn encode(&self, magic: &[u8; 4]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            if name.len() > u16::MAX as usize || t.shape.len() > u8::MAX as usize {
                return Err(t.tensor_error("name or rank too long to store"));
            }
            if t.bytes.len() != t.len() * t.dtype.width() {
                return Err(t.tensor_error("payload length disagrees with shape"));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.dtype.code());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                let d = u32::try_from(d).map_err(|_| t.tensor_error("dimension exceeds u32"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&t.bytes);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], magic: &[u8; 4], version: u16) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let m = r.take(4, "magic")?;
        if m != magic {
            return Err(Error::Format(format!(
                "magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = r.u16("version")?;
        if v != version {
            return Err(Error::Format(format!("unsupported version {v}, expected {version}")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = r.take(meta_len, "metadata")?.to_vec();
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let what = format!("tensor #{i} header");
            let name_len = r.u16(&what)? as usize;
            let name = String::from_utf8(r.take(name_len, &what)?.to_vec())
                .map_err(|_| Error::Format(format!("tensor #{i} name is not UTF-8")))?;
            let tensor_err = |message: String| Error::Tensor {
                tensor: name.clone(),
                message,
            };
            let code = r.u8(&name)?;
            let dtype = DType::from_code(code).ok_or_else(|| tensor_err(format!("unknown dtype code {code}")))?;
            let rank = r.u8(&name)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&name)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(dtype.width(), |acc: usize, &d| acc.checked_mul(d))
                .ok_or_else(|| tensor_err("element count overflows".into()))?;
            if r.remaining() < len {
                return Err(tensor_err(format!(
                    "truncated payload: {} of {len} bytes present",
                    r.remaining()
                )));
            }
            let data = r.take(len, &name)?.to_vec();
            tensors.push(StoredTensor {
                name,
                dtype,
                shape,
                bytes: data,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            version: v,
            meta,
            tensors,
        })
    }

    pub fn tensor(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::Tensor {
            tensor: name.to_string(),
            message: "missing".into(),
        })
    }

    pub fn write(&self, path: &Path, magic: &[u8; 4]) -> Result<()> {
        let bytes = self.encode(magic)?;
        std::fs::write(path, bytes).map_err(Error::at_path(path))
    }

    pub fn read(path: &Path, magic: &[u8; 4], version: u16) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
        Self::decode(&bytes, magic, version)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated {what}: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Little-endian field writer/reader for fixed metadata records.
#[derive(Default)]
pub(crate) struct MetaWriter(pub Vec<u8>);

impl MetaWriter {
    pub fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, v: &[u8]) -> Result<()> {
        self.u32(v.len())?;
        self.0.extend_from_slice(v);
        Ok(())
    }
}

pub(crate) struct MetaReader<'a>(Reader<'a>);

impl<'a> MetaReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self(Reader { bytes, pos: 0 })
    }

    pub fn u32(&mut self, what: &str) -> Result<usize> {
        self.0.u32(what).map(|v| v as usize)
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.0.take(8, what)?.try_into().unwrap()))
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.0.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    pub fn finish(&self) -> Result<()> {
        match self.0.remaining() {
            0 => Ok(()),
            n => Err(Error::Format(format!("{n} unexpected metadata bytes"))),
        }
    }
}
