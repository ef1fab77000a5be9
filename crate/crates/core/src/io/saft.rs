use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const SAFT_MAGIC: &[u8; 4] = b"SAFT";
pub const SAFT_VERSION: u16 = 1;

/// Element types storable in a SAFT container.
pub trait SaftElem: Copy + Sized {
    const CODE: u8;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl SaftElem for u8 {
    const CODE: u8 = 0;
    const SIZE: usize = 1;
    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn take(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl SaftElem for f32 {
    const CODE: u8 = 1;
    const SIZE: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl SaftElem for f64 {
    const CODE: u8 = 2;
    const SIZE: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: SaftElem> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Rows of a 2-D tensor.
    pub fn from_rows(rows: &[Vec<T>], width: usize) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::config(format!(
                "row of length {} in a {width}-wide matrix",
                r.len()
            )));
        }
        Self::new(vec![rows.len(), width], rows.concat())
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        let w = self.dims.get(1).copied().unwrap_or(1).max(1);
        self.data.chunks(w).map(|c| c.to_vec()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + T::SIZE * self.data.len());
        out.extend_from_slice(SAFT_MAGIC);
        out.extend_from_slice(&SAFT_VERSION.to_le_bytes());
        out.push(T::CODE);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            v.put(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        if bytes.len() < 8 || &bytes[..4] != SAFT_MAGIC {
            return Err(bad("missing SAFT magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SAFT_VERSION {
            return Err(bad(format!("unsupported SAFT version {version}")));
        }
        if bytes[6] != T::CODE {
            return Err(bad(format!(
                "dtype code {} where {} was expected",
                bytes[6],
                T::CODE
            )));
        }
        let ndim = bytes[7] as usize;
        let header = 8 + 4 * ndim;
        if bytes.len() < header {
            return Err(bad("truncated dims".into()));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let n: usize = dims.iter().product();
        if bytes.len() != header + n * T::SIZE {
            return Err(bad(format!(
                "payload of {} bytes, dims {dims:?} need {}",
                bytes.len() - header,
                n * T::SIZE
            )));
        }
        let data = bytes[header..].chunks_exact(T::SIZE).map(T::take).collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
