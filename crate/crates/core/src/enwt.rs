//! ENWT: a flat little-endian container of named weight arrays.
//!
//! ```text
//! magic        "ENWT"                 4 bytes
//! version      u32 LE = 1
//! count        u32 LE                 number of records
//! record × count:
//!   name_len   u16 LE
//!   name       UTF-8, name_len bytes
//!   dtype      u8                     0 = f32, 1 = f16
//!   rank       u8
//!   dims       u32 LE × rank
//!   data       product(dims) × dtype size bytes, little-endian
//! ```
//!
//! f16 payloads are produced by round-to-nearest-even and widened back to f32
//! on load.

use std::collections::HashSet;
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};
use crate::tensor::{DType, WeightTensor};
use crate::weights::WeightStore;

pub const MAGIC: &[u8; 4] = b"ENWT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

/// Framing bytes of one record, excluding its payload.
pub fn record_overhead(name_len: usize, rank: usize) -> usize {
    2 + name_len + 1 + 1 + 4 * rank
}

fn dtype_code(dtype: DType) -> u8 {
    match dtype {
        DType::F32 => 0,
        DType::F16 => 1,
    }
}

pub fn encode(w: &WeightStore, dtype: DType) -> Result<Vec<u8>> {
    let payload: usize = w
        .iter()
        .map(|(name, t)| record_overhead(name.len(), t.dims().len()) + t.numel() * dtype.size())
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(w.len())
        .map_err(|_| Error::Domain("too many weight records for ENWT".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in w.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Domain(format!("weight name {name:?} is too long")))?;
        let rank = u8::try_from(t.dims().len())
            .map_err(|_| Error::Domain(format!("weight {name} has too many dims")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype_code(dtype));
        out.push(rank);
        for &d in t.dims() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Domain(format!("weight {name} dim {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match dtype {
            DType::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            DType::F16 => t
                .data()
                .iter()
                .for_each(|v| out.extend_from_slice(&f16::from_f32(*v).to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: needs {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
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

pub fn decode(bytes: &[u8]) -> Result<WeightStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected \"ENWT\"", String::from_utf8_lossy(magic)),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("record count")?;
    let mut store = WeightStore::new();
    let mut seen = HashSet::new();
    for index in 0..count {
        let start = r.pos as u64;
        let name_len = r.u16(&format!("record {index} name length"))? as usize;
        let name_bytes = r.take(name_len, &format!("record {index} name"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| Error::Format {
                offset: start + 2,
                message: format!("record {index} name is not UTF-8: {e}"),
            })?
            .to_string();
        let rec = |what: &str| format!("{what} of record {name:?}");
        let dtype_pos = r.pos as u64;
        let dtype = match r.u8(&rec("dtype"))? {
            0 => DType::F32,
            1 => DType::F16,
            other => {
                return Err(Error::Format {
                    offset: dtype_pos,
                    message: format!("record {name:?} has unknown dtype {other}"),
                })
            }
        };
        let rank = r.u8(&rec("rank"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&rec("dims"))? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
        let Some((numel, nbytes)) = numel else {
            return Err(Error::Format {
                offset: start,
                message: format!("record {name:?} dims {dims:?} overflow"),
            });
        };
        let raw = r.take(nbytes, &rec("payload"))?;
        let data: Vec<f32> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        };
        debug_assert_eq!(data.len(), numel);
        if !seen.insert(name.clone()) {
            return Err(Error::Format {
                offset: start,
                message: format!("duplicate record name {name:?}"),
            });
        }
        let tensor = WeightTensor::new(dims, data).map_err(|e| Error::Format {
            offset: start,
            message: e.to_string(),
        })?;
        store.insert(name, tensor);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: format!("{} trailing bytes after the last record", bytes.len() - r.pos),
        });
    }
    Ok(store)
}

pub fn save_weights(w: &WeightStore, dtype: DType, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(w, dtype)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
