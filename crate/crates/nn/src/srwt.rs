//! `SRWT` weights container.
//!
//! Layout (little endian): magic `SRWT`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u8` dtype code, `u32`
//! rank, `rank × u64` dims, raw values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SRWT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Format(msg.into())
}

/// Writes every tensor as `f64`, so values round-trip bit-exactly.
pub fn write(mut w: impl Write, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| bad(format!("truncated file: {e}")))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

pub fn read(mut r: impl Read) -> Result<BTreeMap<String, Tensor>> {
    if &read_exact::<4>(&mut r)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| bad(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| bad("entry name is not UTF-8"))?;
        let [dtype] = read_exact::<1>(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(read_exact::<8>(&mut r)?);
            shape.push(usize::try_from(d).map_err(|_| bad("dimension too large"))?);
        }
        let n: usize = shape.iter().product();
        let data = match dtype {
            DTYPE_F64 => {
                let mut raw = vec![0u8; n * 8];
                r.read_exact(&mut raw)
                    .map_err(|e| bad(format!("truncated values of `{name}`: {e}")))?;
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
            DTYPE_F32 => {
                let mut raw = vec![0u8; n * 4];
                r.read_exact(&mut raw)
                    .map_err(|e| bad(format!("truncated values of `{name}`: {e}")))?;
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            }
            other => return Err(bad(format!("unknown dtype code {other}"))),
        };
        if out.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(bad(format!("duplicate entry `{name}`")));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(&mut f, tensors)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}
