//! Named f64-array container used for datasets and raw sample dumps.
//!
//! Little-endian layout: magic `SDDAT\x01`, u32 entry count, then per entry
//! a length-prefixed UTF-8 name, u32 ndim, u64 dims, and the raw f64 data.
//! Writes are byte-deterministic for a fixed entry order.

use crate::error::{Result, SdError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"SDDAT\x01";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SdError::InvalidArgument(format!(
                "array shape {:?} implies {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(NamedArray {
            name: name.into(),
            shape,
            data,
        })
    }
}

pub fn write_u32<W: Write>(out: &mut W, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub fn write_u64<W: Write>(out: &mut W, v: u64) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(input: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_string<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(out, s.len() as u32)?;
    out.write_all(s.as_bytes())
}

pub fn read_string<R: Read>(input: &mut R) -> Result<String> {
    let len = read_u32(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|_| SdError::Checkpoint("invalid UTF-8 in name table".to_string()))
}

pub fn write_f64_slice<W: Write>(out: &mut W, data: &[f64]) -> std::io::Result<()> {
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(input: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_arrays(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    write_u32(&mut out, arrays.len() as u32)?;
    for a in arrays {
        write_string(&mut out, &a.name)?;
        write_u32(&mut out, a.shape.len() as u32)?;
        for &d in &a.shape {
            write_u64(&mut out, d as u64)?;
        }
        write_f64_slice(&mut out, &a.data)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_arrays(path: &Path) -> Result<Vec<NamedArray>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SdError::Checkpoint(format!(
            "{}: not an array container (bad magic)",
            path.display()
        )));
    }
    let n = read_u32(&mut input)? as usize;
    let mut arrays = Vec::with_capacity(n);
    for _ in 0..n {
        let name = read_string(&mut input)?;
        let ndim = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut input)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = read_f64_vec(&mut input, numel)?;
        arrays.push(NamedArray { name, shape, data });
    }
    Ok(arrays)
}

pub fn find<'a>(arrays: &'a [NamedArray], name: &str) -> Result<&'a NamedArray> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| SdError::Checkpoint(format!("array '{name}' missing from container")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_and_byte_determinism() {
        let dir = tempdir().unwrap();
        let arrays = vec![
            NamedArray::new("a", vec![2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.5, 0.0]).unwrap(),
            NamedArray::new("b", vec![1], vec![42.0]).unwrap(),
        ];
        let p1 = dir.path().join("x.bin");
        let p2 = dir.path().join("y.bin");
        write_arrays(&p1, &arrays).unwrap();
        write_arrays(&p2, &arrays).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = read_arrays(&p1).unwrap();
        assert_eq!(back, arrays);
        assert!(find(&back, "b").is_ok());
        assert!(find(&back, "missing").is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("junk.bin");
        std::fs::write(&p, b"NOTDAT\x01xxxx").unwrap();
        assert!(read_arrays(&p).is_err());
    }
}
