//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "STRV"            4 bytes magic
//! version           u32 (currently 1)
//! count             u64 number of entries
//! per entry:
//!   name_len        u32
//!   name            name_len bytes, UTF-8
//!   rank            u32
//!   dims            rank × u64
//!   payload         product(dims) × f64
//! ```
//!
//! A scalar has rank 0 and a single f64 payload value.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::DenseTensor;

pub const MAGIC: &[u8; 4] = b"STRV";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version > VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    if version == 0 {
        return Err(Error::Format("checkpoint version 0".into()));
    }
    let count = u64::from_le_bytes(read_array(&mut r)?);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if name_len > 1 << 16 {
            return Err(Error::Format(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let tensor = DenseTensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
        params.push(name, tensor);
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::from(e).at_path(path))?;
    write_checkpoint(std::io::BufWriter::new(file), params).map_err(|e| e.at_path(path))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.push(
            "enc.w1",
            DenseTensor::matrix(2, 3, vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0, 1e300, -7.25]).unwrap(),
        );
        p.push("step", DenseTensor::scalar(42.0));
        p
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        for ((na, a), (nb, b)) in sample().iter().zip(back.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        let mut newer = buf.clone();
        newer[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint(newer.as_slice()),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(Error::Io(_))));
    }
}
