//! Parameter checkpoint files: named arrays with shape headers and
//! little-endian 64-bit floats. Round-trips are bit-exact.
//!
//! Layout: magic `ECKP`, u32 version, u32 array count, then per array
//! (in sorted name order): u16 name length, name bytes, u8 rank,
//! u64 dims, f64 values in standard (row-major) layout.

use super::params::ParameterSet;
use super::NnError;
use ndarray::{ArrayD, IxDyn};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ECKP";
const VERSION: u32 = 1;

impl ParameterSet {
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, value) in self.iter() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[value.ndim() as u8])?;
            for d in value.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in value.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::BadCheckpoint("wrong magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut out = ParameterSet::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NnError::BadCheckpoint("name is not utf-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut dims = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                dims.push(read_u64(&mut r)? as usize);
            }
            let total: usize = dims.iter().product();
            let mut values = Vec::with_capacity(total);
            let mut buf = [0u8; 8];
            for _ in 0..total {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            let array = ArrayD::from_shape_vec(IxDyn(&dims), values)
                .map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
            out.insert_dyn(&name, array);
        }
        Ok(out)
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, NnError> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ParameterSet::new();
        params.insert2("layer.w", ndarray::Array2::from_shape_fn((7, 3), |_| rng.random::<f64>() - 0.5));
        params.insert1("layer.b", array![0.1, -0.0, f64::MIN_POSITIVE]);
        params.insert1("other", array![1e300, -1e-300, 0.0]);
        let dir = std::env::temp_dir().join("entangle-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.ckpt");
        params.save(&path).unwrap();
        let loaded = ParameterSet::load(&path).unwrap();
        assert!(params.bitwise_eq(&loaded));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = std::env::temp_dir().join("entangle-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_magic.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(ParameterSet::load(&path), Err(NnError::BadCheckpoint(_))));
        std::fs::remove_file(&path).unwrap();
    }
}
