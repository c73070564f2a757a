//! VTF: the bit-exact tensor interchange format.
//!
//! Layout: magic "VTF1" | dtype code u8 (0 = f32, 1 = f64) | rank u8 |
//! reserved u16 = 0 | rank extents as little-endian u64 | payload of
//! row-major little-endian values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::{DType, Tensor};

use super::VolumeError;

const MAGIC: &[u8; 4] = b"VTF1";
const MAX_RANK: u8 = 8;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_vtf(t: &Tensor, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let path = path.as_ref();
    if t.rank() > MAX_RANK as usize {
        return Err(VolumeError::RankTooLarge(t.rank() as u8));
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = |buf: &[u8]| w.write_all(buf).map_err(io_err(path));
    write(MAGIC)?;
    let dtype_code = match t.dtype() {
        DType::F32 => 0u8,
        DType::F64 => 1u8,
    };
    w.write_all(&[dtype_code, t.rank() as u8, 0, 0])
        .map_err(io_err(path))?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes()).map_err(io_err(path))?;
    }
    w.write_all(&t.le_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_vtf(path: impl AsRef<Path>) -> Result<Tensor, VolumeError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 8];
    read_exact(&mut r, &mut header, path)?;
    if &header[0..4] != MAGIC {
        return Err(VolumeError::BadMagic);
    }
    let dtype = match header[4] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(VolumeError::BadDType(other)),
    };
    let rank = header[5];
    if rank > MAX_RANK {
        return Err(VolumeError::RankTooLarge(rank));
    }
    if header[6] != 0 || header[7] != 0 {
        return Err(VolumeError::BadReserved);
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let mut buf = [0u8; 8];
        read_exact(&mut r, &mut buf, path)?;
        let extent = u64::from_le_bytes(buf);
        let extent: usize = extent.try_into().map_err(|_| VolumeError::ExtentOverflow)?;
        shape.push(extent);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or(VolumeError::ExtentOverflow)?;
    let payload_len = len
        .checked_mul(dtype.size_bytes())
        .ok_or(VolumeError::ExtentOverflow)?;
    let mut payload = vec![0u8; payload_len];
    read_exact(&mut r, &mut payload, path)?;
    let tensor = match dtype {
        DType::F32 => {
            let vals = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Tensor::from_f32(&shape, vals)?
        }
        DType::F64 => {
            let vals = payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect();
            Tensor::from_f64(&shape, vals)?
        }
    };
    Ok(tensor)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<(), VolumeError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(VolumeError::Truncated {
                    expected: buf.len(),
                    got: filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => {
                return Err(VolumeError::Io {
                    path: path.to_path_buf(),
                    source: e,
                })
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::Rng;
    use std::io::Write as _;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tmp();
        let mut rng = Rng::new(10);
        let data32: Vec<f32> = (0..24).map(|_| rng.normal() as f32).collect();
        let t32 = Tensor::from_f32(&[2, 3, 4], data32).unwrap();
        let p = dir.path().join("a.vtf");
        write_vtf(&t32, &p).unwrap();
        assert_eq!(read_vtf(&p).unwrap(), t32);

        let data64: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let t64 = Tensor::from_f64(&[6], data64).unwrap();
        let p = dir.path().join("b.vtf");
        write_vtf(&t64, &p).unwrap();
        assert_eq!(read_vtf(&p).unwrap(), t64);
    }

    #[test]
    fn rank0_scalar_round_trips() {
        let dir = tmp();
        let t = Tensor::from_f64(&[], vec![0.25]).unwrap();
        let p = dir.path().join("s.vtf");
        write_vtf(&t, &p).unwrap();
        assert_eq!(read_vtf(&p).unwrap(), t);
    }

    #[test]
    fn corrupted_magic_reports_bad_magic() {
        let dir = tmp();
        let t = Tensor::zeros(&[2, 2], crate::tensor::DType::F32);
        let p = dir.path().join("m.vtf");
        write_vtf(&t, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_vtf(&p), Err(VolumeError::BadMagic)));
    }

    #[test]
    fn truncated_payload_detected() {
        let dir = tmp();
        let t = Tensor::zeros(&[4, 4], crate::tensor::DType::F64);
        let p = dir.path().join("t.vtf");
        write_vtf(&t, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(read_vtf(&p), Err(VolumeError::Truncated { .. })));
    }

    #[test]
    fn oversized_rank_rejected() {
        let dir = tmp();
        let p = dir.path().join("r.vtf");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(b"VTF1").unwrap();
        f.write_all(&[0u8, 9, 0, 0]).unwrap();
        drop(f);
        assert!(matches!(read_vtf(&p), Err(VolumeError::RankTooLarge(9))));
    }

    #[test]
    fn extent_overflow_rejected() {
        let dir = tmp();
        let p = dir.path().join("o.vtf");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(b"VTF1").unwrap();
        f.write_all(&[0u8, 2, 0, 0]).unwrap();
        f.write_all(&u64::MAX.to_le_bytes()).unwrap();
        f.write_all(&2u64.to_le_bytes()).unwrap();
        drop(f);
        assert!(matches!(read_vtf(&p), Err(VolumeError::ExtentOverflow)));
    }
}
