//! Binary tensor file format.
//!
//! Layout: magic bytes `"AVT1"`, `u8` rank, rank × `u64` little-endian
//! extents, then the `f64` little-endian data. Used for dataset files and
//! embedded inside checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Tensor, TensorError};

pub const TENSOR_MAGIC: &[u8; 4] = b"AVT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R, path: &str) -> Result<Tensor, TensorError> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, path)?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::BadMagic {
            path: path.to_string(),
        });
    }
    let mut rank = [0u8; 1];
    read_exact_or_truncated(r, &mut rank, path)?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    let mut buf8 = [0u8; 8];
    for _ in 0..rank[0] {
        read_exact_or_truncated(r, &mut buf8, path)?;
        shape.push(u64::from_le_bytes(buf8) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        read_exact_or_truncated(r, &mut buf8, path)?;
        data.push(f64::from_le_bytes(buf8));
    }
    Tensor::new(shape, data)
}

fn read_exact_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    path: &str,
) -> Result<(), TensorError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TensorError::Truncated {
                path: path.to_string(),
            }
        } else {
            TensorError::Io(e)
        }
    })
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor, TensorError> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let t = Tensor::new(vec![2, 3], vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300, -0.5])
            .unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut &buf[..], "<mem>").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let t = Tensor::from_vec(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();

        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        match read_tensor(&mut &corrupt[..], "<mem>") {
            Err(TensorError::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }

        let truncated = &buf[..buf.len() - 3];
        match read_tensor(&mut &truncated[..], "<mem>") {
            Err(TensorError::Truncated { .. }) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }
}
