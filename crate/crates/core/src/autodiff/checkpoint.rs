//! Checkpoint container for named parameter tensors.
//!
//! Flat binary layout, little-endian: magic `FNCK`, u32 tensor count,
//! then per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims,
//! 32-bit float data.

use std::fs;
use std::path::Path;

use super::{Scalar, Tensor};
use crate::io::FormatError;

const MAGIC: &[u8; 4] = b"FNCK";

pub fn write_checkpoint<S: Scalar>(
    path: &Path,
    tensors: &[(String, Tensor<S>)],
) -> Result<(), FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<S>)>, FormatError> {
    let bytes = fs::read(path)?;
    let malformed = |d: String| FormatError::Malformed { format: "FNCK", detail: d };
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(malformed("missing FNCK magic".into()));
    }
    let mut pos = 4usize;
    let read_u32 = |pos: &mut usize| -> Result<u32, FormatError> {
        if *pos + 4 > bytes.len() {
            return Err(FormatError::Malformed { format: "FNCK", detail: "truncated".into() });
        }
        let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
        *pos += 4;
        Ok(v)
    };
    let count = read_u32(&mut pos)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut pos)? as usize;
        if pos + name_len > bytes.len() {
            return Err(malformed("truncated name".into()));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| malformed("name is not UTF-8".into()))?
            .to_string();
        pos += name_len;
        let rank = read_u32(&mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut pos)? as usize);
        }
        let numel: usize = shape.iter().product();
        if pos + numel * 4 > bytes.len() {
            return Err(malformed(format!("truncated data for tensor '{name}'")));
        }
        let data: Vec<S> = bytes[pos..pos + numel * 4]
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        pos += numel * 4;
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.fnck");
        let tensors = vec![
            ("enc.w".to_string(), Tensor::<f32>::from_vec(&[2, 1, 3, 3], (0..18).map(|v| v as f32 * 0.5).collect())),
            ("enc.b".to_string(), Tensor::<f32>::from_vec(&[2], vec![-1.0, 1.0])),
        ];
        write_checkpoint(&path, &tensors).unwrap();
        let back: Vec<(String, Tensor<f32>)> = read_checkpoint(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((an, at), (bn, bt)) in tensors.iter().zip(&back) {
            assert_eq!(an, bn);
            assert_eq!(at.shape(), bt.shape());
            assert_eq!(at.data(), bt.data());
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fnck");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_checkpoint::<f32>(&path).is_err());
    }
}
