//! Flat binary container for descriptor maps.
//!
//! Layout: 16-byte header (magic `FDM1`, u32 height, u32 width, u32
//! order, little-endian) followed by `H*W*N` little-endian 32-bit floats
//! in row-major, channel-last order.

use std::fs;
use std::path::Path;

use crate::io::FormatError;
use crate::maps::DescriptorMap;

const MAGIC: &[u8; 4] = b"FDM1";

pub fn write_fdm(map: &DescriptorMap, path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(16 + map.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.order as u32).to_le_bytes());
    for &v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_fdm(path: &Path) -> Result<DescriptorMap, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(FormatError::malformed("FDM", "missing FDM1 magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (height, width, order) = (u32_at(4), u32_at(8), u32_at(12));
    let expected = height * width * order;
    if bytes.len() != 16 + expected * 4 {
        return Err(FormatError::malformed(
            "FDM",
            format!("expected {} data bytes, found {}", expected * 4, bytes.len() - 16),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DescriptorMap::from_vec(height, width, order, data))
}
