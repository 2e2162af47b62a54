//! Binary PGM (P5, maxval 255) reading and writing.
//!
//! Masks store 0 = background, 255 = foreground; grayscale images map
//! [0, 1] linearly onto 0..=255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::io::FormatError;
use crate::mask::BinaryMask;

/// Grayscale image with intensities in [0, 1], row-major.
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * self.width + col] = value;
    }
}

fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize), FormatError> {
    // P5, then width, height, maxval as whitespace-separated tokens with
    // optional '#' comments, then a single whitespace before pixel data.
    let malformed = |d: &str| FormatError::malformed("PGM", d);
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(malformed("missing P5 magic"));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| malformed("bad header number"))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing separator before pixel data"));
    }
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(FormatError::malformed(
            "PGM",
            format!("unsupported maxval {maxval}, expected 255"),
        ));
    }
    Ok((width, height, maxval, pos))
}

pub fn write_mask_pgm(mask: &BinaryMask, path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(mask.height() * mask.width() + 32);
    write!(out, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    out.extend(mask.data().iter().map(|&v| if v { 255u8 } else { 0u8 }));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask, FormatError> {
    let bytes = fs::read(path)?;
    let (width, height, _, offset) = parse_header(&bytes)?;
    let expected = width * height;
    let data = &bytes[offset..];
    if data.len() < expected {
        return Err(FormatError::malformed("PGM", "pixel data shorter than header size"));
    }
    let values = data[..expected].iter().map(|&b| b >= 128).collect();
    Ok(BinaryMask::from_vec(height, width, values))
}

pub fn write_gray_pgm(image: &GrayImage, path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(image.pixels.len() + 32);
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    out.extend(
        image
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

pub fn read_gray_pgm(path: &Path) -> Result<GrayImage, FormatError> {
    let bytes = fs::read(path)?;
    let (width, height, _, offset) = parse_header(&bytes)?;
    let expected = width * height;
    let data = &bytes[offset..];
    if data.len() < expected {
        return Err(FormatError::malformed("PGM", "pixel data shorter than header size"));
    }
    let pixels = data[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(GrayImage { height, width, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = BinaryMask::from_fn(5, 7, |r, c| (r + c) % 3 == 0);
        write_mask_pgm(&mask, &path).unwrap();
        let back = read_mask_pgm(&path).unwrap();
        assert_eq!(mask, back);
    }

    #[test]
    fn gray_roundtrip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        let mut img = GrayImage::new(3, 4);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = i as f32 / 11.0;
        }
        write_gray_pgm(&img, &path).unwrap();
        let back = read_gray_pgm(&path).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn header_comments_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# comment\n2 2\n255\n\x00\xff\x80\x7f").unwrap();
        let mask = read_mask_pgm(&path).unwrap();
        assert_eq!(mask.data(), &[false, true, true, false]);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P2\n2 2\n255\n0 0 0 0").unwrap();
        assert!(read_mask_pgm(&path).is_err());
    }
}
