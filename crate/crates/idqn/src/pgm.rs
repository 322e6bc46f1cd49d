//! Binary PGM (P5) image output.
//!
//! Grayscale values in `[0, 1]` are clamped and quantized to a maxval of
//! 255. PGM is the one image format every viewer and diff tool can read
//! without a decoder dependency.

use crate::error::Result;
use std::io::Write;
use std::path::Path;

/// Encodes one grayscale image (row-major, `width * height` pixels).
pub fn encode(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend(
        pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(width, height, pixels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_quantization() {
        let bytes = encode(2, 1, &[0.0, 1.0]);
        assert!(bytes.starts_with(b"P5\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 2..], &[0u8, 255u8]);
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let bytes = encode(2, 1, &[-0.5, 1.5]);
        assert_eq!(&bytes[bytes.len() - 2..], &[0u8, 255u8]);
    }

    #[test]
    fn mid_gray_rounds() {
        let bytes = encode(1, 1, &[0.5]);
        assert_eq!(*bytes.last().unwrap(), 128u8); // 127.5 rounds up
    }
}
