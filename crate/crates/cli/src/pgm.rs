//! Binary greyscale (P5) images.

use std::fs;
use std::path::Path;

/// Maps `v` from `[lo, hi]` linearly onto 0..=255, clamping outside values.
pub fn to_pixel(v: f64, lo: f64, hi: f64) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel count disagrees with extents");
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_mapping() {
        assert_eq!(to_pixel(0.5, 0.0, 1.0), 128);
        assert_eq!(to_pixel(1.0, 0.0, 2.0), 128);
        assert_eq!(to_pixel(0.0, 0.0, 1.0), 0);
        assert_eq!(to_pixel(1.0, 0.0, 1.0), 255);
        assert_eq!(to_pixel(-3.0, 0.0, 1.0), 0);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        write(&p, 3, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 1, 2, 3, 4, 5]);
    }
}
