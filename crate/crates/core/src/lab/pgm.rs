//! 8-bit binary PGM (P5) output for quick visual inspection.

use crate::error::{Result, SdError};
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

/// Writes a `[H,W]` or `[1,H,W]` tensor, affinely mapping `[-1, 1]` to
/// `[0, 255]` and clamping outside values.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    let (h, w, data) = match s.len() {
        2 => (s[0], s[1], image.data()),
        3 if s[0] == 1 => (s[1], s[2], image.data()),
        _ => {
            return Err(SdError::InvalidArgument(format!(
                "pgm expects a single-channel image, got {:?}",
                s
            )))
        }
    };
    write_pgm_scaled(path, data, h, w, -1.0, 1.0)
}

/// Writes raw data with an explicit value range mapped to `[0, 255]`.
pub fn write_pgm_scaled(
    path: &Path,
    data: &[f64],
    h: usize,
    w: usize,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if data.len() != h * w || hi <= lo {
        return Err(SdError::InvalidArgument(
            "pgm: bad dimensions or value range".to_string(),
        ));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let scale = 255.0 / (hi - lo);
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn header_and_affine_mapping() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        let t = Tensor::new(vec![1, 2], vec![-1.0, 1.0]).unwrap();
        write_pgm(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n2 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0u8, 255]);
    }

    #[test]
    fn values_outside_range_are_clamped() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        let t = Tensor::new(vec![1, 3], vec![-5.0, 0.0, 5.0]).unwrap();
        write_pgm(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        assert_eq!(&bytes[n - 3..], &[0u8, 128, 255]);
    }
}
