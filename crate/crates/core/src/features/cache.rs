//! Feature cache files: little-endian f32 tensors with a shape header, plus
//! optional PNG export of spectrograms for human inspection.

use crate::error::{Error, Result};
use ndarray::{ArrayD, ArrayViewD, IxDyn};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"RSTF";
const VERSION: u32 = 1;

/// Write a float tensor: magic, version, ndim, dims, then C-order f32 data.
pub fn write_tensor(path: &Path, tensor: ArrayViewD<'_, f32>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensor.ndim() as u32).to_le_bytes())?;
    for d in tensor.shape() {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    // Standard (C-order) traversal regardless of memory layout.
    for v in tensor.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<ArrayD<f32>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |reason: &str| Error::MalformedFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("short header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != VERSION {
        return Err(bad("unsupported version"));
    }
    r.read_exact(&mut u32buf)?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim == 0 || ndim > 8 {
        return Err(bad("implausible rank"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut u32buf)?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = vec![0f32; count];
    let mut fbuf = [0u8; 4];
    for v in data.iter_mut() {
        r.read_exact(&mut fbuf).map_err(|_| bad("truncated payload"))?;
        *v = f32::from_le_bytes(fbuf);
    }
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| bad(&e.to_string()))
}

/// Render channel 0 of a spectrogram tensor as an 8-bit grayscale PNG with
/// frequency increasing upward.
pub fn export_png(path: &Path, tensor: &super::SpectrogramTensor) -> Result<()> {
    let shape = tensor.values.shape();
    let (d0, d1) = (shape[0], shape[1]);
    let mut img = image::GrayImage::new(d1 as u32, d0 as u32);
    for i in 0..d0 {
        for j in 0..d1 {
            let v = tensor.values[(i, j, 0)].clamp(0.0, 1.0);
            let px = (v * 255.0).round() as u8;
            // row 0 of the tensor is -fs/2; draw it at the image bottom.
            img.put_pixel(j as u32, (d0 - 1 - i) as u32, image::Luma([px]));
        }
    }
    img.save(path)
        .map_err(|e| Error::InvalidInput(format!("png encode: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Array3::from_shape_fn((5, 7, 3), |(i, j, k)| (i * 100 + j * 10 + k) as f32 * 0.5);
        let path = dir.path().join("t.f32");
        write_tensor(&path, t.view().into_dyn()).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), &[5, 7, 3]);
        assert_eq!(back.into_dimensionality::<ndarray::Ix3>().unwrap(), t);
    }

    #[test]
    fn corrupt_tensor_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.f32");
        std::fs::write(&path, b"RSTF\x01\x00\x00\x00\x02\x00\x00\x00").unwrap();
        assert!(read_tensor(&path).is_err());
    }
}
