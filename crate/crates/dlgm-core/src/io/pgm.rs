//! Binary PGM (P5) image grids.

use std::path::Path;

use crate::error::{Error, Result};

fn to_byte(x: f64) -> u8 {
    (x * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Tiles `images` (each `height × width`, row-major, nominally in [0, 1])
/// row by row into a `rows × cols` grid; unused cells stay black.
pub fn pgm_grid_bytes(images: &[Vec<f64>], height: usize, width: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if height == 0 || width == 0 || rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("image and grid sizes must be ≥ 1".into()));
    }
    if images.len() > rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{} images do not fit a {rows}×{cols} grid",
            images.len()
        )));
    }
    if let Some((i, img)) = images.iter().enumerate().find(|(_, img)| img.len() != height * width) {
        return Err(Error::InvalidArgument(format!(
            "image {i} has {} pixels, expected {height}×{width}",
            img.len()
        )));
    }
    let (w, h) = (width * cols, height * rows);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + w * h, 0);
    for (k, img) in images.iter().enumerate() {
        let (gr, gc) = (k / cols, k % cols);
        for r in 0..height {
            let start = header + (gr * height + r) * w + gc * width;
            for (dst, &x) in out[start..start + width]
                .iter_mut()
                .zip(&img[r * width..(r + 1) * width])
            {
                *dst = to_byte(x);
            }
        }
    }
    Ok(out)
}

pub fn emit_pgm_grid(
    images: &[Vec<f64>],
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, pgm_grid_bytes(images, height, width, rows, cols)?)?;
    Ok(())
}
