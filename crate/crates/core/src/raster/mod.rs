//! Deterministic image primitives shared by the page renderer and the
//! digitizer.
//!
//! Images are row-major `f64` intensities in `[0, 1]` (0 = ink, 1 = white);
//! masks are row-major `{0, 1}` bytes. Every function here is pure: the same
//! inputs, seeds included, give bit-identical outputs.

mod filters;
mod geometry;
mod grid;
mod morph;
mod pgm;

pub use filters::{add_noise_snr, blockdct_artifacts, gaussian_blur, gaussian_kernel, robust_normalize};
pub use geometry::{estimate_skew, rotate, rotate_mask, translate, translate_mask};
pub use grid::{estimate_grid_period, Axis};
pub use morph::{disc_offsets, geodesic_close_x, label_components, morph_open, remove_small_components};
pub use pgm::{read_pgm, read_pgm_mask, write_pgm, write_pgm_mask, Gray8};

use crate::error::{Error, Result};

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copies the `w × h` window at `(x0, y0)`; pixels outside the image
    /// take `fill`.
    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize, fill: f64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let sx = x0 + x as isize;
            let sy = y0 + y as isize;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(sx as usize, sy as usize)
            } else {
                fill
            }
        })
    }

    /// Extends right and bottom edges so both sides are multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize, fill: f64) -> GrayImage {
        let w = self.width.div_ceil(m) * m;
        let h = self.height.div_ceil(m) * m;
        self.crop(0, 0, w, h, fill)
    }

    /// Binary mask of pixels strictly below `threshold`.
    pub fn threshold_below(&self, threshold: f64) -> BinMask {
        BinMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v < threshold) as u8).collect(),
        }
    }

    /// Binary mask of pixels at or above `threshold`.
    pub fn threshold_at_least(&self, threshold: f64) -> BinMask {
        BinMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v >= threshold) as u8).collect(),
        }
    }
}

/// Binary mask, one byte per pixel holding 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Builds a mask from bytes; any nonzero byte becomes 1.
    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|b| (b != 0) as u8).collect(),
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> BinMask {
        BinMask::from_fn(w, h, |x, y| {
            let sx = x0 + x as isize;
            let sy = y0 + y as isize;
            sx >= 0
                && sy >= 0
                && (sx as usize) < self.width
                && (sy as usize) < self.height
                && self.get(sx as usize, sy as usize)
        })
    }

    /// 2×2 logical-or downsampling (odd trailing rows/columns are folded in).
    pub fn downsample_or(&self) -> BinMask {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut out = BinMask::new(w, h);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(x / 2, y / 2, true);
                }
            }
        }
        out
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| b as f64).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(GrayImage::from_vec(3, 3, vec![0.0; 8]).is_err());
        assert!(BinMask::from_vec(2, 2, vec![0; 5]).is_err());
    }

    #[test]
    fn pad_to_multiple_rounds_up() {
        let img = GrayImage::new(10, 7, 0.3);
        let p = img.pad_to_multiple(4, 1.0);
        assert_eq!(p.dims(), (12, 8));
        assert_eq!(p.get(9, 6), 0.3);
        assert_eq!(p.get(11, 7), 1.0);
    }

    #[test]
    fn downsample_or_keeps_thin_lines() {
        let m = BinMask::from_fn(8, 8, |_, y| y == 3);
        let d = m.downsample_or();
        assert_eq!(d.dims(), (4, 4));
        assert_eq!(d.count_ones(), 4);
        assert!(d.get(0, 1));
    }
}
