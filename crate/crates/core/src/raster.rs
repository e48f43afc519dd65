//! Row-major grayscale and binary rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grayscale raster with intensities in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidConfig(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Pixel lookup with replicated borders.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// Zeroes every pixel outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        ensure_same_dims(self.dims(), mask.dims())?;
        let pixels = self
            .pixels
            .iter()
            .zip(mask.bits())
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            pixels,
        })
    }

    /// Bilinear resize with half-pixel centers; identity when the size is unchanged.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let cols: Vec<(usize, usize, f64)> = (0..width)
            .map(|c| sample_coord(c, sx, self.width))
            .collect();
        Self::from_fn(width, height, |r, c| {
            let (r0, r1, fy) = sample_coord(r, sy, self.height);
            let (c0, c1, fx) = cols[c];
            let top = self.get(r0, c0) * (1.0 - fx) + self.get(r0, c1) * fx;
            let bottom = self.get(r1, c0) * (1.0 - fx) + self.get(r1, c1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Copies the `rows x cols` block starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(cols, rows, |r, c| self.get(row + r, col + c))
    }
}

fn sample_coord(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, src - lo as f64)
}

/// Boolean raster, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidConfig(format!(
                "{}x{} mask needs {} bits, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Pixels strictly above `threshold`.
    pub fn threshold(img: &GrayImage, threshold: f64) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().iter().map(|&v| v > threshold).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Number of pixels set in both masks.
    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let map = |dst: usize, src_len: usize, dst_len: usize| {
            (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
        };
        Self::from_fn(width, height, |r, c| {
            self.get(map(r, self.height, height), map(c, self.width, width))
        })
    }

    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(cols, rows, |r, c| self.get(row + r, col + c))
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

pub(crate) fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
