//! Input planes for the proposal models: denoised image, bottom-hat
//! response, gradient magnitude and direction, and the region of interest.

pub mod morphology;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

/// Working resolution of every plane.
pub const PLANE_SIZE: usize = 300;

/// Default largest structuring-element radius for the planes fed to ParESN.
pub const DEFAULT_SD: usize = 15;

const ROI_PERCENTILE: f64 = 0.9;
const ROI_SMOOTH_WINDOW: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottomHatParams {
    pub s_d: usize,
}

impl Default for BottomHatParams {
    fn default() -> Self {
        Self { s_d: DEFAULT_SD }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub size: usize,
    pub bottom_hat: BottomHatParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            size: PLANE_SIZE,
            bottom_hat: BottomHatParams::default(),
        }
    }
}

/// The four model input planes plus the ROI. Planes are stored unmasked;
/// [`PreprocessedPlanes::masked_inputs`] applies the ROI.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedPlanes {
    pub base: GrayImage,
    pub bottom_hat: GrayImage,
    pub grad_mag: GrayImage,
    pub grad_dir: GrayImage,
    pub roi: BinaryMask,
}

impl PreprocessedPlanes {
    pub fn dims(&self) -> (usize, usize) {
        self.base.dims()
    }

    /// `[base, bottom_hat, grad_mag, grad_dir]`, each zeroed outside the ROI.
    pub fn masked_inputs(&self) -> [GrayImage; 4] {
        let m = |p: &GrayImage| p.masked(&self.roi).expect("planes share dimensions");
        [
            m(&self.base),
            m(&self.bottom_hat),
            m(&self.grad_mag),
            m(&self.grad_dir),
        ]
    }
}

pub fn median3x3(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |r, c| {
        let mut window = [0.0f64; 9];
        let mut i = 0;
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                window[i] = img.get_clamped(r as isize + dr, c as isize + dc);
                i += 1;
            }
        }
        window.sort_unstable_by(f64::total_cmp);
        window[4]
    })
}

/// 3x3 median filter followed by bilinear resize to `size x size`.
pub fn denoise_and_resize(img: &GrayImage, size: usize) -> Result<GrayImage> {
    if img.is_empty() {
        return Err(Error::InvalidConfig("cannot preprocess an empty image".into()));
    }
    // GrayImage construction clamps, which is the renormalization step.
    Ok(median3x3(img).resize_bilinear(size, size))
}

/// Closing-minus-input for each radius `2, 4, ..., max_radius`, in order.
pub fn closing_residues(img: &GrayImage, max_radius: usize) -> Vec<(usize, Vec<f64>)> {
    (2..=max_radius)
        .step_by(2)
        .map(|r| {
            let closed = morphology::close(img, r);
            let residue = closed
                .pixels()
                .iter()
                .zip(img.pixels())
                .map(|(c, v)| (c - v).max(0.0))
                .collect();
            (r, residue)
        })
        .collect()
}

/// Per-pixel max of the closing residues for radii up to `s_d`, before the
/// contrast stretch.
pub fn bottom_hat_response(img: &GrayImage, p: BottomHatParams) -> Result<Vec<f64>> {
    if p.s_d < 2 {
        return Err(Error::InvalidConfig(format!(
            "structuring element size must be >= 2, got {}",
            p.s_d
        )));
    }
    let mut acc = vec![0.0f64; img.pixels().len()];
    for (_, residue) in closing_residues(img, p.s_d) {
        for (a, v) in acc.iter_mut().zip(residue) {
            *a = a.max(v);
        }
    }
    Ok(acc)
}

/// Linear min-max stretch to `[0, 1]`; a flat response maps to zero.
pub fn contrast_stretch(width: usize, height: usize, values: &[f64]) -> GrayImage {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = if span > 0.0 {
        values.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; values.len()]
    };
    GrayImage::new(width, height, pixels).expect("length preserved")
}

pub fn bottom_hat(img: &GrayImage, p: BottomHatParams) -> Result<GrayImage> {
    let response = bottom_hat_response(img, p)?;
    Ok(contrast_stretch(img.width(), img.height(), &response))
}

/// 3x3 Sobel derivatives with replicated borders, as `(gx, gy)`.
pub fn sobel(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = img.dims();
    let mut gx = Vec::with_capacity(h * w);
    let mut gy = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let p = |dr: isize, dc: isize| img.get_clamped(r + dr, c + dc);
            gx.push(
                (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)),
            );
            gy.push(
                (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)),
            );
        }
    }
    (gx, gy)
}

/// Gradient magnitude scaled by its maximum, and direction mapped affinely
/// from `[-pi, pi]` to `[0, 1]`.
pub fn gradients(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (gx, gy) = sobel(img);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let peak = mag.iter().copied().fold(0.0, f64::max);
    let mag = if peak > 0.0 {
        mag.iter().map(|m| m / peak).collect()
    } else {
        vec![0.0; mag.len()]
    };
    let dir = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| {
            let angle = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) };
            (angle + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
        })
        .collect();
    (
        GrayImage::new(img.width(), img.height(), mag).expect("length preserved"),
        GrayImage::new(img.width(), img.height(), dir).expect("length preserved"),
    )
}

/// Linear-interpolated quantile of an unsorted slice.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn median_smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w = values[lo..hi].to_vec();
            w.sort_unstable_by(f64::total_cmp);
            let n = w.len();
            if n % 2 == 1 {
                w[n / 2]
            } else {
                0.5 * (w[n / 2 - 1] + w[n / 2])
            }
        })
        .collect()
}

/// Top and bottom strong-edge rows per column, median smoothed. `None` when
/// no column has a qualifying edge.
pub fn band_boundaries(img: &GrayImage) -> Option<(Vec<f64>, Vec<f64>)> {
    let (h, w) = img.dims();
    let (_, gy) = sobel(img);
    let mut raw: Vec<Option<(usize, usize)>> = Vec::with_capacity(w);
    for c in 0..w {
        let column: Vec<f64> = (0..h).map(|r| gy[r * w + c].abs()).collect();
        let cut = quantile(&column, ROI_PERCENTILE);
        let top = column.iter().position(|&g| g > cut);
        let bottom = column.iter().rposition(|&g| g > cut);
        raw.push(top.zip(bottom));
    }
    let valid: Vec<usize> = (0..w).filter(|&c| raw[c].is_some()).collect();
    if valid.is_empty() {
        return None;
    }
    let (mut top, mut bottom) = (Vec::with_capacity(w), Vec::with_capacity(w));
    for c in 0..w {
        let source = match raw[c] {
            Some(b) => b,
            None => {
                let nearest = *valid
                    .iter()
                    .min_by_key(|&&v| (v.abs_diff(c), v))
                    .expect("at least one valid column");
                raw[nearest].unwrap()
            }
        };
        top.push(source.0 as f64);
        bottom.push(source.1 as f64);
    }
    Some((
        median_smooth(&top, ROI_SMOOTH_WINDOW),
        median_smooth(&bottom, ROI_SMOOTH_WINDOW),
    ))
}

/// Mask strictly between the smoothed top and bottom edge curves.
pub fn roi_mask(img: &GrayImage) -> BinaryMask {
    match band_boundaries(img) {
        None => BinaryMask::empty(img.width(), img.height()),
        Some((top, bottom)) => BinaryMask::from_fn(img.width(), img.height(), |r, c| {
            let r = r as f64;
            r > top[c] && r < bottom[c]
        }),
    }
}

pub fn preprocess_with(img: &GrayImage, cfg: &PreprocessConfig) -> Result<PreprocessedPlanes> {
    let base = denoise_and_resize(img, cfg.size)?;
    let bottom_hat = bottom_hat(&base, cfg.bottom_hat)?;
    let (grad_mag, grad_dir) = gradients(&base);
    let roi = roi_mask(&base);
    Ok(PreprocessedPlanes {
        base,
        bottom_hat,
        grad_mag,
        grad_dir,
        roi,
    })
}

pub fn preprocess(img: &GrayImage) -> Result<PreprocessedPlanes> {
    preprocess_with(img, &PreprocessConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference bilinear sampler written independently of the raster code.
    fn reference_bilinear(img: &GrayImage, w: usize, h: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let fy = ((y as f64 + 0.5) * img.height() as f64 / h as f64 - 0.5)
                    .max(0.0)
                    .min(img.height() as f64 - 1.0);
                let fx = ((x as f64 + 0.5) * img.width() as f64 / w as f64 - 0.5)
                    .max(0.0)
                    .min(img.width() as f64 - 1.0);
                let (y0, x0) = (fy as usize, fx as usize);
                let (y1, x1) = ((y0 + 1).min(img.height() - 1), (x0 + 1).min(img.width() - 1));
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let v = img.get(y0, x0) * (1.0 - ty) * (1.0 - tx)
                    + img.get(y0, x1) * (1.0 - ty) * tx
                    + img.get(y1, x0) * ty * (1.0 - tx)
                    + img.get(y1, x1) * ty * tx;
                out.push(v);
            }
        }
        out
    }

    fn band_image(top: usize, bottom: usize) -> GrayImage {
        GrayImage::from_fn(PLANE_SIZE, PLANE_SIZE, |r, _| {
            if (top..=bottom).contains(&r) {
                0.8
            } else {
                0.1
            }
        })
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = GrayImage::filled(120, 80, 0.37);
        let out = denoise_and_resize(&img, PLANE_SIZE).unwrap();
        assert_eq!(out.dims(), (PLANE_SIZE, PLANE_SIZE));
        assert!(out.pixels().iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn isolated_speckle_is_removed() {
        let mut px = vec![0.2; 50 * 50];
        px[25 * 50 + 25] = 1.0;
        let img = GrayImage::new(50, 50, px).unwrap();
        let out = median3x3(&img);
        assert!(out.pixels().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn checkerboard_downsample_matches_reference_bilinear() {
        let img = GrayImage::from_fn(600, 600, |r, c| ((r + c) % 2) as f64);
        let out = denoise_and_resize(&img, PLANE_SIZE).unwrap();
        let expected = reference_bilinear(&median3x3(&img), PLANE_SIZE, PLANE_SIZE);
        for (a, b) in out.pixels().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
        // away from the replicated border each sample averages a 2x2 block
        for r in 1..PLANE_SIZE - 1 {
            for c in 1..PLANE_SIZE - 1 {
                assert!((out.get(r, c) - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bottom_hat_of_flat_field_is_zero() {
        let img = GrayImage::filled(40, 40, 0.6);
        let bh = bottom_hat(&img, BottomHatParams { s_d: 6 }).unwrap();
        assert!(bh.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bottom_hat_rejects_small_element() {
        assert!(bottom_hat(&GrayImage::filled(5, 5, 0.1), BottomHatParams { s_d: 1 }).is_err());
    }

    /// Brute-force closing by explicit disk enumeration.
    fn brute_close(img: &GrayImage, r: isize) -> GrayImage {
        let in_disk = |dy: isize, dx: isize| dx * dx + dy * dy <= r * r;
        let (h, w) = (img.height() as isize, img.width() as isize);
        let pass = |src: &GrayImage, max: bool| {
            GrayImage::from_fn(src.width(), src.height(), |row, col| {
                let mut acc = if max { f64::MIN } else { f64::MAX };
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, x) = (row as isize + dy, col as isize + dx);
                        if in_disk(dy, dx) && y >= 0 && x >= 0 && y < h && x < w {
                            let v = src.get(y as usize, x as usize);
                            acc = if max { acc.max(v) } else { acc.min(v) };
                        }
                    }
                }
                acc
            })
        };
        pass(&pass(img, true), false)
    }

    #[test]
    fn dark_pit_peaks_after_stretch() {
        // radius-1 pit centred at (10, 10) in a 20x20 bright field
        let img = GrayImage::from_fn(20, 20, |r, c| {
            let (dy, dx) = (r as i64 - 10, c as i64 - 10);
            if dy * dy + dx * dx <= 1 {
                0.1
            } else {
                0.9
            }
        });
        let mut expected = vec![0.0f64; 400];
        for r in [2isize, 4] {
            let closed = brute_close(&img, r);
            for (i, e) in expected.iter_mut().enumerate() {
                *e = e.max(closed.pixels()[i] - img.pixels()[i]);
            }
        }
        let raw = bottom_hat_response(&img, BottomHatParams { s_d: 4 }).unwrap();
        for (a, b) in raw.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let bh = bottom_hat(&img, BottomHatParams { s_d: 4 }).unwrap();
        assert_eq!(bh.get(10, 10), 1.0);
        assert_eq!(bh.get(0, 0), 0.0);
    }

    #[test]
    fn larger_element_dominates_before_stretch() {
        let img = GrayImage::from_fn(60, 60, |r, c| ((r * 13 + c * 7) % 17) as f64 / 16.0);
        let small = bottom_hat_response(&img, BottomHatParams { s_d: 4 }).unwrap();
        let large = bottom_hat_response(&img, BottomHatParams { s_d: 8 }).unwrap();
        assert!(small.iter().zip(&large).all(|(s, l)| l >= s));
        assert!(small.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn flat_gradients() {
        let (mag, dir) = gradients(&GrayImage::filled(10, 10, 0.4));
        assert!(mag.pixels().iter().all(|&v| v == 0.0));
        assert!(dir.pixels().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn vertical_step_edge_peaks_on_edge_columns() {
        // columns 0..=2 dark, 3..=4 bright; hand convolution gives gx = 4 at
        // columns 2 and 3 and zero elsewhere
        let img = GrayImage::from_fn(5, 5, |_, c| if c >= 3 { 1.0 } else { 0.0 });
        let (gx, gy) = sobel(&img);
        for r in 0..5 {
            assert_eq!(&gx[r * 5..r * 5 + 5], &[0.0, 0.0, 4.0, 4.0, 0.0]);
        }
        assert!(gy.iter().all(|&v| v == 0.0));
        let (mag, _) = gradients(&img);
        assert_eq!(mag.get(2, 2), 1.0);
        assert_eq!(mag.get(2, 0), 0.0);
    }

    #[test]
    fn edge_orientation_plateaus() {
        let vertical = GrayImage::from_fn(5, 5, |_, c| if c >= 3 { 1.0 } else { 0.0 });
        let horizontal = GrayImage::from_fn(5, 5, |r, _| if r >= 3 { 1.0 } else { 0.0 });
        let (_, dv) = gradients(&vertical);
        let (_, dh) = gradients(&horizontal);
        // atan2(0, 4) = 0 -> 0.5 ; atan2(4, 0) = pi/2 -> 0.75
        assert!((dv.get(2, 2) - 0.5).abs() < 1e-12);
        assert!((dh.get(2, 2) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn roi_of_band_lies_between_edges() {
        let roi = roi_mask(&band_image(100, 200));
        for c in 0..PLANE_SIZE {
            let rows: Vec<usize> = (0..PLANE_SIZE).filter(|&r| roi.get(r, c)).collect();
            let (first, last) = (rows[0], *rows.last().unwrap());
            assert!(first.abs_diff(101) <= 2, "column {c} starts at {first}");
            assert!(last.abs_diff(199) <= 2, "column {c} ends at {last}");
            assert_eq!(rows.len(), last - first + 1);
        }
    }

    #[test]
    fn roi_of_flat_image_is_empty() {
        assert!(roi_mask(&GrayImage::filled(30, 30, 0.5)).is_blank());
    }

    #[test]
    fn smoothing_suppresses_a_noisy_column() {
        let clean = band_image(100, 200);
        let img = GrayImage::from_fn(PLANE_SIZE, PLANE_SIZE, |r, c| {
            if c == 150 && (40..100).contains(&r) {
                0.8
            } else {
                clean.get(r, c)
            }
        });
        let (top, _) = band_boundaries(&img).unwrap();
        assert!((top[150] - top[149]).abs() <= 3.0);
        assert!((top[150] - top[151]).abs() <= 3.0);
    }

    #[test]
    fn preprocess_shape_contract() {
        let img = GrayImage::from_fn(200, 150, |r, c| ((r / 10 + c / 15) % 3) as f64 / 2.0);
        let planes = preprocess(&img).unwrap();
        for p in [&planes.base, &planes.bottom_hat, &planes.grad_mag, &planes.grad_dir] {
            assert_eq!(p.dims(), (PLANE_SIZE, PLANE_SIZE));
            assert!(p.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(planes.roi.dims(), (PLANE_SIZE, PLANE_SIZE));
    }

    #[test]
    fn preprocess_flat_image() {
        let planes = preprocess(&GrayImage::filled(300, 300, 0.3)).unwrap();
        assert!(planes.base.pixels().iter().all(|&v| (v - 0.3).abs() < 1e-12));
        assert!(planes.bottom_hat.pixels().iter().all(|&v| v == 0.0));
        assert!(planes.grad_mag.pixels().iter().all(|&v| v == 0.0));
        assert!(planes.roi.is_blank());
    }

    #[test]
    fn native_resolution_is_not_resampled() {
        let img = GrayImage::from_fn(PLANE_SIZE, PLANE_SIZE, |r, c| ((r * 3 + c) % 7) as f64 / 6.0);
        let planes = preprocess(&img).unwrap();
        assert_eq!(planes.base, median3x3(&img));
    }
}
