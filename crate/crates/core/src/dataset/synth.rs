//! Synthetic cyst stacks: a bright horizontal band with dark elliptical
//! cysts that drift slowly from one image to the next.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImageRecord;
use crate::error::{Error, Result};
use crate::preprocess::morphology;
use crate::raster::{BinaryMask, GrayImage};

const BACKGROUND: f64 = 0.08;
const BAND: f64 = 0.78;
const CYST: f64 = 0.18;

/// Systematic deviation of one grader from the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorBias {
    /// Disk radius by which the grader over-paints every cyst.
    pub dilate_px: usize,
    /// Connected components with fewer pixels than this are not annotated.
    pub miss_small_below_px: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub stack_id: String,
    pub num_images: usize,
    pub image_size: usize,
    pub cyst_count_range: (usize, usize),
    pub cyst_radius_range: (f64, f64),
    pub speckle_sigma: f64,
    pub annotator_bias: [AnnotatorBias; 2],
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stack_id: "synthetic".into(),
            num_images: 40,
            image_size: 300,
            cyst_count_range: (3, 6),
            cyst_radius_range: (5.0, 12.0),
            speckle_sigma: 0.12,
            annotator_bias: [AnnotatorBias::default(); 2],
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_images == 0 {
            return bad("num_images must be positive");
        }
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if self.cyst_count_range.0 > self.cyst_count_range.1 {
            return bad("cyst_count_range is empty");
        }
        let (rmin, rmax) = self.cyst_radius_range;
        if !(rmin > 0.0 && rmin <= rmax) {
            return bad("cyst_radius_range must be positive and nonempty");
        }
        // cysts must fit inside the retinal band with a small margin
        if 2.0 * (rmax + 4.0) > BAND_HEIGHT * self.image_size as f64 {
            return bad("cyst_radius_range too large for image_size");
        }
        if !(self.speckle_sigma >= 0.0) {
            return bad("speckle_sigma must be >= 0");
        }
        Ok(())
    }
}

/// Retinal band thickness as a fraction of the image side.
const BAND_HEIGHT: f64 = 0.36;

struct CystTrack {
    row: f64,
    col: f64,
    drift_row: f64,
    drift_col: f64,
    radius_row: f64,
    radius_col: f64,
    phase: f64,
    rate: f64,
}

impl CystTrack {
    /// Centre and semi-axes at image `t`.
    fn at(&self, t: usize) -> (f64, f64, f64, f64) {
        let t = t as f64;
        let scale = 0.75 + 0.25 * (self.phase + self.rate * t).sin();
        (
            self.row + self.drift_row * t,
            self.col + self.drift_col * t,
            self.radius_row * scale,
            self.radius_col * scale,
        )
    }
}

/// Binary dilation by a disk of `radius`.
pub(crate) fn dilate_mask(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let grown = morphology::dilate(&mask.to_gray(), radius);
    BinaryMask::threshold(&grown, 0.5)
}

/// Removes 8-connected components with fewer than `min_size` pixels.
pub(crate) fn remove_small_components(mask: &BinaryMask, min_size: usize) -> BinaryMask {
    if min_size == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let mut out = mask.clone();
    let mut seen = vec![false; h * w];
    for start in 0..h * w {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        let mut component = vec![start];
        seen[start] = true;
        let mut i = 0;
        while i < component.len() {
            let (r, c) = (component[i] / w, component[i] % w);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let idx = nr as usize * w + nc as usize;
                    if !seen[idx] && mask.bits()[idx] {
                        seen[idx] = true;
                        component.push(idx);
                    }
                }
            }
            i += 1;
        }
        if component.len() < min_size {
            for idx in component {
                out.set(idx / w, idx % w, false);
            }
        }
    }
    out
}

fn apply_bias(truth: &BinaryMask, bias: AnnotatorBias) -> BinaryMask {
    dilate_mask(&remove_small_components(truth, bias.miss_small_below_px), bias.dilate_px)
}

/// Generates a stack; each record carries its ground truth mask.
pub fn generate_synthetic_stack(cfg: &SynthConfig) -> Result<Vec<ImageRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let size = cfg.image_size as f64;
    let band_top = 0.32 * size;
    let band_height = BAND_HEIGHT * size;
    let wave_amp = 0.03 * size;
    let wave_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let (cmin, cmax) = cfg.cyst_count_range;
    let count = rng.random_range(cmin..=cmax);
    let (rmin, rmax) = cfg.cyst_radius_range;
    let tracks: Vec<CystTrack> = (0..count)
        .map(|_| {
            let radius_row = rng.random_range(rmin..=rmax);
            let radius_col = radius_row * rng.random_range(1.0..1.6);
            let margin = radius_row + 4.0;
            CystTrack {
                row: rng.random_range(band_top + margin..=band_top + band_height - margin),
                col: rng.random_range(0.15 * size..=0.85 * size),
                drift_row: rng.random_range(-0.15..=0.15),
                drift_col: rng.random_range(-0.6..=0.6),
                radius_row,
                radius_col,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                rate: rng.random_range(0.05..0.2),
            }
        })
        .collect();

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = cfg.image_size;
    let mut records = Vec::with_capacity(cfg.num_images);
    for t in 0..cfg.num_images {
        let top_of = |c: usize| {
            band_top + wave_amp * (wave_phase + c as f64 / size * std::f64::consts::TAU).sin()
        };
        let ellipses: Vec<(f64, f64, f64, f64)> = tracks.iter().map(|tr| tr.at(t)).collect();
        let truth = BinaryMask::from_fn(n, n, |r, c| {
            let shift = top_of(c) - band_top;
            ellipses.iter().any(|&(er, ec, ar, ac)| {
                let dy = (r as f64 - er - shift) / ar;
                let dx = (c as f64 - ec) / ac;
                dy * dy + dx * dx <= 1.0
            })
        });
        let image = GrayImage::from_fn(n, n, |r, c| {
            let top = top_of(c);
            let inside = (r as f64) >= top && (r as f64) < top + band_height;
            let clean = if truth.get(r, c) {
                CYST
            } else if inside {
                BAND
            } else {
                BACKGROUND
            };
            let speckle = if cfg.speckle_sigma > 0.0 {
                1.0 + cfg.speckle_sigma * noise.sample(&mut rng)
            } else {
                1.0
            };
            clean * speckle
        });
        let g1 = apply_bias(&truth, cfg.annotator_bias[0]);
        let g2 = apply_bias(&truth, cfg.annotator_bias[1]);
        let mut record = ImageRecord::new(
            format!("{}_{:03}", cfg.stack_id, t),
            &cfg.stack_id,
            t,
            image,
            g1,
            g2,
        )?;
        record.ground_truth = Some(truth);
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_images: 4,
            image_size: 120,
            cyst_radius_range: (3.0, 6.0),
            rng_seed: seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_noise_zero_bias_labels_equal_truth() {
        let cfg = SynthConfig {
            speckle_sigma: 0.0,
            ..small(3)
        };
        for rec in generate_synthetic_stack(&cfg).unwrap() {
            let gt = rec.ground_truth.as_ref().unwrap();
            assert_eq!(&rec.g1, gt);
            assert_eq!(&rec.g2, gt);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic_stack(&small(11)).unwrap();
        let b = generate_synthetic_stack(&small(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_stack(&small(12)).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    /// Independent count of pixels within distance 1 of the truth.
    fn dilated_count_oracle(mask: &BinaryMask) -> usize {
        let (h, w) = mask.dims();
        (0..h * w)
            .filter(|&i| {
                let (r, c) = ((i / w) as isize, (i % w) as isize);
                [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| {
                    let (y, x) = (r + dr, c + dc);
                    y >= 0 && x >= 0 && y < h as isize && x < w as isize && mask.get(y as usize, x as usize)
                })
            })
            .count()
    }

    #[test]
    fn dilation_bias_only_grows_labels() {
        let cfg = SynthConfig {
            annotator_bias: [
                AnnotatorBias {
                    dilate_px: 1,
                    miss_small_below_px: 0,
                },
                AnnotatorBias::default(),
            ],
            ..small(5)
        };
        for rec in generate_synthetic_stack(&cfg).unwrap() {
            let gt = rec.ground_truth.as_ref().unwrap();
            assert!(rec.g1.count() >= gt.count());
            assert_eq!(rec.g1.count(), dilated_count_oracle(gt));
            assert!(gt.is_subset_of(&rec.g1));
        }
    }

    #[test]
    fn small_components_are_missed() {
        let mut mask = BinaryMask::empty(20, 20);
        mask.set(1, 1, true);
        for r in 10..14 {
            for c in 10..14 {
                mask.set(r, c, true);
            }
        }
        let out = remove_small_components(&mask, 5);
        assert_eq!(out.count(), 16);
        assert!(!out.get(1, 1));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(0);
        cfg.cyst_count_range = (4, 2);
        assert!(generate_synthetic_stack(&cfg).is_err());
        let mut cfg = small(0);
        cfg.speckle_sigma = -0.1;
        assert!(generate_synthetic_stack(&cfg).is_err());
    }

    #[test]
    fn cysts_are_present_and_dark() {
        let recs = generate_synthetic_stack(&small(9)).unwrap();
        for rec in &recs {
            let gt = rec.ground_truth.as_ref().unwrap();
            assert!(gt.count() > 0);
        }
    }
}
