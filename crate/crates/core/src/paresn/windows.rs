//! Square sub-windows tiled around the ROI centroid.

use crate::preprocess::PreprocessedPlanes;
use crate::raster::{BinaryMask, GrayImage};

#[derive(Clone, Debug, PartialEq)]
pub struct SubWindow {
    /// Top-left corner in image coordinates.
    pub origin: (usize, usize),
    /// Size of the image region covered (smaller than the side for border windows).
    pub extent: (usize, usize),
    /// ROI-masked `[base, bottom_hat, grad_mag, grad_dir]`, each `side x side`.
    pub planes: [GrayImage; 4],
    pub target: Option<BinaryMask>,
}

impl SubWindow {
    pub fn side(&self) -> usize {
        self.planes[0].width()
    }

    pub fn is_resized(&self) -> bool {
        self.extent != (self.side(), self.side())
    }
}

/// ROI centroid rounded to the nearest pixel.
pub fn roi_centroid(roi: &BinaryMask) -> Option<(usize, usize)> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for (i, &b) in roi.bits().iter().enumerate() {
        if b {
            sr += (i / roi.width()) as f64;
            sc += (i % roi.width()) as f64;
            n += 1;
        }
    }
    (n > 0).then(|| ((sr / n as f64).round() as usize, (sc / n as f64).round() as usize))
}

fn bounding_box(roi: &BinaryMask) -> (usize, usize, usize, usize) {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, &b) in roi.bits().iter().enumerate() {
        if b {
            let (r, c) = (i / roi.width(), i % roi.width());
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
    }
    (r0, r1, c0, c1)
}

/// Clipped spans `[start, end)` of the stride-`side` tiles, anchored so that
/// one tile is centred on `center`, that intersect `[lo, hi]`.
fn tile_spans(center: usize, side: usize, lo: usize, hi: usize, len: usize) -> Vec<(usize, usize)> {
    let anchor = center as i64 - (side / 2) as i64;
    let s = side as i64;
    let k0 = (lo as i64 - anchor).div_euclid(s);
    let k1 = (hi as i64 - anchor).div_euclid(s);
    (k0..=k1)
        .filter_map(|k| {
            let start = (anchor + k * s).max(0) as usize;
            let end = ((anchor + (k + 1) * s).min(len as i64)).max(0) as usize;
            (end > start).then_some((start, end))
        })
        .collect()
}

/// Extracts windows in row-major tile order. Tiles clipped by the image
/// border are resized to `side x side` (bilinear for planes, nearest for the
/// target); tiles without ROI pixels are dropped.
pub fn extract_subwindows(
    planes: &PreprocessedPlanes,
    target: Option<&BinaryMask>,
    side: usize,
) -> Vec<SubWindow> {
    let Some((cr, cc)) = roi_centroid(&planes.roi) else {
        return Vec::new();
    };
    let (h, w) = planes.dims();
    let (r0, r1, c0, c1) = bounding_box(&planes.roi);
    let rows = tile_spans(cr, side, r0, r1, h);
    let cols = tile_spans(cc, side, c0, c1, w);
    let masked = planes.masked_inputs();

    let mut out = Vec::new();
    for &(rs, re) in &rows {
        for &(cs, ce) in &cols {
            let (eh, ew) = (re - rs, ce - cs);
            let roi_hits = planes.roi.crop(rs, cs, eh, ew).count();
            if roi_hits == 0 {
                continue;
            }
            let planes = masked
                .each_ref()
                .map(|p| p.crop(rs, cs, eh, ew).resize_bilinear(side, side));
            let target = target.map(|t| t.crop(rs, cs, eh, ew).resize_nearest(side, side));
            out.push(SubWindow {
                origin: (rs, cs),
                extent: (eh, ew),
                planes,
                target,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planes_with_roi(roi: BinaryMask) -> PreprocessedPlanes {
        let (h, w) = roi.dims();
        let base = GrayImage::from_fn(w, h, |r, c| ((r + c) % 10) as f64 / 9.0);
        PreprocessedPlanes {
            bottom_hat: base.clone(),
            grad_mag: base.clone(),
            grad_dir: base.clone(),
            base,
            roi,
        }
    }

    #[test]
    fn full_roi_gives_nine_tiles() {
        let p = planes_with_roi(BinaryMask::full(300, 300));
        let wins = extract_subwindows(&p, None, 100);
        assert_eq!(wins.len(), 9);
        let origins: Vec<_> = wins.iter().map(|w| w.origin).collect();
        assert_eq!(origins[0], (0, 0));
        assert_eq!(origins[4], (100, 100));
        assert!(wins.iter().all(|w| !w.is_resized()));
    }

    #[test]
    fn empty_roi_gives_nothing() {
        let p = planes_with_roi(BinaryMask::empty(300, 300));
        assert!(extract_subwindows(&p, None, 100).is_empty());
    }

    #[test]
    fn small_roi_gives_one_tile_with_centroid() {
        let roi = BinaryMask::from_fn(300, 300, |r, c| (120..140).contains(&r) && (60..90).contains(&c));
        let p = planes_with_roi(roi.clone());
        let wins = extract_subwindows(&p, Some(&roi), 100);
        assert_eq!(wins.len(), 1);
        let (cr, cc) = roi_centroid(&roi).unwrap();
        let w = &wins[0];
        assert!((w.origin.0..w.origin.0 + w.extent.0).contains(&cr));
        assert!((w.origin.1..w.origin.1 + w.extent.1).contains(&cc));
        assert_eq!(w.target.as_ref().unwrap().count(), roi.count());
    }

    #[test]
    fn border_tiles_are_resized_to_full_side() {
        let roi = BinaryMask::from_fn(300, 300, |r, _| (90..250).contains(&r));
        let p = planes_with_roi(roi);
        let wins = extract_subwindows(&p, None, 100);
        assert!(wins.iter().any(|w| w.is_resized()));
        for w in &wins {
            assert_eq!(w.planes[0].dims(), (100, 100));
            assert!(w.origin.0 + w.extent.0 <= 300 && w.origin.1 + w.extent.1 <= 300);
        }
    }
}
