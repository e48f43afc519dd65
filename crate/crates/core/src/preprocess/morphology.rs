//! Grey-level morphology with discrete disk structuring elements.
//!
//! Out-of-image neighbours are ignored, so a closing is always at least the
//! input it was computed from.

use crate::raster::GrayImage;

/// Half-widths of the disk `{(dx, dy): dx² + dy² <= r²}`, indexed by `dy + r`.
pub fn disk_half_widths(radius: usize) -> Vec<usize> {
    let r = radius as i64;
    (-r..=r)
        .map(|dy| {
            let mut hw = 0i64;
            while (hw + 1) * (hw + 1) + dy * dy <= r * r {
                hw += 1;
            }
            hw as usize
        })
        .collect()
}

/// Sparse table answering range-max queries over one row in O(1).
struct RowMax {
    levels: Vec<Vec<f64>>,
}

impl RowMax {
    fn new(row: &[f64]) -> Self {
        let mut levels = vec![row.to_vec()];
        let mut span = 1;
        while span * 2 <= row.len() {
            let prev = levels.last().unwrap();
            let next: Vec<f64> = (0..=row.len() - span * 2)
                .map(|i| prev[i].max(prev[i + span]))
                .collect();
            levels.push(next);
            span *= 2;
        }
        Self { levels }
    }

    /// Max over the inclusive range `[lo, hi]`.
    fn query(&self, lo: usize, hi: usize) -> f64 {
        let len = hi - lo + 1;
        let k = usize::BITS as usize - 1 - len.leading_zeros() as usize;
        let level = &self.levels[k];
        level[lo].max(level[hi + 1 - (1 << k)])
    }
}

pub fn dilate(img: &GrayImage, radius: usize) -> GrayImage {
    let (h, w) = img.dims();
    if radius == 0 || img.is_empty() {
        return img.clone();
    }
    let tables: Vec<RowMax> = img.pixels().chunks(w).map(RowMax::new).collect();
    let half = disk_half_widths(radius);
    let r = radius as isize;
    GrayImage::from_fn(w, h, |row, col| {
        let mut best = f64::NEG_INFINITY;
        for dy in -r..=r {
            let y = row as isize + dy;
            if y < 0 || y >= h as isize {
                continue;
            }
            let hw = half[(dy + r) as usize];
            let lo = col.saturating_sub(hw);
            let hi = (col + hw).min(w - 1);
            best = best.max(tables[y as usize].query(lo, hi));
        }
        best
    })
}

pub fn erode(img: &GrayImage, radius: usize) -> GrayImage {
    let inverted = GrayImage::from_fn(img.width(), img.height(), |r, c| 1.0 - img.get(r, c));
    let dilated = dilate(&inverted, radius);
    GrayImage::from_fn(img.width(), img.height(), |r, c| 1.0 - dilated.get(r, c))
}

pub fn close(img: &GrayImage, radius: usize) -> GrayImage {
    erode(&dilate(img, radius), radius)
}
