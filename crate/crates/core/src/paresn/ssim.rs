//! Mean structural similarity over a uniform sliding window.

use nalgebra::DMatrix;

pub const WINDOW: usize = 8;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean SSIM of two equally sized matrices with values in `[0, 1]`, over all
/// `WINDOW x WINDOW` windows at stride 1 (the whole matrix if smaller).
pub fn ssim(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "ssim inputs must match");
    let (rows, cols) = a.shape();
    let wr = WINDOW.min(rows);
    let wc = WINDOW.min(cols);
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = (wr * wc) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - wr {
        for c in 0..=cols - wc {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in r..r + wr {
                for j in c..c + wc {
                    let (x, y) = (a[(i, j)], b[(i, j)]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Min-max normalization to `[0, 1]`; constant matrices become zero.
pub fn normalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let lo = m.min();
    let hi = m.max();
    if hi > lo {
        m.map(|v| (v - lo) / (hi - lo))
    } else {
        DMatrix::zeros(m.nrows(), m.ncols())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_score_one() {
        let a = DMatrix::from_fn(20, 20, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        assert!((ssim(&a, &a) - 1.0).abs() < 1e-12);
        let flat = DMatrix::from_element(9, 9, 0.3);
        assert!((ssim(&flat, &flat) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_pattern_scores_low() {
        let a = DMatrix::from_fn(16, 16, |r, c| ((r + c) % 2) as f64);
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b) < 0.0);
    }

    #[test]
    fn normalize_range() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 6.0, 10.0]);
        let n = normalize(&m);
        assert_eq!(n.min(), 0.0);
        assert_eq!(n.max(), 1.0);
        assert_eq!(normalize(&DMatrix::from_element(2, 2, 5.0)).max(), 0.0);
    }
}
