//! Global-thresholding proposal model with an ROC-driven grid search over
//! the bottom-hat element size and threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{closing_residues, contrast_stretch, PreprocessedPlanes};
use crate::raster::{ensure_same_dims, BinaryMask, GrayImage};

/// Element sizes searched: 3, 5, ..., 25.
pub const SD_GRID: [usize; 12] = [3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25];

/// Thresholds searched: 0, 0.05, ..., 1.
pub fn threshold_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Offset between neighbouring proposal thresholds.
pub const THRESHOLD_STEP: f64 = 0.05;

/// Three proposals for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionalProposals {
    pub p1: BinaryMask,
    pub p2: BinaryMask,
    pub p3: BinaryMask,
}

impl RegionalProposals {
    pub fn new(p1: BinaryMask, p2: BinaryMask, p3: BinaryMask) -> Result<Self> {
        ensure_same_dims(p1.dims(), p2.dims())?;
        ensure_same_dims(p1.dims(), p3.dims())?;
        Ok(Self { p1, p2, p3 })
    }

    pub fn as_array(&self) -> [&BinaryMask; 3] {
        [&self.p1, &self.p2, &self.p3]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.p1.dims()
    }

    /// Pixels covered by at least one proposal.
    pub fn union(&self) -> BinaryMask {
        self.p1
            .or(&self.p2)
            .and_then(|m| m.or(&self.p3))
            .expect("proposal dimensions checked on construction")
    }

    /// Reorders the proposals; `order[i]` names the source of slot `i`.
    pub fn permuted(&self, order: [usize; 3]) -> Self {
        let src = self.as_array();
        Self {
            p1: src[order[0]].clone(),
            p2: src[order[1]].clone(),
            p3: src[order[2]].clone(),
        }
    }

    pub fn intersect(&self, roi: &BinaryMask) -> Result<Self> {
        Ok(Self {
            p1: self.p1.and(roi)?,
            p2: self.p2.and(roi)?,
            p3: self.p3.and(roi)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub s_d: usize,
    pub theta: f64,
    pub auc: f64,
    /// Sorted by ascending threshold.
    pub roc: Vec<RocPoint>,
}

/// Stretched bottom-hat planes for every grid element size, computed from
/// one shared set of closing residues.
fn bottom_hats_for_grid(base: &GrayImage) -> Vec<GrayImage> {
    let max_sd = *SD_GRID.last().unwrap();
    let residues = closing_residues(base, max_sd);
    let mut acc = vec![0.0f64; base.pixels().len()];
    let mut next = 0;
    let mut out = Vec::with_capacity(SD_GRID.len());
    for &s_d in &SD_GRID {
        while next < residues.len() && residues[next].0 <= s_d {
            for (a, v) in acc.iter_mut().zip(&residues[next].1) {
                *a = a.max(*v);
            }
            next += 1;
        }
        out.push(contrast_stretch(base.width(), base.height(), &acc));
    }
    out
}

/// Builds the ROC over `thresholds`, pooling pixels of all `(response, target,
/// roi)` triples.
pub fn roc_curve(
    samples: &[(&GrayImage, &BinaryMask, &BinaryMask)],
    thresholds: &[f64],
) -> Result<Vec<RocPoint>> {
    let (mut pos, mut neg) = (0u64, 0u64);
    let mut tp = vec![0u64; thresholds.len()];
    let mut fp = vec![0u64; thresholds.len()];
    for (resp, target, roi) in samples {
        ensure_same_dims(resp.dims(), target.dims())?;
        ensure_same_dims(resp.dims(), roi.dims())?;
        for ((&v, &t), &m) in resp.pixels().iter().zip(target.bits()).zip(roi.bits()) {
            if !m {
                continue;
            }
            if t {
                pos += 1;
            } else {
                neg += 1;
            }
            for (i, &th) in thresholds.iter().enumerate() {
                if v > th {
                    if t {
                        tp[i] += 1;
                    } else {
                        fp[i] += 1;
                    }
                }
            }
        }
    }
    if pos == 0 {
        return Err(Error::BlankTarget);
    }
    let mut roc: Vec<RocPoint> = thresholds
        .iter()
        .enumerate()
        .map(|(i, &threshold)| RocPoint {
            fpr: if neg == 0 { 0.0 } else { fp[i] as f64 / neg as f64 },
            tpr: tp[i] as f64 / pos as f64,
            threshold,
        })
        .collect();
    roc.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    Ok(roc)
}

/// Trapezoidal area under the ROC, anchored at (0,0) and (1,1).
pub fn auc(roc: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Grid point closest to the top-left corner; ties go to the smaller threshold.
pub fn operating_point(roc: &[RocPoint]) -> RocPoint {
    let dist = |p: &RocPoint| p.fpr.hypot(1.0 - p.tpr);
    let mut best = roc[0];
    for p in &roc[1..] {
        let (d, db) = (dist(p), dist(&best));
        if d < db || (d == db && p.threshold < best.threshold) {
            best = *p;
        }
    }
    best
}

pub fn fit_baseline(train: &[(PreprocessedPlanes, BinaryMask)]) -> Result<BaselineModel> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("baseline needs a training image".into()));
    }
    if train.iter().all(|(_, t)| t.is_blank()) {
        return Err(Error::BlankTarget);
    }
    let per_image: Vec<Vec<GrayImage>> = train
        .iter()
        .map(|(planes, _)| bottom_hats_for_grid(&planes.base))
        .collect();
    let thresholds = threshold_grid();
    let mut best: Option<BaselineModel> = None;
    for (k, &s_d) in SD_GRID.iter().enumerate() {
        let samples: Vec<_> = train
            .iter()
            .zip(&per_image)
            .map(|((planes, target), bhs)| (&bhs[k], target, &planes.roi))
            .collect();
        let roc = roc_curve(&samples, &thresholds)?;
        let area = auc(&roc);
        // strict comparison keeps the smaller s_d on ties
        if best.as_ref().is_none_or(|b| area > b.auc) {
            let theta = operating_point(&roc).threshold;
            best = Some(BaselineModel {
                s_d,
                theta,
                auc: area,
                roc,
            });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Thresholds the bottom-hat plane at `theta - 0.05`, `theta`, `theta + 0.05`
/// (clamped to `[0, 1]`) and intersects with the ROI.
pub fn proposals_from_response(
    response: &GrayImage,
    theta: f64,
    roi: &BinaryMask,
) -> Result<RegionalProposals> {
    let at = |th: f64| BinaryMask::threshold(response, th.clamp(0.0, 1.0));
    RegionalProposals::new(
        at(theta - THRESHOLD_STEP),
        at(theta),
        at(theta + THRESHOLD_STEP),
    )?
    .intersect(roi)
}

pub fn predict_baseline(model: &BaselineModel, planes: &PreprocessedPlanes) -> Result<RegionalProposals> {
    let bh = crate::preprocess::bottom_hat(
        &planes.base,
        crate::preprocess::BottomHatParams { s_d: model.s_d },
    )?;
    proposals_from_response(&bh, model.theta, &planes.roi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{bottom_hat, BottomHatParams};

    fn point(fpr: f64, tpr: f64, threshold: f64) -> RocPoint {
        RocPoint {
            fpr,
            tpr,
            threshold,
        }
    }

    #[test]
    fn grid_is_exact() {
        let g = threshold_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[12], 0.6);
        assert_eq!(g[20], 1.0);
    }

    #[test]
    fn nested_proposals_on_ramp() {
        let ramp = GrayImage::from_fn(50, 4, |_, c| c as f64 / 49.0);
        let roi = BinaryMask::full(50, 4);
        let rps = proposals_from_response(&ramp, 0.5, &roi).unwrap();
        assert!(rps.p3.is_subset_of(&rps.p2));
        assert!(rps.p2.is_subset_of(&rps.p1));
        assert!(rps.p3.count() < rps.p1.count());
    }

    #[test]
    fn top_threshold_is_clamped() {
        let ramp = GrayImage::from_fn(50, 4, |_, c| c as f64 / 49.0);
        let rps = proposals_from_response(&ramp, 1.0, &BinaryMask::full(50, 4)).unwrap();
        assert_eq!(rps.p3, rps.p2);
    }

    #[test]
    fn perfect_separation_has_unit_auc() {
        let resp = GrayImage::from_fn(21, 21, |r, c| ((r * 21 + c) % 101) as f64 / 100.0);
        let target = BinaryMask::threshold(&resp, 0.6);
        let roi = BinaryMask::full(21, 21);
        let roc = roc_curve(&[(&resp, &target, &roi)], &threshold_grid()).unwrap();
        assert!((auc(&roc) - 1.0).abs() < 1e-12);
        let op = operating_point(&roc);
        assert!(op.threshold == 0.55 || op.threshold == 0.6, "{}", op.threshold);
        assert_eq!((op.fpr, op.tpr), (0.0, 1.0));
    }

    #[test]
    fn operating_point_tie_prefers_smaller_threshold() {
        let roc = vec![point(0.1, 0.9, 0.3), point(0.1, 0.9, 0.4), point(0.5, 1.0, 0.1)];
        assert_eq!(operating_point(&roc).threshold, 0.3);
    }

    #[test]
    fn blank_target_is_an_error() {
        let resp = GrayImage::filled(5, 5, 0.3);
        let blank = BinaryMask::empty(5, 5);
        let roi = BinaryMask::full(5, 5);
        assert!(matches!(
            roc_curve(&[(&resp, &blank, &roi)], &threshold_grid()),
            Err(Error::BlankTarget)
        ));
        let planes = PreprocessedPlanes {
            base: resp.clone(),
            bottom_hat: resp.clone(),
            grad_mag: resp.clone(),
            grad_dir: resp,
            roi,
        };
        assert!(matches!(fit_baseline(&[(planes, blank)]), Err(Error::BlankTarget)));
    }

    #[test]
    fn auc_ignores_grid_order() {
        let roc = vec![point(0.0, 0.0, 1.0), point(0.2, 0.7, 0.5), point(0.6, 0.9, 0.2)];
        let mut shuffled = roc.clone();
        shuffled.reverse();
        assert_eq!(auc(&roc), auc(&shuffled));
    }

    fn pits_image() -> GrayImage {
        GrayImage::from_fn(60, 60, |r, c| {
            let pits = [(15i64, 15i64, 3i64), (40, 20, 2), (30, 45, 4)];
            if pits
                .iter()
                .any(|&(pr, pc, rad)| (r as i64 - pr).pow(2) + (c as i64 - pc).pow(2) <= rad * rad)
            {
                0.15
            } else {
                0.85
            }
        })
    }

    #[test]
    fn equal_auc_prefers_smaller_element() {
        // every element size >= 9 separates these pits perfectly, so the
        // search must stop at the first perfect one
        let base = pits_image();
        let planes = PreprocessedPlanes {
            bottom_hat: base.clone(),
            grad_mag: base.clone(),
            grad_dir: base.clone(),
            roi: BinaryMask::full(60, 60),
            base: base.clone(),
        };
        let target = BinaryMask::from_fn(60, 60, |r, c| base.get(r, c) < 0.5);
        let model = fit_baseline(&[(planes, target)]).unwrap();
        assert_eq!(model.auc, 1.0);
        let first_perfect = SD_GRID
            .iter()
            .copied()
            .find(|&s_d| {
                let bh = bottom_hat(&base, BottomHatParams { s_d }).unwrap();
                let t = BinaryMask::from_fn(60, 60, |r, c| base.get(r, c) < 0.5);
                let roc = roc_curve(&[(&bh, &t, &BinaryMask::full(60, 60))], &threshold_grid()).unwrap();
                auc(&roc) == 1.0
            })
            .unwrap();
        assert_eq!(model.s_d, first_perfect);
    }

    #[test]
    fn model_json_shape() {
        let m = BaselineModel {
            s_d: 7,
            theta: 0.35,
            auc: 0.9,
            roc: vec![point(0.1, 0.8, 0.35)],
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["s_d", "theta", "auc", "roc"] {
            assert!(v.get(key).is_some());
        }
    }
}
