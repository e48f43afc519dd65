//! Overlap and confusion metrics over binary masks.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baseline::RegionalProposals;
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, GrayImage};

/// Intersection over union. Two empty masks agree perfectly (1.0).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Dice coefficient `2TP / (2TP + FP + FN)`.
    pub fn dc(&self) -> f64 {
        ratio_or_one(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn iou(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn sensitivity(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio_or_one(self.tp + self.tn, self.total())
    }

    pub fn scores(&self) -> SegmentationScores {
        SegmentationScores {
            dc: self.dc(),
            iou: self.iou(),
            sen: self.sensitivity(),
            spec: self.specificity(),
            acc: self.accuracy(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub dc: f64,
    pub iou: f64,
    pub sen: f64,
    pub spec: f64,
    pub acc: f64,
}

/// Pixel confusion counts restricted to `roi`.
pub fn confusion(pred: &BinaryMask, target: &BinaryMask, roi: &BinaryMask) -> Result<Confusion> {
    ensure_same_dims(pred.dims(), target.dims())?;
    ensure_same_dims(pred.dims(), roi.dims())?;
    let mut c = Confusion::default();
    for ((&p, &t), &m) in pred.bits().iter().zip(target.bits()).zip(roi.bits()) {
        if !m {
            continue;
        }
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    if c.total() == 0 {
        return Err(Error::EmptyRoi);
    }
    Ok(c)
}

/// Soft dice loss `sum_k (1 - 2 p y / (p + y + 1))`.
pub fn dc_loss(pred_prob: &GrayImage, target: &BinaryMask) -> Result<f64> {
    ensure_same_dims(pred_prob.dims(), target.dims())?;
    Ok(pred_prob
        .pixels()
        .iter()
        .zip(target.bits())
        .map(|(&p, &t)| {
            let y = if t { 1.0 } else { 0.0 };
            1.0 - 2.0 * p * y / (p + y + 1.0)
        })
        .sum())
}

/// Population variance over mean; `+inf` when the mean is zero or there is
/// nothing to average.
pub fn variance_over_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return f64::INFINITY;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var / mean
}

/// Agreement statistics among the proposals and between proposals and each
/// label. Index 0 of the per-label arrays refers to the first label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// IOUs of (P1,P2), (P1,P3), (P2,P3).
    pub iou_pairwise: [f64; 3],
    #[serde(with = "inf_as_string")]
    pub phi_pi: f64,
    pub mu_iou: [f64; 2],
    /// 1-based index of the proposal that overlaps each label best.
    pub psi_star: [usize; 2],
    #[serde(with = "inf_as_string_pair")]
    pub phi: [f64; 2],
}

/// Variance over mean of the three pairwise proposal IOUs.
pub fn proposal_disagreement(rps: &RegionalProposals) -> Result<([f64; 3], f64)> {
    let [p1, p2, p3] = rps.as_array();
    let pairwise = [iou(p1, p2)?, iou(p1, p3)?, iou(p2, p3)?];
    Ok((pairwise, variance_over_mean(&pairwise)))
}

fn label_terms(
    rps: &RegionalProposals,
    label: &BinaryMask,
    union: &BinaryMask,
    img: &GrayImage,
) -> Result<(f64, usize, f64)> {
    let ious: Vec<f64> = rps
        .as_array()
        .iter()
        .map(|p| iou(p, label))
        .collect::<Result<_>>()?;
    let mu = ious.iter().sum::<f64>() / 3.0;
    let mut best = 0;
    for (i, &v) in ious.iter().enumerate() {
        if v > ious[best] {
            best = i;
        }
    }
    let sub_image: Vec<f64> = img
        .pixels()
        .iter()
        .zip(label.bits())
        .zip(union.bits())
        .map(|((&v, &l), &u)| if l && u { v } else { 0.0 })
        .filter(|&v| v > 0.0)
        .collect();
    Ok((mu, best + 1, variance_over_mean(&sub_image)))
}

pub fn overlap_report(
    rps: &RegionalProposals,
    t1: &BinaryMask,
    t2: &BinaryMask,
    img: &GrayImage,
) -> Result<OverlapReport> {
    for m in [t1, t2, &rps.p2, &rps.p3] {
        ensure_same_dims(rps.p1.dims(), m.dims())?;
    }
    ensure_same_dims(rps.p1.dims(), img.dims())?;
    let (iou_pairwise, phi_pi) = proposal_disagreement(rps)?;
    let union = rps.union();
    let (mu1, psi1, phi1) = label_terms(rps, t1, &union, img)?;
    let (mu2, psi2, phi2) = label_terms(rps, t2, &union, img)?;
    Ok(OverlapReport {
        iou_pairwise,
        phi_pi,
        mu_iou: [mu1, mu2],
        psi_star: [psi1, psi2],
        phi: [phi1, phi2],
    })
}

/// Serializes non-finite values as `"inf"` / `"-inf"` / `"nan"` strings.
pub mod inf_as_string {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(crate) enum Repr {
        Num(f64),
        Text(String),
    }

    pub(crate) fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    pub(crate) fn from_repr<E: serde::de::Error>(r: Repr) -> std::result::Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("bad float `{other}`"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

pub mod inf_as_string_pair {
    use super::inf_as_string::{from_repr, to_repr, Repr};
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64; 2], s: S) -> std::result::Result<S::Ok, S::Error> {
        [to_repr(v[0]), to_repr(v[1])].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<[f64; 2], D::Error> {
        let [a, b] = <[Repr; 2]>::deserialize(d)?;
        Ok([from_repr(a)?, from_repr(b)?])
    }
}
