//! Target label selection: decide per image which of two manual labels the
//! proposals support, or send the image to a human.
//!
//! The label-variation test compares `min(|T1|, |T2|) - |T1 ∧ T2|` against
//! `w`. Written the other way round (intersection minus minimum) the test is
//! always true, since the intersection can never exceed the smaller label.

use serde::{Deserialize, Serialize};

use crate::baseline::RegionalProposals;
use crate::error::{Error, Result};
use crate::metrics::{inf_as_string, overlap_report, OverlapReport};
use crate::raster::{ensure_same_dims, BinaryMask, GrayImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TlsaConfig {
    /// Proposal disagreement above which small label differences go to a human.
    pub delta1: f64,
    /// Mean-overlap ratio margin.
    pub delta2: f64,
    /// Variance-over-mean ratio margin.
    pub delta3: f64,
    /// Labels differing by fewer than this many pixels count as nearly equal.
    pub w: usize,
}

impl Default for TlsaConfig {
    fn default() -> Self {
        Self {
            delta1: 0.4,
            delta2: 1.1,
            delta3: 1.02,
            w: 100,
        }
    }
}

impl TlsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta1 > 0.0 && self.delta2 > 1.0 && self.delta3 > 1.0 && self.w > 0) {
            return Err(Error::InvalidConfig(format!(
                "tlsa thresholds need delta1 > 0, delta2 > 1, delta3 > 1, w > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tau {
    Manual,
    G1,
    G2,
}

impl Tau {
    pub fn swapped(self) -> Self {
        match self {
            Tau::Manual => Tau::Manual,
            Tau::G1 => Tau::G2,
            Tau::G2 => Tau::G1,
        }
    }
}

/// Which rule produced the decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Neither label has any foreground.
    BlankLabels,
    /// Labels nearly equal while the proposals disagree.
    ProposalDisagreement,
    /// No proposal overlaps either label.
    NoOverlap,
    /// A ratio favours the first label.
    FirstByRatio,
    /// A ratio favours the second label.
    SecondByRatio,
    /// Both labels share their best proposal; the mean overlap decides.
    SharedBestProposal,
    /// The labels' best proposals differ.
    SplitBestProposal,
}

impl Branch {
    pub const ALL: [Branch; 7] = [
        Branch::BlankLabels,
        Branch::ProposalDisagreement,
        Branch::NoOverlap,
        Branch::FirstByRatio,
        Branch::SecondByRatio,
        Branch::SharedBestProposal,
        Branch::SplitBestProposal,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TlsaDecision {
    pub tau: Tau,
    #[serde(with = "inf_as_string")]
    pub ratio_mu: f64,
    #[serde(with = "inf_as_string")]
    pub ratio_v: f64,
    pub eta: u8,
    pub report: OverlapReport,
    pub branch_taken: Branch,
}

/// `num / den` with `x/0 = inf` for `x > 0`, and `0/0 = inf/inf = 1`.
pub fn guarded_ratio(num: f64, den: f64) -> f64 {
    match (num, den) {
        (n, d) if n.is_infinite() && d.is_infinite() => 1.0,
        (n, d) if d == 0.0 => {
            if n == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        }
        (n, d) => n / d,
    }
}

/// Label-variation flag: 1 when the labels differ by fewer than `w` pixels.
pub fn small_variation(t1: &BinaryMask, t2: &BinaryMask, w: usize) -> Result<u8> {
    let inter = t1.intersection_count(t2)?;
    let smaller = t1.count().min(t2.count());
    Ok(u8::from(smaller - inter < w))
}

pub fn tlsa(
    rps: &RegionalProposals,
    t1: &BinaryMask,
    t2: &BinaryMask,
    img: &GrayImage,
    cfg: &TlsaConfig,
) -> Result<TlsaDecision> {
    ensure_same_dims(rps.dims(), t1.dims())?;
    ensure_same_dims(rps.dims(), t2.dims())?;
    ensure_same_dims(rps.dims(), img.dims())?;

    let eta = small_variation(t1, t2, cfg.w)?;
    let report = overlap_report(rps, t1, t2, img)?;
    let ratio_mu = guarded_ratio(report.mu_iou[0], report.mu_iou[1]);
    let ratio_v = guarded_ratio(report.phi[1], report.phi[0]);

    let (tau, branch_taken) = if t1.is_blank() && t2.is_blank() {
        (Tau::Manual, Branch::BlankLabels)
    } else if eta == 1 && report.phi_pi > cfg.delta1 {
        (Tau::Manual, Branch::ProposalDisagreement)
    } else if report.mu_iou[0] == 0.0 && report.mu_iou[1] == 0.0 {
        (Tau::Manual, Branch::NoOverlap)
    } else if ratio_mu > cfg.delta2 || ratio_v > cfg.delta3 {
        (Tau::G1, Branch::FirstByRatio)
    } else if ratio_mu < 1.0 / cfg.delta2 || ratio_v < 1.0 / cfg.delta3 {
        (Tau::G2, Branch::SecondByRatio)
    } else if report.psi_star[0] == report.psi_star[1] {
        let tau = if ratio_mu >= 1.0 { Tau::G1 } else { Tau::G2 };
        (tau, Branch::SharedBestProposal)
    } else {
        (Tau::Manual, Branch::SplitBestProposal)
    };

    Ok(TlsaDecision {
        tau,
        ratio_mu,
        ratio_v,
        eta,
        report,
        branch_taken,
    })
}
