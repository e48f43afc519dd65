//! Experiment runner: stack preparation, model fitting, and the three
//! evaluations (segmentation quality, noisy-label rejection, label selection).
//!
//! Evaluation work runs in parallel per image; every output file is written
//! afterwards, in order, by [`OutputWriter`].

mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ModelKind, TrainTarget};
pub use report::{
    rcap_table, segmentation_table, selection_table, OutputWriter, RunManifest, QUEUE_FILE,
};

use crate::baseline::{fit_baseline, predict_baseline, BaselineModel, RegionalProposals};
use crate::dataset::{
    drop_unannotated, load_stack, make_split, read_mask_png, write_gray_png, write_mask_png,
    ImageRecord, LabelKind, StackSplit,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion, inf_as_string, inf_as_string_pair, SegmentationScores};
use crate::paresn::{fit_paresn, predict_paresn, read_model, write_model, ParEsnModel, MAGIC};
use crate::preprocess::{preprocess_with, PreprocessConfig, PreprocessedPlanes};
use crate::raster::BinaryMask;
use crate::rcap::{derive_seed, rcap, RcapConfig};
use crate::tlsa::{tlsa, Branch, Tau, TlsaConfig};

/// One image brought to plane resolution: input planes plus every mask
/// resized (nearest neighbour) to match.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub id: String,
    pub index_in_stack: usize,
    pub planes: PreprocessedPlanes,
    pub g1: BinaryMask,
    pub g2: BinaryMask,
    pub ground_truth: Option<BinaryMask>,
}

impl PreparedImage {
    pub fn label(&self, kind: LabelKind) -> BinaryMask {
        match kind {
            LabelKind::G1 => self.g1.clone(),
            LabelKind::G2 => self.g2.clone(),
            LabelKind::G1AndG2 => self.g1.and(&self.g2).expect("labels share dimensions"),
        }
    }

    pub fn target(&self, target: TrainTarget) -> Result<BinaryMask> {
        match target {
            TrainTarget::Label(kind) => Ok(self.label(kind)),
            TrainTarget::GroundTruth => self.ground_truth.clone().ok_or_else(|| {
                Error::InvalidConfig(format!("{} has no ground truth mask", self.id))
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PreparedStack {
    /// In stack order.
    pub images: Vec<PreparedImage>,
    pub split: StackSplit,
    /// Ids removed because neither grader annotated them.
    pub dropped: Vec<String>,
}

impl PreparedStack {
    pub fn train(&self) -> impl Iterator<Item = &PreparedImage> {
        self.images.iter().filter(|i| self.split.train_ids.contains(&i.id))
    }

    pub fn test(&self) -> Vec<&PreparedImage> {
        self.images
            .iter()
            .filter(|i| self.split.test_ids.contains(&i.id))
            .collect()
    }

    pub fn plane_dims(&self) -> (usize, usize) {
        self.images
            .first()
            .map(|i| i.planes.dims())
            .unwrap_or((0, 0))
    }
}

/// Drops unannotated images, splits, and preprocesses in parallel.
pub fn prepare_records(records: Vec<ImageRecord>, cfg: &PreprocessConfig) -> Result<PreparedStack> {
    let (mut kept, dropped) = drop_unannotated(records);
    kept.sort_by_key(|r| r.index_in_stack);
    let split = make_split(&kept)?;
    let size = cfg.size;
    let images = kept
        .par_iter()
        .map(|rec| {
            let planes = preprocess_with(&rec.image, cfg)?;
            let resize = |m: &BinaryMask| m.resize_nearest(size, size);
            Ok(PreparedImage {
                id: rec.id.clone(),
                index_in_stack: rec.index_in_stack,
                planes,
                g1: resize(&rec.g1),
                g2: resize(&rec.g2),
                ground_truth: rec.ground_truth.as_ref().map(resize),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedStack {
        images,
        split,
        dropped,
    })
}

pub fn prepare_stack(cfg: &ExperimentConfig) -> Result<PreparedStack> {
    prepare_records(load_stack(&cfg.stack_dir)?, &cfg.preprocess)
}

/// Writes `<id>.{base,bh,gm,gd,roi}.png` for every image.
pub fn dump_planes(stack: &PreparedStack, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for img in &stack.images {
        let p = &img.planes;
        for (suffix, plane) in [
            ("base", &p.base),
            ("bh", &p.bottom_hat),
            ("gm", &p.grad_mag),
            ("gd", &p.grad_dir),
        ] {
            write_gray_png(&dir.join(format!("{}.{suffix}.png", img.id)), plane)?;
        }
        write_mask_png(&dir.join(format!("{}.roi.png", img.id)), &p.roi)?;
    }
    Ok(())
}

/// Reads `<id>.P1.png`, `<id>.P2.png`, `<id>.P3.png` for every id and checks
/// them against `dims`.
pub fn ingest_external_rps(
    dir: &Path,
    ids: &[String],
    dims: (usize, usize),
) -> Result<BTreeMap<String, RegionalProposals>> {
    let mut out = BTreeMap::new();
    for id in ids {
        let mut masks = Vec::with_capacity(3);
        for k in 1..=3 {
            let path = dir.join(format!("{id}.P{k}.png"));
            if !path.is_file() {
                return Err(Error::MissingFile {
                    id: id.clone(),
                    path,
                });
            }
            let mask = read_mask_png(&path)?;
            if mask.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: mask.dims(),
                });
            }
            masks.push(mask);
        }
        let [p1, p2, p3]: [BinaryMask; 3] = masks.try_into().expect("three proposals");
        out.insert(id.clone(), RegionalProposals::new(p1, p2, p3)?);
    }
    Ok(out)
}

pub fn write_proposals(dir: &Path, id: &str, rps: &RegionalProposals) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, p) in rps.as_array().iter().enumerate() {
        write_mask_png(&dir.join(format!("{id}.P{}.png", k + 1)), p)?;
    }
    Ok(())
}

pub enum TrainedModel {
    /// One fit per repetition; the first is used for label selection.
    Baseline(Vec<BaselineModel>),
    Paresn(ParEsnModel),
    External(BTreeMap<String, RegionalProposals>),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Baseline(_) => ModelKind::Baseline,
            TrainedModel::Paresn(_) => ModelKind::Paresn,
            TrainedModel::External(_) => ModelKind::External,
        }
    }

    pub fn proposals(&self, img: &PreparedImage) -> Result<RegionalProposals> {
        self.proposals_for_rep(img, 0)
    }

    fn proposals_for_rep(&self, img: &PreparedImage, rep: usize) -> Result<RegionalProposals> {
        match self {
            TrainedModel::Baseline(fits) => predict_baseline(&fits[rep], &img.planes),
            TrainedModel::Paresn(model) => predict_paresn(model, &img.planes),
            TrainedModel::External(map) => map.get(&img.id).cloned().ok_or_else(|| Error::MissingFile {
                id: img.id.clone(),
                path: PathBuf::from(format!("{}.P1.png", img.id)),
            }),
        }
    }

    fn reps(&self) -> usize {
        match self {
            TrainedModel::Baseline(fits) => fits.len(),
            _ => 1,
        }
    }

    pub fn summary(&self) -> ModelSummary {
        match self {
            TrainedModel::Baseline(fits) => ModelSummary::Baseline {
                fits: fits
                    .iter()
                    .map(|f| BaselineFit {
                        s_d: f.s_d,
                        theta: f.theta,
                        auc: f.auc,
                    })
                    .collect(),
            },
            TrainedModel::Paresn(m) => ModelSummary::Paresn {
                images_consumed: m.images_consumed,
                windows_trained: m.windows_trained,
                ssim_history: m.ssim_history.clone(),
            },
            TrainedModel::External(map) => ModelSummary::External { images: map.len() },
        }
    }

    /// Baselines are stored as JSON, ParESN models in their binary format.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        match self {
            TrainedModel::Baseline(fits) => fs::write(path, serde_json::to_vec_pretty(fits)?)?,
            TrainedModel::Paresn(m) => {
                let mut out = BufWriter::new(fs::File::create(path)?);
                write_model(&mut out, m)?;
                std::io::Write::flush(&mut out)?;
            }
            TrainedModel::External(_) => {
                return Err(Error::InvalidConfig("external proposals are not a model file".into()))
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(fs::File::open(path)?);
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.starts_with(MAGIC) {
            return Ok(TrainedModel::Paresn(read_model(&mut bytes.as_slice())?));
        }
        let fits: Vec<BaselineModel> = serde_json::from_slice(&bytes)
            .map_err(|e| Error::BadModelFile(format!("{}: {e}", path.display())))?;
        if fits.is_empty() {
            return Err(Error::BadModelFile(format!("{}: no baseline fits", path.display())));
        }
        Ok(TrainedModel::Baseline(fits))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub s_d: usize,
    pub theta: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSummary {
    Baseline { fits: Vec<BaselineFit> },
    Paresn {
        images_consumed: usize,
        windows_trained: usize,
        ssim_history: Vec<f64>,
    },
    External { images: usize },
}

/// Fits the configured model on the training split, or loads `model_file`.
pub fn train_model(cfg: &ExperimentConfig, stack: &PreparedStack) -> Result<TrainedModel> {
    if let Some(path) = &cfg.model_file {
        return TrainedModel::load(path);
    }
    match cfg.model {
        ModelKind::Baseline => {
            let candidates: Vec<(PreprocessedPlanes, BinaryMask)> = stack
                .train()
                .map(|img| Ok((img.planes.clone(), img.target(cfg.train_label)?)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|(_, t)| !t.is_blank())
                .collect();
            if candidates.is_empty() {
                return Err(Error::BlankTarget);
            }
            let fits = (0..cfg.baseline_reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, rep as u64));
                    let pick = &candidates[rng.random_range(0..candidates.len())];
                    fit_baseline(std::slice::from_ref(pick))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainedModel::Baseline(fits))
        }
        ModelKind::Paresn => {
            let train: Vec<(PreprocessedPlanes, BinaryMask)> = stack
                .train()
                .map(|img| Ok((img.planes.clone(), img.target(cfg.train_label)?)))
                .collect::<Result<_>>()?;
            Ok(TrainedModel::Paresn(fit_paresn(&cfg.esn_params(), &train)?))
        }
        ModelKind::External => {
            let dir = cfg
                .external_dir
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("model = external needs external_dir".into()))?;
            Ok(TrainedModel::External(ingest_external_rps(
                dir,
                &stack.split.test_ids,
                stack.plane_dims(),
            )?))
        }
    }
}

/// Proposals for every test image, in stack order.
pub fn test_proposals(model: &TrainedModel, stack: &PreparedStack) -> Result<Vec<RegionalProposals>> {
    stack.test().par_iter().map(|img| model.proposals(img)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Population mean and standard deviation; `NaN` for no values.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRow {
    /// `G1`, `G2`, `G1andG2`, or `GT`.
    pub label: String,
    /// `P1`, `P2` or `P3`.
    pub proposal: String,
    pub dc: Stat,
    pub iou: Stat,
    pub sen: Stat,
    pub spec: Stat,
    pub acc: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub model: ModelKind,
    pub train_label: TrainTarget,
    pub test_images: usize,
    pub model_summary: ModelSummary,
    pub rows: Vec<SegmentationRow>,
}

/// Scores inside the ROI, or over the whole frame when the ROI is empty.
fn scores(pred: &BinaryMask, target: &BinaryMask, roi: &BinaryMask) -> Result<SegmentationScores> {
    match confusion(pred, target, roi) {
        Err(Error::EmptyRoi) => {
            let (h, w) = roi.dims();
            Ok(confusion(pred, target, &BinaryMask::full(w, h))?.scores())
        }
        other => Ok(other?.scores()),
    }
}

/// Scores every proposal of every test image against each label variant.
/// Baseline repetitions are pooled.
pub fn evaluate_segmentation(
    cfg: &ExperimentConfig,
    stack: &PreparedStack,
    model: &TrainedModel,
) -> Result<SegmentationReport> {
    let test = stack.test();
    let has_gt = !test.is_empty() && test.iter().all(|i| i.ground_truth.is_some());
    let mut labels: Vec<TrainTarget> = LabelKind::ALL.into_iter().map(TrainTarget::Label).collect();
    if has_gt {
        labels.push(TrainTarget::GroundTruth);
    }

    // [rep * images + image][label][proposal]
    let jobs: Vec<(usize, &PreparedImage)> = (0..model.reps())
        .flat_map(|rep| test.iter().map(move |img| (rep, *img)))
        .collect();
    let per_image: Vec<Vec<[SegmentationScores; 3]>> = jobs
        .par_iter()
        .map(|&(rep, img)| {
            let rps = model.proposals_for_rep(img, rep)?;
            labels
                .iter()
                .map(|&l| {
                    let target = img.target(l)?;
                    let [p1, p2, p3] = rps.as_array();
                    Ok([
                        scores(p1, &target, &img.planes.roi)?,
                        scores(p2, &target, &img.planes.roi)?,
                        scores(p3, &target, &img.planes.roi)?,
                    ])
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (li, label) in labels.iter().enumerate() {
        for k in 0..3 {
            let col = |f: fn(&SegmentationScores) -> f64| {
                Stat::of(&per_image.iter().map(|s| f(&s[li][k])).collect::<Vec<_>>())
            };
            rows.push(SegmentationRow {
                label: label.name().to_string(),
                proposal: format!("P{}", k + 1),
                dc: col(|s| s.dc),
                iou: col(|s| s.iou),
                sen: col(|s| s.sen),
                spec: col(|s| s.spec),
                acc: col(|s| s.acc),
            });
        }
    }
    Ok(SegmentationReport {
        model: model.kind(),
        train_label: cfg.train_label,
        test_images: test.len(),
        model_summary: model.summary(),
        rows,
    })
}

/// TLSA outcomes when one slot holds the true label and the other an RCAP
/// corruption of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcapSummary {
    pub kappa: usize,
    pub trials: usize,
    /// TLSA picked the slot holding the true label.
    pub correct: usize,
    /// TLSA picked the corrupted label.
    pub wrong: usize,
    pub manual: usize,
    pub frac_correct: f64,
    pub frac_wrong: f64,
    pub frac_manual: f64,
    /// Mean over repetitions of `correct / (correct + wrong)`.
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Mean over repetitions of `(correct + manual) / trials`, i.e. the
    /// fraction of images where the noisy label was not accepted.
    pub mean_not_fooled: f64,
    pub per_rep_accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcapReport {
    pub model: ModelKind,
    pub true_label: TrainTarget,
    pub w: usize,
    pub repetitions: usize,
    pub test_images: usize,
    pub per_kappa: Vec<RcapSummary>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Correct,
    Wrong,
    Manual,
}

/// Seed of one RCAP trial.
fn trial_seed(seed: u64, kappa: usize, rep: usize, image: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, kappa as u64), rep as u64), image as u64)
}

pub fn evaluate_rcap(
    cfg: &ExperimentConfig,
    stack: &PreparedStack,
    proposals: &[RegionalProposals],
    source: ModelKind,
) -> Result<RcapReport> {
    let test = stack.test();
    if test.is_empty() {
        return Err(Error::InvalidConfig("no test images".into()));
    }
    let truths: Vec<BinaryMask> = test
        .iter()
        .map(|img| img.target(cfg.train_label))
        .collect::<Result<_>>()?;
    let mut per_kappa = Vec::with_capacity(cfg.kappas.len());
    for &kappa in &cfg.kappas {
        let mut per_rep = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions {
            let outcomes: Vec<Outcome> = (0..test.len())
                .into_par_iter()
                .map(|j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.rng_seed, kappa, rep, j));
                    let true_first: bool = rng.random();
                    let rcap_cfg = RcapConfig {
                        kappa,
                        rng_seed: rng.random(),
                        ..cfg.rcap
                    };
                    let truth = &truths[j];
                    let noisy = rcap(truth, &rcap_cfg)?;
                    let (t1, t2) = if true_first { (truth, &noisy) } else { (&noisy, truth) };
                    let d = tlsa(&proposals[j], t1, t2, &test[j].planes.base, &cfg.tlsa)?;
                    let true_tau = if true_first { Tau::G1 } else { Tau::G2 };
                    Ok(match d.tau {
                        Tau::Manual => Outcome::Manual,
                        t if t == true_tau => Outcome::Correct,
                        _ => Outcome::Wrong,
                    })
                })
                .collect::<Result<_>>()?;
            per_rep.push(outcomes);
        }
        let count = |o: Outcome| per_rep.iter().flatten().filter(|&&x| x == o).count();
        let (correct, wrong, manual) = (count(Outcome::Correct), count(Outcome::Wrong), count(Outcome::Manual));
        let trials = correct + wrong + manual;
        let per_rep_accuracy: Vec<f64> = per_rep
            .iter()
            .filter_map(|outs| {
                let c = outs.iter().filter(|&&o| o == Outcome::Correct).count();
                let w = outs.iter().filter(|&&o| o == Outcome::Wrong).count();
                (c + w > 0).then(|| c as f64 / (c + w) as f64)
            })
            .collect();
        let not_fooled: Vec<f64> = per_rep
            .iter()
            .map(|outs| {
                outs.iter().filter(|&&o| o != Outcome::Wrong).count() as f64 / outs.len() as f64
            })
            .collect();
        let acc = Stat::of(&per_rep_accuracy);
        per_kappa.push(RcapSummary {
            kappa,
            trials,
            correct,
            wrong,
            manual,
            frac_correct: correct as f64 / trials as f64,
            frac_wrong: wrong as f64 / trials as f64,
            frac_manual: manual as f64 / trials as f64,
            mean_accuracy: acc.mean,
            std_accuracy: acc.std,
            mean_not_fooled: Stat::of(&not_fooled).mean,
            per_rep_accuracy,
        });
    }
    Ok(RcapReport {
        model: source,
        true_label: cfg.train_label,
        w: cfg.rcap.w,
        repetitions: cfg.repetitions,
        test_images: test.len(),
        per_kappa,
    })
}

/// One line of `decisions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub id: String,
    pub tau: Tau,
    #[serde(with = "inf_as_string")]
    pub ratio_mu: f64,
    #[serde(with = "inf_as_string")]
    pub ratio_v: f64,
    pub eta: u8,
    #[serde(with = "inf_as_string")]
    pub phi_pi: f64,
    pub psi_star: [usize; 2],
    pub mu_iou: [f64; 2],
    #[serde(with = "inf_as_string_pair")]
    pub phi: [f64; 2],
    pub branch_taken: Branch,
    pub model_source: ModelKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub images: usize,
    pub frac_g1: f64,
    pub frac_g2: f64,
    pub frac_manual: f64,
    /// Among automatically decided images with a ground truth, the fraction
    /// where the chosen label scores at least as well (DC) as the other.
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub model: ModelKind,
    pub summary: SelectionSummary,
    pub branch_counts: BTreeMap<String, usize>,
    pub decisions: Vec<DecisionRecord>,
}

pub fn evaluate_selection(
    tlsa_cfg: &TlsaConfig,
    stack: &PreparedStack,
    proposals: &[RegionalProposals],
    source: ModelKind,
) -> Result<SelectionReport> {
    let test = stack.test();
    if test.is_empty() {
        return Err(Error::InvalidConfig("no test images".into()));
    }
    let results: Vec<(DecisionRecord, Option<f64>)> = test
        .par_iter()
        .zip(proposals)
        .map(|(img, rps)| {
            let d = tlsa(rps, &img.g1, &img.g2, &img.planes.base, tlsa_cfg)?;
            let correct = match (&img.ground_truth, d.tau) {
                (Some(gt), Tau::G1 | Tau::G2) => {
                    let roi = &img.planes.roi;
                    let dc1 = scores(&img.g1, gt, roi)?.dc;
                    let dc2 = scores(&img.g2, gt, roi)?.dc;
                    let (chosen, other) = if d.tau == Tau::G1 { (dc1, dc2) } else { (dc2, dc1) };
                    Some(if chosen >= other { 1.0 } else { 0.0 })
                }
                _ => None,
            };
            let record = DecisionRecord {
                id: img.id.clone(),
                tau: d.tau,
                ratio_mu: d.ratio_mu,
                ratio_v: d.ratio_v,
                eta: d.eta,
                phi_pi: d.report.phi_pi,
                psi_star: d.report.psi_star,
                mu_iou: d.report.mu_iou,
                phi: d.report.phi,
                branch_taken: d.branch_taken,
                model_source: source,
            };
            Ok((record, correct))
        })
        .collect::<Result<_>>()?;

    let n = results.len() as f64;
    let frac = |tau: Tau| results.iter().filter(|(d, _)| d.tau == tau).count() as f64 / n;
    let hits: Vec<f64> = results.iter().filter_map(|(_, c)| *c).collect();
    let acc = (!hits.is_empty()).then(|| Stat::of(&hits));
    let mut branch_counts = BTreeMap::new();
    for (d, _) in &results {
        let name = serde_json::to_value(d.branch_taken)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        *branch_counts.entry(name).or_insert(0) += 1;
    }
    Ok(SelectionReport {
        model: source,
        summary: SelectionSummary {
            images: results.len(),
            frac_g1: frac(Tau::G1),
            frac_g2: frac(Tau::G2),
            frac_manual: frac(Tau::Manual),
            mean_accuracy: acc.map(|s| s.mean),
            std_accuracy: acc.map(|s| s.std),
        },
        branch_counts,
        decisions: results.into_iter().map(|(d, _)| d).collect(),
    })
}

/// Describes the manual review queue for the review service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueManifest {
    pub stack_dir: PathBuf,
    pub decisions_file: PathBuf,
    pub proposals_dir: PathBuf,
    /// Side of the square rasters the proposals were computed at.
    pub plane_size: usize,
    /// Ids routed to manual review, sorted.
    pub manual_ids: Vec<String>,
}

fn prepared(cfg: &ExperimentConfig) -> Result<(PreparedStack, TrainedModel)> {
    cfg.validate()?;
    let stack = prepare_stack(cfg)?;
    let model = train_model(cfg, &stack)?;
    Ok((stack, model))
}

fn manifest(command: &str, cfg: &ExperimentConfig, stack: &PreparedStack) -> RunManifest {
    RunManifest::new(command, cfg, &stack.split, &stack.dropped)
}

/// Trains (or loads) the model, then writes `metrics.json`, `tables.txt` and
/// `run_manifest.json` to the output directory.
pub fn run_segmentation_eval(cfg: &ExperimentConfig) -> Result<SegmentationReport> {
    let (stack, model) = prepared(cfg)?;
    let report = evaluate_segmentation(cfg, &stack, &model)?;
    let out = OutputWriter::create(&cfg.out_dir)?;
    out.json("metrics.json", &report)?;
    out.text("tables.txt", &segmentation_table(&report))?;
    out.manifest(&manifest("eval-seg", cfg, &stack))?;
    Ok(report)
}

pub fn run_rcap_eval(cfg: &ExperimentConfig) -> Result<RcapReport> {
    let (stack, model) = prepared(cfg)?;
    let proposals = test_proposals(&model, &stack)?;
    let report = evaluate_rcap(cfg, &stack, &proposals, model.kind())?;
    let out = OutputWriter::create(&cfg.out_dir)?;
    out.json("metrics.json", &report)?;
    out.text("tables.txt", &rcap_table(&report))?;
    out.manifest(&manifest("eval-rcap", cfg, &stack))?;
    Ok(report)
}

/// Runs label selection on the test images and writes `decisions.jsonl`,
/// `queue.json`, `metrics.json`, `tables.txt`, the proposal rasters and
/// `run_manifest.json`.
pub fn run_selection(cfg: &ExperimentConfig) -> Result<SelectionReport> {
    let (stack, model) = prepared(cfg)?;
    let proposals = test_proposals(&model, &stack)?;
    let report = evaluate_selection(&cfg.tlsa, &stack, &proposals, model.kind())?;

    let out = OutputWriter::create(&cfg.out_dir)?;
    out.jsonl("decisions.jsonl", &report.decisions)?;
    let proposals_dir = cfg.out_dir.join("proposals");
    for (img, rps) in stack.test().iter().zip(&proposals) {
        write_proposals(&proposals_dir, &img.id, rps)?;
    }
    let mut manual_ids: Vec<String> = report
        .decisions
        .iter()
        .filter(|d| d.tau == Tau::Manual)
        .map(|d| d.id.clone())
        .collect();
    manual_ids.sort();
    out.json(
        QUEUE_FILE,
        &QueueManifest {
            stack_dir: cfg.stack_dir.clone(),
            decisions_file: cfg.out_dir.join("decisions.jsonl"),
            proposals_dir,
            plane_size: cfg.preprocess.size,
            manual_ids,
        },
    )?;
    out.json("metrics.json", &report.summary)?;
    out.text("tables.txt", &selection_table(&report))?;
    out.manifest(&manifest("select", cfg, &stack))?;
    Ok(report)
}

/// Fits the model and saves it to `path`.
pub fn run_fit(cfg: &ExperimentConfig, path: &Path) -> Result<ModelSummary> {
    let (stack, model) = prepared(cfg)?;
    model.save(path)?;
    let out = OutputWriter::create(&cfg.out_dir)?;
    out.manifest(&manifest("fit", cfg, &stack))?;
    Ok(model.summary())
}

/// Writes proposals for the test images to `<out_dir>/proposals`.
pub fn run_predict(cfg: &ExperimentConfig) -> Result<usize> {
    let (stack, model) = prepared(cfg)?;
    let dir = cfg.out_dir.join("proposals");
    let all = test_proposals(&model, &stack)?;
    for (img, rps) in stack.test().iter().zip(&all) {
        write_proposals(&dir, &img.id, rps)?;
    }
    OutputWriter::create(&cfg.out_dir)?.manifest(&manifest("predict", cfg, &stack))?;
    Ok(all.len())
}

#[cfg(test)]
mod tests;
