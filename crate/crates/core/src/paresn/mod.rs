//! Parallel echo state network: several independently initialised
//! reservoirs read out by ridge regression, each producing one proposal.
//!
//! Reservoir states are kept per pixel position of a sub-window. Processing a
//! window advances every pixel's state by one step from the state that pixel
//! position held after the previous window, so information flows between
//! consecutive windows and images rather than along the pixels of one window.

mod io;
mod reservoir;
pub mod ssim;
mod windows;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{read_model, write_model, MAGIC};
pub use reservoir::{spectral_radius, SparseMatrix};
pub use windows::{extract_subwindows, roi_centroid, SubWindow};

use crate::baseline::RegionalProposals;
use crate::dataset::TRAIN_IMAGES;
use crate::error::{Error, Result};
use crate::preprocess::PreprocessedPlanes;
use crate::raster::BinaryMask;

/// SSIM values averaged by the stopping rule.
pub const STOP_WINDOW: usize = 3;
pub const STOP_MEAN: f64 = 0.8;
pub const STOP_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsnHyperParams {
    /// Reservoir size.
    pub m: usize,
    /// Input planes per pixel.
    pub n: usize,
    /// Output classes.
    pub c: usize,
    /// Leak rate.
    pub alpha: f64,
    /// Ridge coefficient.
    pub lambda: f64,
    pub spectral_radius: f64,
    /// Probability that a recurrent connection exists.
    pub sparsity: f64,
    /// Sub-window side.
    pub w_m: usize,
    pub branches: usize,
    pub rng_seed: u64,
}

impl Default for EsnHyperParams {
    fn default() -> Self {
        Self {
            m: 100,
            n: 4,
            c: 2,
            alpha: 0.95,
            lambda: 1e-5,
            spectral_radius: 0.9,
            sparsity: 0.1,
            w_m: 100,
            branches: 3,
            rng_seed: 0,
        }
    }
}

impl EsnHyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m <= self.n {
            return bad(format!("reservoir size {} must exceed input planes {}", self.m, self.n));
        }
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return bad(format!("leak rate {} outside [0, 1]", self.alpha));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("ridge coefficient {} must be positive", self.lambda));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius <= 1.0) {
            return bad(format!("spectral radius {} outside (0, 1]", self.spectral_radius));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return bad(format!("sparsity {} outside [0, 1]", self.sparsity));
        }
        if self.c < 2 || self.w_m == 0 {
            return bad("need at least two classes and a positive window".into());
        }
        if self.branches < 2 {
            return bad(format!("need at least two branches, got {}", self.branches));
        }
        Ok(())
    }

    /// Pixels per window.
    pub fn window_pixels(&self) -> usize {
        self.w_m * self.w_m
    }

    /// Length of the extended state `[1; u; x]`.
    pub fn extended_len(&self) -> usize {
        1 + self.n + self.m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirBranch {
    /// `m x (1 + n)`.
    pub w_in: DMatrix<f64>,
    /// `m x m`, sparse.
    pub w: SparseMatrix,
    /// Pixel-major states: entries `k*m .. (k+1)*m` hold pixel `k`.
    pub state: Vec<f64>,
    /// Running `sum z z^T`.
    pub acc_a: DMatrix<f64>,
    /// Running `sum z y^T`.
    pub acc_b: DMatrix<f64>,
    /// `c x (1 + n + m)` once finalized.
    pub w_out: Option<DMatrix<f64>>,
}

impl ReservoirBranch {
    /// Reservoir states as the `m x d'` matrix `X`.
    pub fn state_matrix(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(m, self.state.len() / m, &self.state)
    }
}

/// Advances `state` by one step for every pixel of `inputs` (pixel-major, `n`
/// values each) and returns the extended states as a `pixels x (1+n+m)` matrix.
fn advance(
    hp: &EsnHyperParams,
    w_in: &DMatrix<f64>,
    w: &SparseMatrix,
    state: &mut [f64],
    inputs: &[f64],
) -> DMatrix<f64> {
    let (m, n) = (hp.m, hp.n);
    let pixels = inputs.len() / n;
    let mut z = DMatrix::zeros(pixels, hp.extended_len());
    let mut pre = vec![0.0; m];
    for k in 0..pixels {
        let u = &inputs[k * n..(k + 1) * n];
        let x = &mut state[k * m..(k + 1) * m];
        for (i, p) in pre.iter_mut().enumerate() {
            let mut acc = w_in[(i, 0)];
            for (j, &uj) in u.iter().enumerate() {
                acc += w_in[(i, 1 + j)] * uj;
            }
            *p = acc;
        }
        w.mul_add(x, &mut pre);
        for (xi, &p) in x.iter_mut().zip(&pre) {
            *xi = (1.0 - hp.alpha) * *xi + hp.alpha * p.tanh();
        }
        z[(k, 0)] = 1.0;
        for (j, &uj) in u.iter().enumerate() {
            z[(k, 1 + j)] = uj;
        }
        for (i, &xi) in x.iter().enumerate() {
            z[(k, 1 + n + i)] = xi;
        }
    }
    z
}

/// Class index with the highest score; ties resolve to the lowest index.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParEsnModel {
    pub hp: EsnHyperParams,
    pub branches: Vec<ReservoirBranch>,
    pub trained: bool,
    pub ssim_history: Vec<f64>,
    prev_gram: Option<DMatrix<f64>>,
    pub windows_trained: usize,
    pub images_consumed: usize,
}

pub fn init_paresn(hp: &EsnHyperParams) -> Result<ParEsnModel> {
    hp.validate()?;
    let d = hp.extended_len();
    let branches = (0..hp.branches)
        .map(|b| {
            let mut rng = reservoir::branch_rng(hp.rng_seed, b);
            let w_in = reservoir::random_input_weights(&mut rng, hp.m, hp.n);
            let w = reservoir::random_reservoir(&mut rng, hp.m, hp.sparsity, hp.spectral_radius);
            ReservoirBranch {
                w_in,
                w,
                state: vec![0.0; hp.m * hp.window_pixels()],
                acc_a: DMatrix::zeros(d, d),
                acc_b: DMatrix::zeros(d, hp.c),
                w_out: None,
            }
        })
        .collect();
    Ok(ParEsnModel {
        hp: hp.clone(),
        branches,
        trained: false,
        ssim_history: Vec::new(),
        prev_gram: None,
        windows_trained: 0,
        images_consumed: 0,
    })
}

/// Pixel-major inputs of a window.
pub fn window_inputs(win: &SubWindow) -> Vec<f64> {
    let pixels = win.planes[0].pixels().len();
    let mut out = Vec::with_capacity(pixels * 4);
    for k in 0..pixels {
        for p in &win.planes {
            out.push(p.pixels()[k]);
        }
    }
    out
}

impl ParEsnModel {
    pub(crate) fn from_parts(hp: EsnHyperParams, branches: Vec<ReservoirBranch>, trained: bool) -> Self {
        Self {
            hp,
            branches,
            trained,
            ssim_history: Vec::new(),
            prev_gram: None,
            windows_trained: 0,
            images_consumed: 0,
        }
    }

    /// One training step on raw inputs: `inputs` is pixel-major with `n`
    /// values per pixel, `labels` gives the class index of each pixel.
    pub fn train_on_inputs(&mut self, inputs: &[f64], labels: &[usize]) -> Result<()> {
        if self.trained {
            return Err(Error::AlreadyFinalized);
        }
        let pixels = self.hp.window_pixels();
        if inputs.len() != pixels * self.hp.n || labels.len() != pixels {
            return Err(Error::InvalidConfig(format!(
                "window needs {} pixels of {} planes",
                pixels, self.hp.n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.hp.c) {
            return Err(Error::InvalidConfig(format!("class {bad} out of range")));
        }
        let y = DMatrix::from_fn(pixels, self.hp.c, |k, j| if labels[k] == j { 1.0 } else { 0.0 });
        let hp = &self.hp;
        self.branches.par_iter_mut().for_each(|b| {
            let z = advance(hp, &b.w_in, &b.w, &mut b.state, inputs);
            b.acc_a.gemm_tr(1.0, &z, &z, 1.0);
            b.acc_b.gemm_tr(1.0, &z, &y, 1.0);
        });
        self.windows_trained += 1;
        self.record_state_similarity();
        Ok(())
    }

    pub fn train_on_window(&mut self, win: &SubWindow) -> Result<()> {
        let target = win
            .target
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("training window has no target".into()))?;
        let labels: Vec<usize> = target.bits().iter().map(|&b| usize::from(b)).collect();
        self.train_on_inputs(&window_inputs(win), &labels)
    }

    /// Branch-averaged, normalized Gram matrix `X X^T` of the current states.
    pub fn state_gram(&self) -> DMatrix<f64> {
        let m = self.hp.m;
        let mut avg = DMatrix::zeros(m, m);
        for b in &self.branches {
            let x = b.state_matrix(m);
            avg += ssim::normalize(&(&x * x.transpose()));
        }
        avg / self.branches.len() as f64
    }

    fn record_state_similarity(&mut self) {
        let gram = self.state_gram();
        if let Some(prev) = &self.prev_gram {
            self.ssim_history.push(ssim::ssim(&gram, prev));
        }
        self.prev_gram = Some(gram);
    }

    /// Marks the end of one training image.
    pub fn finish_image(&mut self) {
        self.images_consumed += 1;
    }

    /// True once the recent state similarity has settled (mean and spread
    /// over the last few windows) or the image budget is spent.
    pub fn check_stopping(&self) -> bool {
        if self.images_consumed >= TRAIN_IMAGES {
            return true;
        }
        if self.ssim_history.len() < 2 {
            return false;
        }
        let recent = &self.ssim_history[self.ssim_history.len().saturating_sub(STOP_WINDOW)..];
        let n = recent.len() as f64;
        let mean = recent.iter().sum::<f64>() / n;
        let std = (recent.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        mean >= STOP_MEAN && std <= STOP_STD
    }

    /// Solves the ridge readout of every branch.
    pub fn finalize(&mut self) -> Result<()> {
        if self.trained {
            return Err(Error::AlreadyFinalized);
        }
        if self.windows_trained == 0 {
            return Err(Error::NotTrained);
        }
        let lambda = self.hp.lambda;
        for b in &mut self.branches {
            b.w_out = Some(ridge_solve(&b.acc_a, &b.acc_b, lambda)?);
        }
        self.trained = true;
        Ok(())
    }

    /// A copy carrying the trained readout and post-training states, for
    /// running prediction independently of other images.
    pub fn clone_for_inference(&self) -> Self {
        let mut copy = self.clone();
        for b in &mut copy.branches {
            b.acc_a = DMatrix::zeros(0, 0);
            b.acc_b = DMatrix::zeros(0, 0);
        }
        copy.prev_gram = None;
        copy
    }

    /// Advances a private copy of the states over one window and returns the
    /// predicted class per pixel for every branch.
    pub fn predict_inputs(&self, states: &mut [Vec<f64>], inputs: &[f64]) -> Result<Vec<Vec<usize>>> {
        if !self.trained {
            return Err(Error::NotTrained);
        }
        Ok(self
            .branches
            .par_iter()
            .zip(states.par_iter_mut())
            .map(|(b, state)| {
                let z = advance(&self.hp, &b.w_in, &b.w, state, inputs);
                let w_out = b.w_out.as_ref().expect("trained");
                let scores = &z * w_out.transpose();
                (0..scores.nrows())
                    .map(|k| argmax(scores.row(k).iter().copied()))
                    .collect()
            })
            .collect())
    }
}

/// Refinement passes after the first solve.
const REFINE_STEPS: usize = 3;

/// `(acc_a + lambda I)^-1 acc_b`, transposed to `c x d`.
///
/// The system is badly conditioned when reservoir states are nearly
/// collinear (condition numbers around 1e8 are common for small reservoirs),
/// so the first solve is refined against residuals computed in doubled
/// precision. `lambda` enters the residual separately rather than being
/// rounded into the diagonal.
pub fn ridge_solve(acc_a: &DMatrix<f64>, acc_b: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let d = acc_a.nrows();
    let system = acc_a + DMatrix::<f64>::identity(d, d) * lambda;
    let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        match system.clone().cholesky() {
            Some(chol) => Ok(chol.solve(rhs)),
            None => system
                .clone()
                .lu()
                .solve(rhs)
                .ok_or_else(|| Error::SolveFailed("singular system".into())),
        }
    };
    let mut solution = solve(acc_b)?;
    for _ in 0..REFINE_STEPS {
        let residual = DMatrix::from_fn(d, acc_b.ncols(), |i, k| {
            let mut dot = Dot2::default();
            dot.add(acc_b[(i, k)], 1.0);
            for j in 0..d {
                dot.add(acc_a[(i, j)], -solution[(j, k)]);
            }
            dot.add(lambda, -solution[(i, k)]);
            dot.value()
        });
        solution += solve(&residual)?;
    }
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailed("non-finite readout weights".into()));
    }
    Ok(solution.transpose())
}

/// Compensated dot product: error-free products and sums carried in a
/// second word, accurate as if computed in twice the working precision.
#[derive(Default)]
struct Dot2 {
    sum: f64,
    carry: f64,
}

impl Dot2 {
    fn add(&mut self, a: f64, b: f64) {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let s = self.sum + p;
        let z = s - self.sum;
        let s_err = (self.sum - (s - z)) + (p - z);
        self.sum = s;
        self.carry += s_err + p_err;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Trains on the given images in order, consulting the stopping rule after
/// each image, then solves the readout.
pub fn fit_paresn(hp: &EsnHyperParams, train: &[(PreprocessedPlanes, BinaryMask)]) -> Result<ParEsnModel> {
    let mut model = init_paresn(hp)?;
    for (planes, target) in train {
        for win in extract_subwindows(planes, Some(target), hp.w_m) {
            model.train_on_window(&win)?;
        }
        model.finish_image();
        if model.check_stopping() {
            break;
        }
    }
    model.finalize()?;
    Ok(model)
}

pub fn predict_paresn(model: &ParEsnModel, planes: &PreprocessedPlanes) -> Result<RegionalProposals> {
    if !model.trained {
        return Err(Error::NotTrained);
    }
    if model.hp.n != 4 {
        return Err(Error::InvalidConfig(format!(
            "image prediction needs 4 input planes, model has {}",
            model.hp.n
        )));
    }
    let (h, w) = planes.dims();
    let side = model.hp.w_m;
    let mut states: Vec<Vec<f64>> = model.branches.iter().map(|b| b.state.clone()).collect();
    let mut masks: Vec<BinaryMask> = (0..model.branches.len()).map(|_| BinaryMask::empty(w, h)).collect();
    for win in extract_subwindows(planes, None, side) {
        let classes = model.predict_inputs(&mut states, &window_inputs(&win))?;
        for (mask, cls) in masks.iter_mut().zip(classes) {
            let tile = BinaryMask::new(side, side, cls.iter().map(|&c| c != 0).collect())?;
            let tile = tile.resize_nearest(win.extent.1, win.extent.0);
            for r in 0..win.extent.0 {
                for c in 0..win.extent.1 {
                    mask.set(win.origin.0 + r, win.origin.1 + c, tile.get(r, c));
                }
            }
        }
    }
    let mut it = masks.into_iter().map(|m| m.and(&planes.roi));
    let p1 = it.next().expect("at least two branches")?;
    let p2 = it.next().expect("at least two branches")?;
    let p3 = match it.next() {
        Some(m) => m?,
        None => p2.clone(),
    };
    RegionalProposals::new(p1, p2, p3)
}
