//! Binary model container: magic, little-endian header length, JSON header,
//! then little-endian f64 matrices (row-major) per branch: `w_in`, dense
//! `w`, `w_out` when trained, and the final states as `m x d'`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{EsnHyperParams, ParEsnModel, ReservoirBranch, SparseMatrix};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PARESN1\n";

#[derive(Serialize, Deserialize)]
struct Header {
    hp: EsnHyperParams,
    trained: bool,
    branches: usize,
}

fn write_matrix(out: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix(input: &mut impl Read, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    input.read_exact(&mut buf)?;
    let vals: Vec<f64> = buf
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

pub fn write_model(out: &mut impl Write, model: &ParEsnModel) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        hp: model.hp.clone(),
        trained: model.trained,
        branches: model.branches.len(),
    })?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let m = model.hp.m;
    for b in &model.branches {
        write_matrix(out, &b.w_in)?;
        write_matrix(out, &b.w.to_dense())?;
        if model.trained {
            write_matrix(out, b.w_out.as_ref().expect("trained model has readout"))?;
        }
        write_matrix(out, &b.state_matrix(m))?;
    }
    Ok(())
}

/// Reads a model written by [`write_model`]. Training accumulators are not
/// stored, so a loaded model can predict but not continue training.
pub fn read_model(input: &mut impl Read) -> Result<ParEsnModel> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadModelFile("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(Error::BadModelFile(format!("header of {len} bytes")));
    }
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    header.hp.validate()?;
    let hp = header.hp;
    let (m, d) = (hp.m, hp.extended_len());
    let mut branches = Vec::with_capacity(header.branches);
    for _ in 0..header.branches {
        let w_in = read_matrix(input, m, 1 + hp.n)?;
        let w = SparseMatrix::from_dense(&read_matrix(input, m, m)?);
        let w_out = if header.trained {
            Some(read_matrix(input, hp.c, d)?)
        } else {
            None
        };
        let state_m = read_matrix(input, m, hp.window_pixels())?;
        let mut state = Vec::with_capacity(m * hp.window_pixels());
        for k in 0..hp.window_pixels() {
            state.extend(state_m.column(k).iter());
        }
        branches.push(ReservoirBranch {
            w_in,
            w,
            state,
            acc_a: DMatrix::zeros(0, 0),
            acc_b: DMatrix::zeros(0, 0),
            w_out,
        });
    }
    Ok(ParEsnModel::from_parts(hp, branches, header.trained))
}
