//! `SSAE` checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    b"SSAE"
//! version  u32 (= 1)
//! d, m     u64 each
//! step     u64
//! params   w_enc (m·d), b_enc (m), w_dec (m·d), b_dec (d), theta (1)   f32
//! adam m1  w_enc, b_enc, w_dec, b_dec                                  f32
//! adam m2  w_enc, b_enc, w_dec, b_dec                                  f32
//! len      u64
//! meta     len bytes of JSON (configs, dead-feature tracking, RNG states)
//! ```
//!
//! Matrices are row-major in their `m × d` storage order.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{open, write_atomic, LeReader, LeWriter};
use crate::sae::{GateConfig, SaeParams};
use crate::trainer::{OptState, SaeGrads, TrainConfig, Trainer};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SSAE";
pub const SSAE_VERSION: u32 = 1;
const DIM_LIMIT: u64 = 1 << 32;
const META_LIMIT: u64 = 1 << 30;

#[derive(Serialize, Deserialize)]
struct Meta {
    gate: GateConfig,
    train: TrainConfig,
    step: u64,
    last_fired: Vec<u64>,
    theta_started: bool,
    data_rng: ChaCha8Rng,
    score_rng: ChaCha8Rng,
}

fn write_grads(w: &mut LeWriter, g: &SaeGrads<f32>) -> Result<()> {
    w.f32s(g.w_enc.iter())?;
    w.f32s(g.b_enc.iter())?;
    w.f32s(g.w_dec.iter())?;
    w.f32s(g.b_dec.iter())
}

fn read_matrix<R: std::io::Read>(r: &mut LeReader<R>, m: usize, d: usize) -> Result<Array2<f32>> {
    Ok(Array2::from_shape_vec((m, d), r.f32_vec(m * d)?).expect("sized by m·d"))
}

fn read_grads<R: std::io::Read>(r: &mut LeReader<R>, d: usize, m: usize) -> Result<SaeGrads<f32>> {
    Ok(SaeGrads {
        w_enc: read_matrix(r, m, d)?,
        b_enc: Array1::from(r.f32_vec(m)?),
        w_dec: read_matrix(r, m, d)?,
        b_dec: Array1::from(r.f32_vec(d)?),
    })
}

/// Saves the full training state atomically.
pub fn save(path: &Path, trainer: &Trainer<f32>) -> Result<()> {
    let p = &trainer.params;
    p.check_config(&trainer.gate)?;
    let meta = serde_json::to_vec(&Meta {
        gate: trainer.gate.clone(),
        train: trainer.cfg.clone(),
        step: trainer.opt.t,
        last_fired: trainer.opt.last_fired.clone(),
        theta_started: trainer.opt.theta_started,
        data_rng: trainer.data_rng.clone(),
        score_rng: trainer.score_rng.clone(),
    })?;
    write_atomic(path, |out| {
        let mut w = LeWriter::new(out);
        w.bytes(MAGIC)?;
        w.u32(SSAE_VERSION)?;
        w.u64(p.d() as u64)?;
        w.u64(p.m() as u64)?;
        w.u64(trainer.opt.t)?;
        w.f32s(p.w_enc.iter())?;
        w.f32s(p.b_enc.iter())?;
        w.f32s(p.w_dec.iter())?;
        w.f32s(p.b_dec.iter())?;
        w.f32(p.theta)?;
        write_grads(&mut w, &trainer.opt.m1)?;
        write_grads(&mut w, &trainer.opt.m2)?;
        w.u64(meta.len() as u64)?;
        w.bytes(&meta)
    })
}

/// Loads a checkpoint written by [`save`].
pub fn load(path: &Path) -> Result<Trainer<f32>> {
    let mut r = LeReader::new(open(path)?, "SSAE");
    if &r.array::<4>()? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != SSAE_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let d = r.count("d", DIM_LIMIT)?;
    let m = r.count("m", DIM_LIMIT)?;
    let step = r.u64()?;
    let params = SaeParams {
        w_enc: read_matrix(&mut r, m, d)?,
        b_enc: Array1::from(r.f32_vec(m)?),
        w_dec: read_matrix(&mut r, m, d)?,
        b_dec: Array1::from(r.f32_vec(d)?),
        theta: r.f32()?,
    };
    let m1 = read_grads(&mut r, d, m)?;
    let m2 = read_grads(&mut r, d, m)?;
    let len = r.count("metadata length", META_LIMIT)?;
    let mut raw = vec![0u8; len];
    r.bytes(&mut raw)?;
    r.expect_eof()?;
    let meta: Meta = serde_json::from_slice(&raw)?;

    if meta.step != step {
        return Err(r.err(format!(
            "header step {step} disagrees with metadata step {}",
            meta.step
        )));
    }
    if meta.last_fired.len() != m {
        return Err(Error::dims("last_fired", m, meta.last_fired.len()));
    }
    meta.gate.validate()?;
    meta.train.validate()?;
    params.check_config(&meta.gate)?;
    Ok(Trainer {
        gate: meta.gate,
        cfg: meta.train,
        params,
        opt: OptState {
            m1,
            m2,
            t: step,
            last_fired: meta.last_fired,
            theta_started: meta.theta_started,
        },
        data_rng: meta.data_rng,
        score_rng: meta.score_rng,
    })
}

/// Loads a checkpoint and fails unless it was trained with `gate`.
pub fn load_matching(path: &Path, gate: &GateConfig) -> Result<Trainer<f32>> {
    let trainer = load(path)?;
    if &trainer.gate != gate {
        return Err(Error::Contract(format!(
            "checkpoint {} was trained with {:?}, expected {:?}",
            path.display(),
            trainer.gate,
            gate
        )));
    }
    Ok(trainer)
}
