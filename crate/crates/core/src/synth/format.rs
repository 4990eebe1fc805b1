//! `SSYN` dataset files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    b"SSYN"
//! version  u32 (= 1)
//! d, k, n  u64 each
//! seed     u64
//! A        d·k f32, row-major (row i holds coordinate i of every atom)
//! labels   k u8 (0 = LF_HA, 1 = HF_HA, 2 = LF_LA, 3 = HF_LA)
//! nnz      u64
//! S        nnz × (row u32, col u32, value f32), sorted by (row, col)
//! X        n·d f32, row-major
//! ```
//!
//! The [`SynthStats`] report, including bucket parameters and SNR, lives in a
//! JSON sidecar at `<file>.stats.json`.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::io::{open, write_atomic, LeReader, LeWriter};
use crate::synth::{Bucket, BucketSpec, SparseCodes, SynthDataset, SynthGroundTruth, SynthStats};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SSYN";
pub const SSYN_VERSION: u32 = 1;
const DIM_LIMIT: u64 = 1 << 32;

pub fn stats_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".stats.json");
    path.with_file_name(name)
}

pub fn write_dataset(path: &Path, data: &SynthDataset) -> Result<()> {
    let gt = &data.truth;
    let (d, k, n) = (gt.d(), gt.k(), data.x.nrows());
    if data.x.ncols() != d || gt.codes.n != n || gt.codes.k != k || gt.labels.len() != k {
        return Err(Error::Contract("inconsistent dataset shapes".into()));
    }
    write_atomic(path, |out| {
        let mut w = LeWriter::new(out);
        w.bytes(MAGIC)?;
        w.u32(SSYN_VERSION)?;
        for v in [d, k, n] {
            w.u64(v as u64)?;
        }
        w.u64(gt.seed)?;
        w.f32s(gt.a.iter())?;
        let labels: Vec<u8> = gt.labels.iter().map(|b| b.index() as u8).collect();
        w.bytes(&labels)?;
        w.u64(gt.codes.entries.len() as u64)?;
        for &(r, c, v) in &gt.codes.entries {
            w.u32(r)?;
            w.u32(c)?;
            w.f32(v)?;
        }
        w.f32s(data.x.iter())
    })
}

/// Reads an `SSYN` file. Bucket parameters and SNR come from the stats
/// sidecar when present and fall back to the defaults otherwise.
pub fn read_dataset(path: &Path) -> Result<SynthDataset> {
    let mut r = LeReader::new(open(path)?, "SSYN");
    if &r.array::<4>()? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != SSYN_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let d = r.count("d", DIM_LIMIT)?;
    let k = r.count("k", DIM_LIMIT)?;
    let n = r.count("n", DIM_LIMIT)?;
    let seed = r.u64()?;
    let a = Array2::from_shape_vec((d, k), r.f32_vec(d * k)?).expect("sized by d·k");
    let mut raw_labels = vec![0u8; k];
    r.bytes(&mut raw_labels)?;
    let labels = raw_labels
        .iter()
        .map(|&l| Bucket::from_index(l).ok_or_else(|| r.err(format!("bad bucket label {l}"))))
        .collect::<Result<Vec<_>>>()?;
    let nnz = r.count("nnz", (n as u64).saturating_mul(k as u64))?;
    let mut entries = Vec::with_capacity(nnz);
    let mut prev: Option<(u32, u32)> = None;
    for _ in 0..nnz {
        let (row, col, v) = (r.u32()?, r.u32()?, r.f32()?);
        if row as usize >= n || col as usize >= k {
            return Err(r.err(format!("code entry ({row}, {col}) out of range")));
        }
        if prev.is_some_and(|p| p >= (row, col)) {
            return Err(r.err("code entries not sorted by (row, col)"));
        }
        prev = Some((row, col));
        entries.push((row, col, v));
    }
    let x = Array2::from_shape_vec((n, d), r.f32_vec(n * d)?).expect("sized by n·d");
    r.expect_eof()?;

    let (buckets, snr_db) = match read_stats(&stats_path(path)) {
        Ok(stats) => {
            let mut specs = BucketSpec::defaults();
            for b in &stats.buckets {
                specs[b.bucket.index()] = BucketSpec {
                    bucket: b.bucket,
                    p: b.p,
                    sigma: b.sigma,
                };
            }
            (specs, stats.snr_db)
        }
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            (BucketSpec::defaults(), f64::NAN)
        }
        Err(e) => return Err(e),
    };

    Ok(SynthDataset {
        truth: SynthGroundTruth {
            a,
            codes: SparseCodes { n, k, entries },
            labels,
            buckets,
            snr_db,
            seed,
        },
        x,
    })
}

pub fn write_stats(path: &Path, stats: &SynthStats) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, stats)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn read_stats(path: &Path) -> Result<SynthStats> {
    Ok(serde_json::from_reader(open(path)?)?)
}
