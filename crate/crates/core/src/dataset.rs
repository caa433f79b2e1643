//! Labeled-data generation for BMDR prediction, and dataset persistence.
//!
//! For every channel the composite matrix is per-user normalized, the real
//! embedding is QR-decomposed once, and each of `N_p` power draws produces
//! one record: the feature `R * Omega^R` (upper-triangular, power-scaled)
//! and one Monte-Carlo BMDR label per user.

use crate::bmdr::{bmdr_mc_estimate, BmdrError};
use crate::channel::{normalize_per_user, ChannelError, ChannelRealization, System};
use crate::detect::{DetectError, SoftDetector};
use crate::linalg::{qr_decompose, real_embed_matrix, LinalgError, RealMatrix};
use crate::rng::{Purpose, RngStream};
use rayon::prelude::*;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic bytes (expected BMDR)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    VersionMismatch(u32),
    #[error("file truncated")]
    TruncatedFile,
    #[error("split fractions must be non-negative and sum to 1")]
    BadFractions,
    #[error("no channels supplied")]
    EmptyChannels,
    #[error(transparent)]
    Bmdr(#[from] BmdrError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One feature-label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    /// `R * Omega^R`, 2N x 2N upper-triangular with positive diagonal.
    pub features: RealMatrix,
    /// Per-user BMDR labels in [0, 1].
    pub labels: Vec<f64>,
    /// Channel the record came from (split bookkeeping).
    pub channel_id: u64,
    /// Per-user power draw in dB (provenance).
    pub rho_db: Vec<f64>,
}

/// Dataset header describing the system the records were generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub n_r: usize,
    /// (n_t, bits per symbol) per user.
    pub users: Vec<(usize, usize)>,
    pub detector: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<FeatureRecord>,
}

/// Output of label generation, including channels skipped on QR failure.
#[derive(Debug)]
pub struct GenerateReport {
    pub dataset: Dataset,
    pub skipped_channels: Vec<u64>,
}

/// Generation sizes. The desk profile is CI-scale; the paper profile matches
/// the published experiment sizes.
#[derive(Debug, Clone, Copy)]
pub struct GenProfile {
    pub channels: usize,
    pub n_p: usize,
    pub n_samp: usize,
}

impl GenProfile {
    pub fn desk() -> Self {
        Self { channels: 2000, n_p: 20, n_samp: 200 }
    }

    pub fn paper() -> Self {
        Self { channels: 10_000, n_p: 50, n_samp: 500 }
    }
}

/// Generate `|channels| * n_p` feature-label records for a detector.
///
/// Each channel gets an independent substream derived from its index; the
/// whole run is bit-reproducible for a fixed `(channels, seed)` and
/// parallelizes across channels.
pub fn generate_labels(
    channels: &[ChannelRealization],
    sys: &System,
    det: &dyn SoftDetector,
    n_samp: usize,
    n_p: usize,
    rng: &RngStream,
) -> Result<GenerateReport, DatasetError> {
    if channels.is_empty() {
        return Err(DatasetError::EmptyChannels);
    }
    assert!(n_samp >= 1 && n_p >= 1);

    let results: Vec<Result<Vec<FeatureRecord>, u64>> = channels
        .par_iter()
        .enumerate()
        .map(|(idx, ch)| {
            let crng = rng.substream(Purpose::Channel, idx as u64);
            generate_for_channel(ch, sys, det, n_samp, n_p, &crng).map_err(|_| ch.id)
        })
        .collect();

    let mut records = Vec::with_capacity(channels.len() * n_p);
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(mut recs) => records.append(&mut recs),
            Err(id) => skipped.push(id),
        }
    }
    let meta = DatasetMeta {
        n_r: sys.n_r,
        users: sys
            .users
            .iter()
            .map(|u| (u.n_t, u.constellation.bits_per_symbol))
            .collect(),
        detector: det.name(),
    };
    Ok(GenerateReport { dataset: Dataset { meta, records }, skipped_channels: skipped })
}

fn generate_for_channel(
    ch: &ChannelRealization,
    sys: &System,
    det: &dyn SoftDetector,
    n_samp: usize,
    n_p: usize,
    crng: &RngStream,
) -> Result<Vec<FeatureRecord>, DatasetError> {
    // Per-user normalization to ||H_i||^2 = n_r n_t_i, then one QR.
    let mut norm = ch.clone();
    normalize_per_user(&mut norm, sys.n_r);
    let embedded = real_embed_matrix(&norm.h)?;
    let (_, r) = qr_decompose(&embedded)?;

    let mut out = Vec::with_capacity(n_p);
    for k in 0..n_p {
        let mut prng = crng.substream(Purpose::Power, k as u64);
        let rho_db: Vec<f64> = sys
            .users
            .iter()
            .map(|u| prng.uniform_range(u.rho_range_db.0, u.rho_range_db.1))
            .collect();
        let rho: Vec<f64> = rho_db.iter().map(|&d| 10f64.powf(d / 10.0)).collect();

        let est_base = crng.substream(Purpose::Symbols, k as u64);
        let est = bmdr_mc_estimate(&norm, sys, &rho, det, n_samp, &est_base)?;
        let labels: Vec<f64> = est.iter().map(|e| e.value).collect();

        let features = scale_feature_columns(&r, sys, &rho)?;
        out.push(FeatureRecord { features, labels, channel_id: ch.id, rho_db });
    }
    Ok(out)
}

/// `R * Omega^R`: column c of R scaled by the stream scale of `c mod N`
/// (the real embedding duplicates the diagonal).
fn scale_feature_columns(
    r: &RealMatrix,
    sys: &System,
    rho: &[f64],
) -> Result<RealMatrix, DatasetError> {
    let n = sys.total_streams();
    let scales = sys.column_scales(rho)?;
    let mut features = r.clone();
    for c in 0..2 * n {
        let s = scales[c % n];
        for row in 0..2 * n {
            let v = features.get(row, c) * s;
            features.set(row, c, v);
        }
    }
    Ok(features)
}

/// The feature for one raw channel and power draw, along the same path as
/// label generation: per-user normalization, QR of the real embedding,
/// power scaling of the columns.
pub fn channel_feature(
    ch: &ChannelRealization,
    sys: &System,
    rho: &[f64],
) -> Result<RealMatrix, DatasetError> {
    let mut norm = ch.clone();
    normalize_per_user(&mut norm, sys.n_r);
    let embedded = real_embed_matrix(&norm.h)?;
    let (_, r) = qr_decompose(&embedded)?;
    scale_feature_columns(&r, sys, rho)
}

const DATASET_MAGIC: &[u8; 4] = b"BMDR";
const DATASET_VERSION: u32 = 1;

/// Write a dataset: header (magic, version, system dims, detector id, count)
/// followed by records as little-endian 32-bit floats.
pub fn save_dataset<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<(), DatasetError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(DATASET_MAGIC)?;
    f.write_all(&DATASET_VERSION.to_le_bytes())?;
    f.write_all(&(ds.meta.n_r as u32).to_le_bytes())?;
    f.write_all(&(ds.meta.users.len() as u32).to_le_bytes())?;
    for &(n_t, m) in &ds.meta.users {
        f.write_all(&(n_t as u32).to_le_bytes())?;
        f.write_all(&(m as u32).to_le_bytes())?;
    }
    let det = ds.meta.detector.as_bytes();
    f.write_all(&(det.len() as u32).to_le_bytes())?;
    f.write_all(det)?;
    f.write_all(&(ds.records.len() as u64).to_le_bytes())?;

    let side = 2 * ds.meta.users.iter().map(|&(n_t, _)| n_t).sum::<usize>();
    for rec in &ds.records {
        debug_assert_eq!(rec.features.rows, side);
        for &x in &rec.features.data {
            f.write_all(&(x as f32).to_le_bytes())?;
        }
        for &x in &rec.labels {
            f.write_all(&(x as f32).to_le_bytes())?;
        }
        f.write_all(&rec.channel_id.to_le_bytes())?;
        for &x in &rec.rho_db {
            f.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset, DatasetError> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut f, &mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = read_u32(&mut f)?;
    if version != DATASET_VERSION {
        return Err(DatasetError::VersionMismatch(version));
    }
    let n_r = read_u32(&mut f)? as usize;
    let n_users = read_u32(&mut f)? as usize;
    let mut users = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let n_t = read_u32(&mut f)? as usize;
        let m = read_u32(&mut f)? as usize;
        users.push((n_t, m));
    }
    let det_len = read_u32(&mut f)? as usize;
    let mut det_bytes = vec![0u8; det_len];
    read_exact(&mut f, &mut det_bytes)?;
    let detector = String::from_utf8_lossy(&det_bytes).into_owned();
    let count = {
        let mut b = [0u8; 8];
        read_exact(&mut f, &mut b)?;
        u64::from_le_bytes(b) as usize
    };

    let side = 2 * users.iter().map(|&(n_t, _)| n_t).sum::<usize>();
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = Vec::with_capacity(side * side);
        for _ in 0..side * side {
            data.push(read_f32(&mut f)? as f64);
        }
        let mut labels = Vec::with_capacity(n_users);
        for _ in 0..n_users {
            labels.push(read_f32(&mut f)? as f64);
        }
        let channel_id = {
            let mut b = [0u8; 8];
            read_exact(&mut f, &mut b)?;
            u64::from_le_bytes(b)
        };
        let mut rho_db = Vec::with_capacity(n_users);
        for _ in 0..n_users {
            rho_db.push(read_f32(&mut f)? as f64);
        }
        records.push(FeatureRecord {
            features: RealMatrix::new(side, side, data),
            labels,
            channel_id,
            rho_db,
        });
    }
    Ok(Dataset { meta: DatasetMeta { n_r, users, detector }, records })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DatasetError::TruncatedFile
        } else {
            DatasetError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32, DatasetError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Split records by channel id, never by record, so power-draw siblings of a
/// channel always land in the same split. Deterministic under the seed.
pub fn split_dataset(
    records: &[FeatureRecord],
    fractions: (f64, f64, f64),
    rng: &RngStream,
) -> Result<(Vec<FeatureRecord>, Vec<FeatureRecord>, Vec<FeatureRecord>), DatasetError> {
    let (ft, fv, fs) = fractions;
    if ft < 0.0 || fv < 0.0 || fs < 0.0 || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions);
    }
    let mut ids: Vec<u64> = Vec::new();
    for r in records {
        if !ids.contains(&r.channel_id) {
            ids.push(r.channel_id);
        }
    }
    let mut shuffle_rng = rng.substream(Purpose::Shuffle, 0);
    shuffle_rng.shuffle(&mut ids);
    let n = ids.len();
    let n_train = (ft * n as f64).round() as usize;
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train.min(n));
    let train_ids = &ids[..n_train.min(n)];
    let val_ids = &ids[n_train.min(n)..(n_train + n_val).min(n)];

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for r in records {
        if train_ids.contains(&r.channel_id) {
            train.push(r.clone());
        } else if val_ids.contains(&r.channel_id) {
            val.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((train, val, test))
}

/// One row per record: flattened features, labels, provenance.
pub fn export_csv<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<(), DatasetError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    let side = ds.records.first().map(|r| r.features.rows).unwrap_or(0);
    let n_users = ds.meta.users.len();
    let mut header = Vec::new();
    for i in 0..side * side {
        header.push(format!("f{i}"));
    }
    for u in 0..n_users {
        header.push(format!("label_u{u}"));
    }
    header.push("channel_id".into());
    for u in 0..n_users {
        header.push(format!("rho_db_u{u}"));
    }
    writeln!(f, "{}", header.join(","))?;
    for r in &ds.records {
        let mut row: Vec<String> = r.features.data.iter().map(|x| format!("{x}")).collect();
        row.extend(r.labels.iter().map(|x| format!("{x}")));
        row.push(format!("{}", r.channel_id));
        row.extend(r.rho_db.iter().map(|x| format!("{x}")));
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Mean and standard deviation of all labels (summary statistic used by the
/// CLI after generation).
pub fn label_stats(records: &[FeatureRecord]) -> (f64, f64) {
    let all: Vec<f64> = records.iter().flat_map(|r| r.labels.iter().copied()).collect();
    if all.is_empty() {
        return (0.0, 0.0);
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / all.len() as f64;
    (mean, var.sqrt())
}
