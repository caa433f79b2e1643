//! Bit-metric decoding rate estimation.
//!
//! The BMDR of a detector for user `i` on a channel `H` is
//! `max{0, 1 + E[(1/(m n_t)) sum_{l,j} log2 q(b_{l,j})]}` where `q` is the
//! per-bit posterior implied by the detector's LLRs. This module provides the
//! Monte-Carlo estimator for that expectation (perfect and imperfect CSI),
//! set averaging, the GMI over the metric exponent `s` (whose `s = 1` value
//! coincides with the pre-floor BMDR sample by sample), and the SNR-to-BMDR
//! lookup shortcut for linear detectors.
//!
//! All estimators take a base [`RngStream`] and derive their symbol/noise
//! substreams from it, so two estimators called with equal base streams see
//! identical `(s, n)` draws ("matched seeds").

use crate::channel::{
    draw_re_bits, stack_symbols, ChannelError, ChannelRealization, NoiseModel, System,
};
use crate::detect::{axis_llrs_exact, post_eq_sinr, DetectError, SoftDetector, LLR_CLIP};
use crate::linalg::ComplexMatrix;
use crate::modem::Constellation;
use crate::rng::{Purpose, RngStream};
use num_complex::Complex64;
use std::f64::consts::LN_2;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BmdrError {
    #[error("empty channel set")]
    EmptySet,
    #[error("no SNR-BMDR table for m={m}")]
    MissingTable { m: usize },
    #[error("SNR grid must be sorted ascending")]
    BadGrid,
    #[error("bad magic bytes (expected {expected})")]
    BadMagic { expected: &'static str },
    #[error("unsupported file version {0}")]
    VersionMismatch(u32),
    #[error("file truncated")]
    TruncatedFile,
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floor applied to `log2 q` so integrands stay finite even for unclipped
/// stub inputs; inactive for LLRs within the clip bound.
pub const LOG2_Q_FLOOR: f64 = -(LLR_CLIP + 1.0) / LN_2;

/// The bit metric `q(b; llr) = 1 / (1 + exp(-(2b - 1) llr))`.
pub fn bit_metric_q(llr: f64, b: u8) -> f64 {
    let x = if b == 1 { llr } else { -llr };
    1.0 / (1.0 + (-x).exp())
}

/// `log2 q(b; llr)`, computed as a stable softplus and floored.
pub fn log2_q(llr: f64, b: u8) -> f64 {
    let x = if b == 1 { llr } else { -llr };
    // ln(1 + e^{-x}) without overflow for very negative x.
    let softplus = if x > 0.0 { (-x).exp().ln_1p() } else { -x + x.exp().ln_1p() };
    (-softplus / LN_2).max(LOG2_Q_FLOOR)
}

/// One per-user Monte-Carlo BMDR estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BmdrEstimate {
    pub user: usize,
    /// `max{0, 1 + mean log2 q}`.
    pub value: f64,
    /// `1 + mean log2 q`, before the floor at zero.
    pub pre_floor: f64,
    pub n_samples: usize,
    /// Standard error of the per-sample bit-averaged log terms.
    pub std_err: f64,
}

/// Per-user GMI(s) estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GmiEstimate {
    pub user: usize,
    pub value: f64,
    pub pre_floor: f64,
}

struct Accumulator {
    sum: f64,
    sum_sq: f64,
}

/// Shared sampling loop behind every estimator. Draws `(bits, w)` from the
/// `Symbols`/`Noise` substreams of `base`, forms `y = H_eff s + K_n^{1/2} w`,
/// optionally whitens, runs the prepared detector, and feeds per-sample
/// per-user bit-averaged terms into the accumulators.
#[allow(clippy::too_many_arguments)]
fn mc_run(
    ch_true: &ChannelRealization,
    ch_est: &ChannelRealization,
    noise: &NoiseModel,
    sys: &System,
    rho: &[f64],
    det: &dyn SoftDetector,
    n_samp: usize,
    base: &RngStream,
    gmi_exp: Option<f64>,
    bmdr_acc: &mut [Accumulator],
    gmi_acc: &mut [Accumulator],
) -> Result<(), BmdrError> {
    let identity_model = is_identity_model(ch_true, ch_est, noise);
    let h_true_eff = ch_true.scaled(sys, rho)?;
    let (whitener, coloring, prepared) = if identity_model {
        let prepared = det.prepare(&h_true_eff, sys)?;
        (None, None, prepared)
    } else {
        let w = noise.whitener()?;
        let coloring = noise.noise_coloring()?;
        let h_est_eff = w.matmul(&ch_est.scaled(sys, rho)?);
        let prepared = det.prepare(&h_est_eff, sys)?;
        (Some(w), Some(coloring), prepared)
    };

    let mut srng = base.substream(Purpose::Symbols, 0);
    let mut nrng = base.substream(Purpose::Noise, 0);
    let n_r = sys.n_r;

    for _ in 0..n_samp {
        let bits = draw_re_bits(sys, &mut srng);
        let s = stack_symbols(sys, &bits)?;
        let w_draw: Vec<Complex64> = (0..n_r).map(|_| nrng.cnormal()).collect();
        let n = match &coloring {
            Some(c) => c.matvec(&w_draw),
            None => w_draw,
        };
        let mut y = h_true_eff.matvec(&s.data);
        for (yi, ni) in y.iter_mut().zip(n.iter()) {
            *yi += ni;
        }
        let y = ComplexMatrix::new(n_r, 1, y);
        let y_proc = match &whitener {
            Some(w) => w.matmul(&y),
            None => y,
        };
        let llrs = prepared.llr(&y_proc)?;

        for (u, (llr, b)) in llrs.iter().zip(bits.iter()).enumerate() {
            let n_bits = llr.data.len() as f64;
            let mut term = 0.0;
            for (idx, &l) in llr.data.iter().enumerate() {
                term += log2_q(l, b.bits[idx]);
            }
            term /= n_bits;
            bmdr_acc[u].sum += term;
            bmdr_acc[u].sum_sq += term * term;

            if let Some(s_exp) = gmi_exp {
                let mut g = 0.0;
                for (idx, &l) in llr.data.iter().enumerate() {
                    let q1 = bit_metric_q(l, 1);
                    let q0 = bit_metric_q(l, 0);
                    let qb = if b.bits[idx] == 1 { q1 } else { q0 };
                    let norm = 0.5 * (q0.powf(s_exp) + q1.powf(s_exp));
                    g += s_exp * qb.max(1e-300).ln() / LN_2 - norm.ln() / LN_2;
                }
                g /= n_bits;
                gmi_acc[u].sum += g;
                gmi_acc[u].sum_sq += g * g;
            }
        }
    }
    Ok(())
}

fn is_identity_model(
    ch_true: &ChannelRealization,
    ch_est: &ChannelRealization,
    noise: &NoiseModel,
) -> bool {
    if !std::ptr::eq(ch_true, ch_est) && ch_true.h.data != ch_est.h.data {
        return false;
    }
    let n = noise.k_n.rows;
    for i in 0..n {
        for j in 0..n {
            let e = if i == j { 1.0 } else { 0.0 };
            if noise.k_n.get(i, j) != Complex64::new(e, 0.0) {
                return false;
            }
            if noise.k_e.get(i, j) != Complex64::new(0.0, 0.0) {
                return false;
            }
        }
    }
    true
}

fn finish(acc: Vec<Accumulator>, n_samp: usize) -> Vec<BmdrEstimate> {
    acc.into_iter()
        .enumerate()
        .map(|(u, a)| {
            let n = n_samp as f64;
            let mean = a.sum / n;
            let var = if n_samp > 1 {
                ((a.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            BmdrEstimate {
                user: u,
                value: (1.0 + mean).max(0.0),
                pre_floor: 1.0 + mean,
                n_samples: n_samp,
                std_err: (var / n).sqrt(),
            }
        })
        .collect()
}

fn new_accs(n: usize) -> Vec<Accumulator> {
    (0..n).map(|_| Accumulator { sum: 0.0, sum_sq: 0.0 }).collect()
}

/// Monte-Carlo BMDR estimate for one channel with perfect CSI.
pub fn bmdr_mc_estimate(
    ch: &ChannelRealization,
    sys: &System,
    rho: &[f64],
    det: &dyn SoftDetector,
    n_samp: usize,
    rng: &RngStream,
) -> Result<Vec<BmdrEstimate>, BmdrError> {
    let mut bmdr = new_accs(sys.n_users());
    let mut gmi = new_accs(0);
    mc_run(
        ch,
        ch,
        &NoiseModel::identity(sys.n_r),
        sys,
        rho,
        det,
        n_samp,
        rng,
        None,
        &mut bmdr,
        &mut gmi,
    )?;
    Ok(finish(bmdr, n_samp))
}

/// Monte-Carlo BMDR estimate with imperfect CSI: the observation is simulated
/// from `ch_true` with colored noise `K_n`, then `(y, ch_est)` are whitened by
/// `(K_n + K_e)^{-1/2}` before detection.
#[allow(clippy::too_many_arguments)]
pub fn bmdr_mc_estimate_ce(
    ch_true: &ChannelRealization,
    ch_est: &ChannelRealization,
    noise: &NoiseModel,
    sys: &System,
    rho: &[f64],
    det: &dyn SoftDetector,
    n_samp: usize,
    rng: &RngStream,
) -> Result<Vec<BmdrEstimate>, BmdrError> {
    let mut bmdr = new_accs(sys.n_users());
    let mut gmi = new_accs(0);
    mc_run(ch_true, ch_est, noise, sys, rho, det, n_samp, rng, None, &mut bmdr, &mut gmi)?;
    Ok(finish(bmdr, n_samp))
}

/// BMDR of a detector for a set of channels: the arithmetic mean of the
/// per-channel estimates. Every channel is estimated from the same derived
/// substreams, so a duplicated set equals its singleton on matched seeds.
pub fn bmdr_set(
    channels: &[ChannelRealization],
    sys: &System,
    rho: &[f64],
    det: &dyn SoftDetector,
    n_samp: usize,
    rng: &RngStream,
) -> Result<Vec<BmdrEstimate>, BmdrError> {
    if channels.is_empty() {
        return Err(BmdrError::EmptySet);
    }
    let mut per_user: Vec<Vec<BmdrEstimate>> = Vec::with_capacity(channels.len());
    for ch in channels {
        per_user.push(bmdr_mc_estimate(ch, sys, rho, det, n_samp, rng)?);
    }
    let count = channels.len() as f64;
    Ok((0..sys.n_users())
        .map(|u| {
            let value = per_user.iter().map(|e| e[u].value).sum::<f64>() / count;
            let pre = per_user.iter().map(|e| e[u].pre_floor).sum::<f64>() / count;
            let se2 = per_user.iter().map(|e| e[u].std_err * e[u].std_err).sum::<f64>();
            BmdrEstimate {
                user: u,
                value,
                pre_floor: pre,
                n_samples: n_samp * channels.len(),
                std_err: se2.sqrt() / count,
            }
        })
        .collect())
}

/// Monte-Carlo estimate of `I_gmi(s)` per user, with the binary-metric
/// normalizer `(1/2) sum_b q(b)^s`. At `s = 1` the pre-floor value equals the
/// pre-floor BMDR estimate on matched seeds, term by term.
#[allow(clippy::too_many_arguments)]
pub fn gmi_s(
    ch: &ChannelRealization,
    sys: &System,
    rho: &[f64],
    det: &dyn SoftDetector,
    s_exp: f64,
    n_samp: usize,
    rng: &RngStream,
) -> Result<Vec<GmiEstimate>, BmdrError> {
    assert!(s_exp > 0.0, "metric exponent must be positive");
    let mut bmdr = new_accs(sys.n_users());
    let mut gmi = new_accs(sys.n_users());
    mc_run(
        ch,
        ch,
        &NoiseModel::identity(sys.n_r),
        sys,
        rho,
        det,
        n_samp,
        rng,
        Some(s_exp),
        &mut bmdr,
        &mut gmi,
    )?;
    Ok(gmi
        .into_iter()
        .enumerate()
        .map(|(u, a)| {
            let pre = a.sum / n_samp as f64;
            GmiEstimate { user: u, value: pre.max(0.0), pre_floor: pre }
        })
        .collect())
}

/// Supremum of `I_gmi(s)` over a grid followed by golden-section refinement
/// around the best grid point (3 rounds). Returns `(s*, value)` per user.
#[allow(clippy::too_many_arguments)]
pub fn gmi_sup(
    ch: &ChannelRealization,
    sys: &System,
    rho: &[f64],
    det: &dyn SoftDetector,
    s_grid: &[f64],
    n_samp: usize,
    rng: &RngStream,
) -> Result<Vec<(f64, f64)>, BmdrError> {
    assert!(!s_grid.is_empty() && s_grid.iter().all(|&s| s > 0.0));
    let mut evals: Vec<(f64, Vec<f64>)> = Vec::new();
    // Common random numbers across s values keep the curve smooth in s.
    let eval = |s: f64, evals: &mut Vec<(f64, Vec<f64>)>| -> Result<Vec<f64>, BmdrError> {
        if let Some((_, v)) = evals.iter().find(|(x, _)| *x == s) {
            return Ok(v.clone());
        }
        let v: Vec<f64> = gmi_s(ch, sys, rho, det, s, n_samp, rng)?
            .into_iter()
            .map(|g| g.pre_floor)
            .collect();
        evals.push((s, v.clone()));
        Ok(v)
    };

    for &s in s_grid {
        eval(s, &mut evals)?;
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut out = Vec::with_capacity(sys.n_users());
    for u in 0..sys.n_users() {
        let value_at = |s: f64, evals: &Vec<(f64, Vec<f64>)>| -> f64 {
            evals.iter().find(|(x, _)| *x == s).unwrap().1[u]
        };
        let best_idx = (0..s_grid.len())
            .max_by(|&a, &b| {
                value_at(s_grid[a], &evals)
                    .partial_cmp(&value_at(s_grid[b], &evals))
                    .unwrap()
            })
            .unwrap();
        let mut lo = s_grid[best_idx.saturating_sub(1)];
        let mut hi = s_grid[(best_idx + 1).min(s_grid.len() - 1)];
        let mut best_s = s_grid[best_idx];
        let mut best_v = value_at(best_s, &evals);
        for _ in 0..3 {
            let x1 = hi - (hi - lo) * inv_phi;
            let x2 = lo + (hi - lo) * inv_phi;
            let f1 = eval(x1, &mut evals)?[u];
            let f2 = eval(x2, &mut evals)?[u];
            if f1 > best_v {
                best_v = f1;
                best_s = x1;
            }
            if f2 > best_v {
                best_v = f2;
                best_s = x2;
            }
            if f1 >= f2 {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        out.push((best_s, best_v.max(0.0)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// SNR-BMDR tables (the linear-detector shortcut)
// ---------------------------------------------------------------------------

const TABLE_MAGIC: &[u8; 4] = b"SBMT";
const TABLE_VERSION: u32 = 1;

/// Pre-computed SNR-to-BMDR map for a scalar AWGN channel with exact
/// per-bit metrics; monotone non-decreasing in SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrBmdrTable {
    /// Bits per symbol of the constellation this table belongs to.
    pub m: usize,
    pub snr_db: Vec<f64>,
    pub bmdr: Vec<f64>,
}

/// Build the table by Monte-Carlo on the scalar AWGN channel
/// `y = sqrt(snr) s + n`, `n ~ CN(0,1)`, with exact per-axis bit metrics.
/// Common random numbers across grid points plus an isotonic pass keep the
/// column monotone.
pub fn build_snr_bmdr_table(
    c: &Constellation,
    snr_grid_db: &[f64],
    n_samp: usize,
    rng: &RngStream,
) -> Result<SnrBmdrTable, BmdrError> {
    if snr_grid_db.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BmdrError::BadGrid);
    }
    let h = c.axis_bits();
    let mut bmdr = Vec::with_capacity(snr_grid_db.len());
    for &snr_db in snr_grid_db {
        let snr = 10f64.powf(snr_db / 10.0);
        let scaled_pam: Vec<f64> = c.pam.iter().map(|&a| a * snr.sqrt()).collect();
        let mut srng = rng.substream(Purpose::Symbols, 0);
        let mut nrng = rng.substream(Purpose::Noise, 0);
        let mut acc = 0.0;
        let mut axis = vec![0.0f64; h];
        for _ in 0..n_samp {
            // One symbol = two independent axes; accumulate both.
            for _axis_id in 0..2 {
                let lab = srng.below(1 << h);
                let z = scaled_pam[lab] + nrng.normal() * 0.5f64.sqrt();
                axis_llrs_exact(z, 0.5, &scaled_pam, &mut axis);
                for (j, &l) in axis.iter().enumerate() {
                    let bit = ((lab >> (h - 1 - j)) & 1) as u8;
                    acc += log2_q(l, bit);
                }
            }
        }
        let mean = acc / (n_samp as f64 * 2.0 * h as f64);
        bmdr.push((1.0 + mean).clamp(0.0, 1.0));
    }
    // Pool-adjacent-violators pass to absorb residual MC non-monotonicity.
    isotonic_non_decreasing(&mut bmdr);
    Ok(SnrBmdrTable { m: c.bits_per_symbol, snr_db: snr_grid_db.to_vec(), bmdr })
}

fn isotonic_non_decreasing(v: &mut [f64]) {
    let n = v.len();
    let mut level: Vec<f64> = Vec::with_capacity(n);
    let mut weight: Vec<f64> = Vec::with_capacity(n);
    for &x in v.iter() {
        level.push(x);
        weight.push(1.0);
        while level.len() > 1 {
            let k = level.len();
            if level[k - 2] <= level[k - 1] {
                break;
            }
            let w = weight[k - 2] + weight[k - 1];
            let merged = (level[k - 2] * weight[k - 2] + level[k - 1] * weight[k - 1]) / w;
            level.truncate(k - 1);
            weight.truncate(k - 1);
            *level.last_mut().unwrap() = merged;
            *weight.last_mut().unwrap() = w;
        }
    }
    let mut idx = 0;
    for (l, w) in level.iter().zip(weight.iter()) {
        for _ in 0..*w as usize {
            v[idx] = *l;
            idx += 1;
        }
    }
}

impl SnrBmdrTable {
    /// Linear interpolation in dB; out-of-range queries clamp to the table
    /// ends and set the flag.
    pub fn lookup(&self, snr_db: f64) -> (f64, bool) {
        let n = self.snr_db.len();
        if snr_db <= self.snr_db[0] {
            return (self.bmdr[0], snr_db < self.snr_db[0]);
        }
        if snr_db >= self.snr_db[n - 1] {
            return (self.bmdr[n - 1], snr_db > self.snr_db[n - 1]);
        }
        let i = match self
            .snr_db
            .binary_search_by(|x| x.partial_cmp(&snr_db).unwrap())
        {
            Ok(i) => return (self.bmdr[i], false),
            Err(i) => i.max(1),
        };
        let (x0, x1) = (self.snr_db[i - 1], self.snr_db[i]);
        let (y0, y1) = (self.bmdr[i - 1], self.bmdr[i]);
        let t = (snr_db - x0) / (x1 - x0);
        (y0 + t * (y1 - y0), false)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), BmdrError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(TABLE_MAGIC)?;
        f.write_all(&TABLE_VERSION.to_le_bytes())?;
        f.write_all(&(self.m as u32).to_le_bytes())?;
        f.write_all(&(self.snr_db.len() as u32).to_le_bytes())?;
        for &x in &self.snr_db {
            f.write_all(&x.to_le_bytes())?;
        }
        for &x in &self.bmdr {
            f.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, BmdrError> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 4];
        read_exact(&mut f, &mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(BmdrError::BadMagic { expected: "SBMT" });
        }
        let version = read_u32(&mut f)?;
        if version != TABLE_VERSION {
            return Err(BmdrError::VersionMismatch(version));
        }
        let m = read_u32(&mut f)? as usize;
        let len = read_u32(&mut f)? as usize;
        let mut snr_db = Vec::with_capacity(len);
        for _ in 0..len {
            snr_db.push(read_f64(&mut f)?);
        }
        let mut bmdr = Vec::with_capacity(len);
        for _ in 0..len {
            bmdr.push(read_f64(&mut f)?);
        }
        Ok(Self { m, snr_db, bmdr })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), BmdrError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            BmdrError::TruncatedFile
        } else {
            BmdrError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, BmdrError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, BmdrError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Tables keyed by bits-per-symbol.
#[derive(Debug, Clone, Default)]
pub struct TableSet {
    tables: Vec<SnrBmdrTable>,
}

impl TableSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: SnrBmdrTable) {
        self.tables.retain(|x| x.m != t.m);
        self.tables.push(t);
    }

    pub fn get(&self, m: usize) -> Option<&SnrBmdrTable> {
        self.tables.iter().find(|t| t.m == m)
    }
}

/// Per-user BMDR prediction via the SNR-BMDR table.
#[derive(Debug, Clone, PartialEq)]
pub struct BmdrPrediction {
    pub user: usize,
    pub value: f64,
    /// Set when any stream's SINR fell outside the table range.
    pub clamped: bool,
}

/// Predict the LMMSE detector's per-user BMDR from post-equalization SINRs
/// through the pre-computed tables, averaging over each user's streams.
pub fn lmmse_bmdr_predict(
    ch: &ChannelRealization,
    sys: &System,
    rho: &[f64],
    tables: &TableSet,
) -> Result<Vec<BmdrPrediction>, BmdrError> {
    let h_eff = ch.scaled(sys, rho)?;
    let sinr = post_eq_sinr(&h_eff);
    let offsets = sys.stream_offsets();
    let mut out = Vec::with_capacity(sys.n_users());
    for (u, cfg) in sys.users.iter().enumerate() {
        let table = tables
            .get(cfg.constellation.bits_per_symbol)
            .ok_or(BmdrError::MissingTable { m: cfg.constellation.bits_per_symbol })?;
        let mut acc = 0.0;
        let mut clamped = false;
        for k in offsets[u]..offsets[u] + cfg.n_t {
            let snr_db = 10.0 * sinr[k].max(1e-30).log10();
            let (v, c) = table.lookup(snr_db);
            acc += v;
            clamped |= c;
        }
        out.push(BmdrPrediction { user: u, value: acc / cfg.n_t as f64, clamped });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_iid_rayleigh, UserConfig};
    use crate::detect::{
        kbest_llrs_from_survivors, kbest_search, real_levels, DetectorSpec, LlrMatrix,
        PreparedLlr,
    };
    use crate::linalg::{qr_decompose, real_embed_matrix, RealMatrix};
    use crate::modem::build_qam;

    fn sys_of(n_r: usize, users: &[(usize, usize)]) -> System {
        let users = users
            .iter()
            .map(|&(n_t, m)| UserConfig {
                n_t,
                constellation: build_qam(m).unwrap(),
                rho_range_db: (0.0, 0.0),
            })
            .collect();
        System::new(n_r, users).unwrap()
    }

    /// Detector stub that always emits zero LLRs.
    struct ZeroLlr;
    struct ZeroPrepared(System);
    impl SoftDetector for ZeroLlr {
        fn name(&self) -> String {
            "zero-stub".into()
        }
        fn prepare(
            &self,
            _h: &ComplexMatrix,
            sys: &System,
        ) -> Result<Box<dyn PreparedLlr>, DetectError> {
            Ok(Box::new(ZeroPrepared(sys.clone())))
        }
    }
    impl PreparedLlr for ZeroPrepared {
        fn llr(&self, _y: &ComplexMatrix) -> Result<Vec<LlrMatrix>, DetectError> {
            Ok(LlrMatrix::zeros_for(&self.0))
        }
    }

    /// Hard-decision exhaustive ML emitting saturated LLRs.
    struct HardMl;
    struct HardPrepared(Box<dyn PreparedLlr>);
    impl SoftDetector for HardMl {
        fn name(&self) -> String {
            "hard-ml-stub".into()
        }
        fn prepare(
            &self,
            h: &ComplexMatrix,
            sys: &System,
        ) -> Result<Box<dyn PreparedLlr>, DetectError> {
            Ok(Box::new(HardPrepared(DetectorSpec::MlMaxLog.build().prepare(h, sys)?)))
        }
    }
    impl PreparedLlr for HardPrepared {
        fn llr(&self, y: &ComplexMatrix) -> Result<Vec<LlrMatrix>, DetectError> {
            let mut llrs = self.0.llr(y)?;
            for l in llrs.iter_mut() {
                for v in l.data.iter_mut() {
                    *v = if *v > 0.0 { LLR_CLIP } else { -LLR_CLIP };
                }
            }
            Ok(llrs)
        }
    }

    /// Exact-ML detector with LLRs scaled by a constant (miscalibration stub).
    struct ScaledMl(f64);
    struct ScaledPrepared(Box<dyn PreparedLlr>, f64);
    impl SoftDetector for ScaledMl {
        fn name(&self) -> String {
            format!("ml-scaled:{}", self.0)
        }
        fn prepare(
            &self,
            h: &ComplexMatrix,
            sys: &System,
        ) -> Result<Box<dyn PreparedLlr>, DetectError> {
            Ok(Box::new(ScaledPrepared(
                DetectorSpec::MlExact.build().prepare(h, sys)?,
                self.0,
            )))
        }
    }
    impl PreparedLlr for ScaledPrepared {
        fn llr(&self, y: &ComplexMatrix) -> Result<Vec<LlrMatrix>, DetectError> {
            let mut llrs = self.0.llr(y)?;
            for l in llrs.iter_mut() {
                for v in l.data.iter_mut() {
                    *v *= self.1;
                }
            }
            Ok(llrs)
        }
    }

    #[test]
    fn bit_metric_basics() {
        assert!((bit_metric_q(0.0, 0) - 0.5).abs() < 1e-15);
        assert!((bit_metric_q(0.0, 1) - 0.5).abs() < 1e-15);
        assert!((bit_metric_q(3f64.ln(), 1) - 0.75).abs() < 1e-15);
        let mut rng = RngStream::new(1);
        for _ in 0..100 {
            let l = rng.uniform_range(-20.0, 20.0);
            assert!((bit_metric_q(l, 1) - bit_metric_q(-l, 0)).abs() < 1e-15);
            assert!((bit_metric_q(l, 0) + bit_metric_q(l, 1) - 1.0).abs() < 1e-15);
            assert!((log2_q(l, 1) - bit_metric_q(l, 1).log2()).abs() < 1e-12);
        }
        // Floor engages for absurdly large stub inputs.
        assert_eq!(log2_q(-1e6, 1), LOG2_Q_FLOOR);
    }

    #[test]
    fn zero_llr_stub_gives_zero_bmdr() {
        let sys = sys_of(4, &[(1, 2), (1, 4)]);
        let rng = RngStream::new(2);
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &rng)[0];
        let est =
            bmdr_mc_estimate(ch, &sys, &[1.0, 1.0], &ZeroLlr, 50, &RngStream::new(3)).unwrap();
        for e in &est {
            assert_eq!(e.value, 0.0);
            assert!((e.pre_floor - 0.0).abs() < 1e-15); // 1 + log2(1/2)
            assert_eq!(e.std_err, 0.0);
        }
    }

    #[test]
    fn saturated_genie_approaches_one() {
        // At very high power the hard-ML stub decides every bit correctly and
        // each sample contributes exactly log2(1/(1+e^-20)).
        let sys = sys_of(2, &[(1, 2)]);
        let rng = RngStream::new(4);
        let ch = &generate_iid_rayleigh(2, &sys.users, 1, &rng)[0];
        let est = bmdr_mc_estimate(ch, &sys, &[1e6], &HardMl, 200, &RngStream::new(5)).unwrap();
        let expected = 1.0 + log2_q(LLR_CLIP, 1);
        assert!((est[0].value - expected).abs() < 1e-12);
        assert!((est[0].value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn estimates_are_seed_deterministic_and_in_range() {
        let sys = sys_of(4, &[(1, 4), (1, 2)]);
        let rng = RngStream::new(6);
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &rng)[0];
        let det = DetectorSpec::Lmmse.build();
        let a = bmdr_mc_estimate(ch, &sys, &[1.0, 2.0], det.as_ref(), 300, &RngStream::new(7))
            .unwrap();
        let b = bmdr_mc_estimate(ch, &sys, &[1.0, 2.0], det.as_ref(), 300, &RngStream::new(7))
            .unwrap();
        assert_eq!(a, b);
        for e in &a {
            assert!(e.value >= 0.0 && e.value <= 1.0);
            assert!(e.pre_floor <= 1.0 + 1e-12);
            assert!(e.std_err > 0.0);
        }
    }

    #[test]
    fn siso_awgn_matches_large_sample_oracle() {
        // 4-QAM, exact ML, 10 dB: moderate-N estimate vs a high-precision run.
        let sys = sys_of(1, &[(1, 2)]);
        let ch = ChannelRealization {
            h: ComplexMatrix::identity(1),
            user_offsets: vec![0],
            id: 0,
            subcarrier: 0,
            symbol: 0,
        };
        let det = DetectorSpec::MlExact.build();
        let rho = [10f64.powf(10.0 / 10.0)];
        let est =
            bmdr_mc_estimate(&ch, &sys, &rho, det.as_ref(), 20_000, &RngStream::new(8)).unwrap();
        let oracle =
            bmdr_mc_estimate(&ch, &sys, &rho, det.as_ref(), 1_000_000, &RngStream::new(9))
                .unwrap();
        assert!(
            (est[0].value - oracle[0].value).abs() < 0.01,
            "estimate {} vs oracle {}",
            est[0].value,
            oracle[0].value
        );
        // 4-QAM at 10 dB is essentially saturated
        assert!(oracle[0].value > 0.95);
    }

    #[test]
    fn ce_perfect_inputs_equal_perfect_estimator_bitwise() {
        let sys = sys_of(4, &[(1, 2), (1, 2)]);
        let rng = RngStream::new(10);
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &rng)[0];
        let det = DetectorSpec::KBest { k: 8 }.build();
        let base = RngStream::new(11);
        let perfect = bmdr_mc_estimate(ch, &sys, &[1.0, 1.0], det.as_ref(), 100, &base).unwrap();
        let ce = bmdr_mc_estimate_ce(
            ch,
            ch,
            &NoiseModel::identity(4),
            &sys,
            &[1.0, 1.0],
            det.as_ref(),
            100,
            &base,
        )
        .unwrap();
        assert_eq!(perfect, ce);
    }

    #[test]
    fn estimation_error_lowers_bmdr_on_matched_seeds() {
        let sys = sys_of(4, &[(1, 2), (1, 2)]);
        let rng = RngStream::new(12);
        let chans = generate_iid_rayleigh(4, &sys.users, 2, &rng);
        let (ch_true, ch_other) = (&chans[0], &chans[1]);
        let det = DetectorSpec::Lmmse.build();
        let base = RngStream::new(13);
        let rho = [2.0, 2.0];

        let perfect = bmdr_mc_estimate(ch_true, &sys, &rho, det.as_ref(), 400, &base).unwrap();
        // Estimate is a different channel entirely plus a large error
        // covariance: BMDR must drop.
        let noisy = NoiseModel::new(
            ComplexMatrix::identity(4),
            ComplexMatrix::identity(4).scale(9.0),
        )
        .unwrap();
        let ce =
            bmdr_mc_estimate_ce(ch_true, ch_other, &noisy, &sys, &rho, det.as_ref(), 400, &base)
                .unwrap();
        for u in 0..2 {
            assert!(
                ce[u].value < perfect[u].value,
                "user {u}: ce {} >= perfect {}",
                ce[u].value,
                perfect[u].value
            );
        }
    }

    #[test]
    fn noise_level_sweep_is_non_increasing() {
        let sys = sys_of(4, &[(1, 2), (1, 2)]);
        let rng = RngStream::new(14);
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &rng)[0];
        let det = DetectorSpec::Lmmse.build();
        let base = RngStream::new(15);
        let rho = [1.0, 1.0];
        let mut prev = [f64::INFINITY; 2];
        for scale in [1.0, 4.0, 16.0] {
            let nm = NoiseModel::new(
                ComplexMatrix::identity(4).scale(scale),
                ComplexMatrix::zeros(4, 4),
            )
            .unwrap();
            let est =
                bmdr_mc_estimate_ce(ch, ch, &nm, &sys, &rho, det.as_ref(), 400, &base).unwrap();
            for u in 0..2 {
                assert!(
                    est[u].value <= prev[u] + 1e-12,
                    "noise {scale}: {} > {}",
                    est[u].value,
                    prev[u]
                );
                prev[u] = est[u].value;
            }
        }
    }

    #[test]
    fn set_estimate_is_mean_and_duplication_invariant() {
        let sys = sys_of(4, &[(1, 2), (1, 2)]);
        let rng = RngStream::new(16);
        let chans = generate_iid_rayleigh(4, &sys.users, 3, &rng);
        let det = DetectorSpec::Lmmse.build();
        let base = RngStream::new(17);
        let rho = [1.0, 1.0];

        let set = bmdr_set(&chans, &sys, &rho, det.as_ref(), 100, &base).unwrap();
        let singles: Vec<Vec<BmdrEstimate>> = chans
            .iter()
            .map(|c| bmdr_mc_estimate(c, &sys, &rho, det.as_ref(), 100, &base).unwrap())
            .collect();
        for u in 0..2 {
            let mean = singles.iter().map(|s| s[u].value).sum::<f64>() / 3.0;
            assert!((set[u].value - mean).abs() < 1e-15, "exact mean identity");
        }

        // Singleton and duplicated sets agree on matched seeds.
        let single = bmdr_set(&chans[..1], &sys, &rho, det.as_ref(), 100, &base).unwrap();
        let dup = vec![chans[0].clone(), chans[0].clone()];
        let doubled = bmdr_set(&dup, &sys, &rho, det.as_ref(), 100, &base).unwrap();
        for u in 0..2 {
            assert_eq!(single[u].value, doubled[u].value);
            assert!((single[u].value - singles[0][u].value).abs() < 1e-15);
        }

        assert!(matches!(
            bmdr_set(&[], &sys, &rho, det.as_ref(), 10, &base),
            Err(BmdrError::EmptySet)
        ));
    }

    #[test]
    fn gmi_at_one_equals_prefloor_bmdr() {
        let sys = sys_of(4, &[(1, 4), (1, 2)]);
        let rng = RngStream::new(18);
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &rng)[0];
        let det = DetectorSpec::KBest { k: 8 }.build();
        let base = RngStream::new(19);
        let rho = [1.0, 0.5];
        let bmdr = bmdr_mc_estimate(ch, &sys, &rho, det.as_ref(), 200, &base).unwrap();
        let gmi = gmi_s(ch, &sys, &rho, det.as_ref(), 1.0, 200, &base).unwrap();
        for u in 0..2 {
            assert!(
                (gmi[u].pre_floor - bmdr[u].pre_floor).abs() < 1e-9,
                "user {u}: gmi {} vs bmdr {}",
                gmi[u].pre_floor,
                bmdr[u].pre_floor
            );
        }
    }

    #[test]
    fn gmi_zero_llrs_is_zero_for_all_s() {
        let sys = sys_of(2, &[(1, 2)]);
        let rng = RngStream::new(20);
        let ch = &generate_iid_rayleigh(2, &sys.users, 1, &rng)[0];
        for s in [0.3, 1.0, 2.5] {
            let g = gmi_s(ch, &sys, &[1.0], &ZeroLlr, s, 50, &RngStream::new(21)).unwrap();
            assert!(g[0].value.abs() < 1e-12);
            assert!(g[0].pre_floor.abs() < 1e-12);
        }
    }

    #[test]
    fn gmi_sup_peaks_near_one_for_calibrated_llrs() {
        let sys = sys_of(2, &[(1, 2)]);
        let rng = RngStream::new(22);
        let ch = &generate_iid_rayleigh(2, &sys.users, 1, &rng)[0];
        let det = DetectorSpec::MlExact.build();
        let grid: Vec<f64> = (1..=30).map(|i| i as f64 * 0.1).collect();
        let sup =
            gmi_sup(ch, &sys, &[0.8], det.as_ref(), &grid, 4000, &RngStream::new(23)).unwrap();
        assert!(
            (sup[0].0 - 1.0).abs() <= 0.15,
            "calibrated s* = {} should be near 1",
            sup[0].0
        );

        // Defining sup property: the maximum dominates the s = 1 value for a
        // deliberately miscalibrated detector.
        let scaled = ScaledMl(3.0);
        let base = RngStream::new(24);
        let sup3 = gmi_sup(ch, &sys, &[0.8], &scaled, &grid, 4000, &base).unwrap();
        let at1 = gmi_s(ch, &sys, &[0.8], &scaled, 1.0, 4000, &base).unwrap();
        assert!(sup3[0].1 >= at1[0].pre_floor - 1e-12);
        // And the maximizer sits near 1/3.
        assert!(
            (sup3[0].0 - 1.0 / 3.0).abs() <= 0.1,
            "s* = {} should be near 1/3",
            sup3[0].0
        );
    }

    #[test]
    fn concentration_scales_as_inverse_sqrt_n() {
        let sys = sys_of(4, &[(1, 2), (1, 2)]);
        let rng = RngStream::new(25);
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &rng)[0];
        let det = DetectorSpec::Lmmse.build();
        let rho = [1.5, 1.5];
        let stds: Vec<f64> = [100usize, 400]
            .iter()
            .map(|&n| {
                let vals: Vec<f64> = (0..40)
                    .map(|seed| {
                        bmdr_mc_estimate(
                            ch,
                            &sys,
                            &rho,
                            det.as_ref(),
                            n,
                            &RngStream::new(1000 + seed),
                        )
                        .unwrap()[0]
                            .value
                    })
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
                    .sqrt()
            })
            .collect();
        let ratio = stds[1] / stds[0];
        assert!(ratio > 0.5 / 1.5 && ratio < 0.5 * 1.5, "std ratio {ratio} not ~0.5");
    }

    #[test]
    fn sign_diagonal_invariance_is_exact() {
        // Real-domain check of the two augmentation identities: on matched
        // noise and symbol draws, the per-sample bit metrics on R*D (with
        // relabeled symbols) and D*R (with flipped observation) equal those
        // on R exactly.
        let sys = sys_of(4, &[(1, 2), (1, 2)]);
        let levels = real_levels(&sys);
        let rng = RngStream::new(26);
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &rng)[0];
        let embedded = real_embed_matrix(&ch.h).unwrap();
        let (_, r) = qr_decompose(&embedded).unwrap();
        let n = r.rows;
        let full_k = 1 << 4;

        let mut srng = RngStream::new(27);
        let mut nrng = RngStream::new(28);
        let mut drng = RngStream::new(29);

        let mut acc_base = 0.0;
        let mut acc_right = 0.0;
        let mut acc_left = 0.0;
        for _ in 0..50 {
            let labs: Vec<usize> = (0..n).map(|_| srng.below(2)).collect();
            let amps: Vec<f64> =
                labs.iter().zip(levels.iter()).map(|(&l, lv)| lv.pam[l]).collect();
            let noise: Vec<f64> = (0..n).map(|_| nrng.normal() * 0.5f64.sqrt()).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let mut acc = noise[i];
                    for j in 0..n {
                        acc += r.get(i, j) * amps[j];
                    }
                    acc
                })
                .collect();
            let d: Vec<f64> = (0..n).map(|_| drng.sign()).collect();

            // base
            let surv = kbest_search(&y, &r, &levels, full_k);
            let llr = kbest_llrs_from_survivors(&surv, &levels, &sys);
            acc_base += metric_sum(&llr, &labs, &levels, &sys);

            // right: R*D with relabeled symbols (sign-bit XOR where d = -1);
            // the observation is unchanged because (RD)(Ds) = Rs.
            let mut rd = r.clone();
            for col in 0..n {
                if d[col] < 0.0 {
                    for row in 0..n {
                        let v = -rd.get(row, col);
                        rd.set(row, col, v);
                    }
                }
            }
            let labs_r: Vec<usize> = labs
                .iter()
                .zip(d.iter())
                .map(|(&l, &s)| if s < 0.0 { l ^ 1 } else { l })
                .collect();
            let surv_r = kbest_search(&y, &rd, &levels, full_k);
            let llr_r = kbest_llrs_from_survivors(&surv_r, &levels, &sys);
            acc_right += metric_sum(&llr_r, &labs_r, &levels, &sys);

            // left: D*R with the observation flipped to D*y, same symbols.
            let mut dr = RealMatrix::zeros(n, n);
            for row in 0..n {
                for col in 0..n {
                    dr.set(row, col, d[row] * r.get(row, col));
                }
            }
            let dy: Vec<f64> = (0..n).map(|i| d[i] * y[i]).collect();
            let surv_l = kbest_search(&dy, &dr, &levels, full_k);
            let llr_l = kbest_llrs_from_survivors(&surv_l, &levels, &sys);
            acc_left += metric_sum(&llr_l, &labs, &levels, &sys);
        }
        assert_eq!(acc_base, acc_right, "right augmentation must be exact");
        assert_eq!(acc_base, acc_left, "left augmentation must be exact");
    }

    fn metric_sum(
        llrs: &[LlrMatrix],
        labs: &[usize],
        levels: &[crate::detect::RealLevel],
        sys: &System,
    ) -> f64 {
        let mut acc = 0.0;
        for (lv, level) in levels.iter().enumerate() {
            let h = sys.users[level.user].constellation.axis_bits();
            for j in 0..h {
                let bit = ((labs[lv] >> (h - 1 - j)) & 1) as u8;
                acc += log2_q(llrs[level.user].get(level.row, level.bit_offset + j), bit);
            }
        }
        acc
    }

    #[test]
    fn snr_table_asymptotes_and_oracle() {
        let c = build_qam(2).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 4.0 - 40.0).collect();
        let rng = RngStream::new(30);
        let table = build_snr_bmdr_table(&c, &grid, 20_000, &rng).unwrap();
        // asymptotes
        let (lo, _) = table.lookup(-40.0);
        let (hi, _) = table.lookup(40.0);
        assert!(lo < 0.01, "BMDR at -40 dB = {lo}");
        assert!(hi > 0.99, "BMDR at +40 dB = {hi}");
        // monotone column
        for w in table.bmdr.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
        // 3 dB point against a large-sample direct estimate
        let oracle = {
            let sys = sys_of(1, &[(1, 2)]);
            let ch = ChannelRealization {
                h: ComplexMatrix::identity(1),
                user_offsets: vec![0],
                id: 0,
                subcarrier: 0,
                symbol: 0,
            };
            let det = DetectorSpec::MlExact.build();
            bmdr_mc_estimate(
                &ch,
                &sys,
                &[10f64.powf(0.3)],
                det.as_ref(),
                1_000_000,
                &RngStream::new(31),
            )
            .unwrap()[0]
                .value
        };
        let (v, clamped) = table.lookup(3.0);
        assert!(!clamped);
        assert!((v - oracle).abs() < 0.01, "table {v} vs oracle {oracle}");
    }

    #[test]
    fn snr_table_round_trips() {
        let c = build_qam(4).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let rng = RngStream::new(32);
        let table = build_snr_bmdr_table(&c, &grid, 2000, &rng).unwrap();
        let dir = std::env::temp_dir().join("bmdr_core_table_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.sbmt");
        table.save(&path).unwrap();
        let loaded = SnrBmdrTable::load(&path).unwrap();
        assert_eq!(table, loaded);

        // Truncation detected.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(SnrBmdrTable::load(&path), Err(BmdrError::TruncatedFile)));
        // Bad magic detected.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(SnrBmdrTable::load(&path), Err(BmdrError::BadMagic { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn lmmse_prediction_tracks_direct_mc() {
        // Interference-free single user: the post-equalization channel is
        // exactly scalar AWGN, so prediction and direct MC agree within MC
        // noise and interpolation error.
        let sys = sys_of(4, &[(1, 4)]);
        let grid: Vec<f64> = (-10..=30).map(|i| i as f64).collect();
        let rng = RngStream::new(33);
        let mut tables = TableSet::new();
        tables.insert(build_snr_bmdr_table(&build_qam(4).unwrap(), &grid, 50_000, &rng).unwrap());

        let det = DetectorSpec::Lmmse.build();
        let chans = generate_iid_rayleigh(4, &sys.users, 10, &RngStream::new(34));
        for (i, ch) in chans.iter().enumerate() {
            let rho = [10f64.powf((i as f64 - 5.0) / 10.0)];
            let pred = lmmse_bmdr_predict(ch, &sys, &rho, &tables).unwrap();
            let mc = bmdr_mc_estimate(ch, &sys, &rho, det.as_ref(), 20_000, &RngStream::new(35))
                .unwrap();
            assert!(
                (pred[0].value - mc[0].value).abs() < 0.02,
                "channel {i}: pred {} vs mc {}",
                pred[0].value,
                mc[0].value
            );
        }
    }

    #[test]
    fn lmmse_prediction_monotone_in_power() {
        let sys = sys_of(4, &[(1, 2), (1, 2)]);
        let grid: Vec<f64> = (-20..=30).map(|i| i as f64).collect();
        let rng = RngStream::new(36);
        let mut tables = TableSet::new();
        tables.insert(build_snr_bmdr_table(&build_qam(2).unwrap(), &grid, 5000, &rng).unwrap());
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &RngStream::new(37))[0];
        let mut prev = -1.0;
        for p_db in (-15..15).step_by(2) {
            let rho = [10f64.powf(p_db as f64 / 10.0), 1.0];
            let pred = lmmse_bmdr_predict(ch, &sys, &rho, &tables).unwrap();
            assert!(pred[0].value >= prev - 1e-12);
            prev = pred[0].value;
        }
    }

    #[test]
    fn lmmse_prediction_clamps_below_table() {
        let sys = sys_of(4, &[(1, 2)]);
        let grid: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let rng = RngStream::new(38);
        let mut tables = TableSet::new();
        tables.insert(build_snr_bmdr_table(&build_qam(2).unwrap(), &grid, 2000, &rng).unwrap());
        let ch = &generate_iid_rayleigh(4, &sys.users, 1, &RngStream::new(39))[0];
        let pred = lmmse_bmdr_predict(ch, &sys, &[1e-8], &tables).unwrap();
        assert!(pred[0].clamped);
        let (floor_val, _) = tables.get(2).unwrap().lookup(0.0);
        assert_eq!(pred[0].value, floor_val);

        // Missing table is an error.
        let sys16 = sys_of(4, &[(1, 4)]);
        let ch16 = &generate_iid_rayleigh(4, &sys16.users, 1, &RngStream::new(40))[0];
        assert!(matches!(
            lmmse_bmdr_predict(ch16, &sys16, &[1.0], &tables),
            Err(BmdrError::MissingTable { m: 4 })
        ));
    }

    #[test]
    fn isotonic_pass_is_correct() {
        let mut v = vec![0.1, 0.3, 0.2, 0.5, 0.4, 0.4, 0.9];
        isotonic_non_decreasing(&mut v);
        for w in v.windows(2) {
            assert!(w[0] <= w[1] + 1e-15);
        }
        assert!((v[1] - 0.25).abs() < 1e-12 && (v[2] - 0.25).abs() < 1e-12);
    }
}
