//! Soft-output MU-MIMO detectors behind one pluggable contract.
//!
//! A detector maps `(y, H_eff)` to one LLR matrix per user, where `H_eff` is
//! the power-scaled composite channel (`H * Omega`), symbols are unit-energy
//! and the noise is CN(0, I). LLRs use the convention
//! `LLR = ln q(b=1) / q(b=0)` and are clipped to `[-LLR_CLIP, LLR_CLIP]`.
//!
//! Detectors are split into a cheap stateless front and a per-channel
//! [`PreparedLlr`] so Monte-Carlo loops pay the equalizer/QR cost once per
//! channel instead of once per sample.

use crate::channel::System;
use crate::linalg::{
    qr_decompose, real_embed_matrix, real_embed_slice, ComplexMatrix, LinalgError, RealMatrix,
};
use num_complex::Complex64;
use std::str::FromStr;
use thiserror::Error;

/// LLR clip bound in natural-log units. Beyond this the bit metric
/// saturates within 2e-9, and it keeps `q` bounded away from 0.
pub const LLR_CLIP: f64 = 20.0;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("exhaustive enumeration too large: {bits} bits exceeds {max}")]
    TooLarge { bits: usize, max: usize },
    #[error("unknown detector spec '{0}'")]
    UnknownSpec(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Per-user LLR matrix: `n_t` rows (antennas) by `m` columns (bit index).
#[derive(Debug, Clone, PartialEq)]
pub struct LlrMatrix {
    pub n_t: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl LlrMatrix {
    pub fn zeros(n_t: usize, m: usize) -> Self {
        Self { n_t, m, data: vec![0.0; n_t * m] }
    }

    #[inline]
    pub fn get(&self, row: usize, j: usize) -> f64 {
        self.data[row * self.m + j]
    }

    #[inline]
    pub fn set(&mut self, row: usize, j: usize, v: f64) {
        self.data[row * self.m + j] = v;
    }

    pub fn zeros_for(sys: &System) -> Vec<LlrMatrix> {
        sys.users
            .iter()
            .map(|u| LlrMatrix::zeros(u.n_t, u.constellation.bits_per_symbol))
            .collect()
    }
}

#[inline]
pub fn clip_llr(x: f64) -> f64 {
    x.clamp(-LLR_CLIP, LLR_CLIP)
}

/// One soft-output detection algorithm.
pub trait SoftDetector: Send + Sync {
    fn name(&self) -> String;

    /// Bind the detector to one effective channel.
    fn prepare(
        &self,
        h_eff: &ComplexMatrix,
        sys: &System,
    ) -> Result<Box<dyn PreparedLlr>, DetectError>;

    /// One-shot LLR computation (prepares internally).
    fn llr(
        &self,
        y: &ComplexMatrix,
        h_eff: &ComplexMatrix,
        sys: &System,
    ) -> Result<Vec<LlrMatrix>, DetectError> {
        self.prepare(h_eff, sys)?.llr(y)
    }
}

/// Detector bound to one effective channel, ready for per-sample calls.
pub trait PreparedLlr: Send + Sync {
    fn llr(&self, y: &ComplexMatrix) -> Result<Vec<LlrMatrix>, DetectError>;
}

/// Detector selection by name and parameters, e.g. `lmmse`, `ml-exact`,
/// `ml-maxlog`, `kbest:K=32`.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSpec {
    Lmmse,
    MlExact,
    MlMaxLog,
    KBest { k: usize },
}

impl FromStr for DetectorSpec {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self, DetectError> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "lmmse" => Ok(DetectorSpec::Lmmse),
            "ml-exact" => Ok(DetectorSpec::MlExact),
            "ml-maxlog" => Ok(DetectorSpec::MlMaxLog),
            _ => {
                if let Some(rest) = lower.strip_prefix("kbest:k=") {
                    let k: usize = rest
                        .parse()
                        .map_err(|_| DetectError::UnknownSpec(s.to_string()))?;
                    if k == 0 {
                        return Err(DetectError::UnknownSpec(s.to_string()));
                    }
                    return Ok(DetectorSpec::KBest { k });
                }
                Err(DetectError::UnknownSpec(s.to_string()))
            }
        }
    }
}

impl std::fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DetectorSpec::Lmmse => write!(f, "lmmse"),
            DetectorSpec::MlExact => write!(f, "ml-exact"),
            DetectorSpec::MlMaxLog => write!(f, "ml-maxlog"),
            DetectorSpec::KBest { k } => write!(f, "kbest:K={k}"),
        }
    }
}

impl DetectorSpec {
    pub fn build(&self) -> Box<dyn SoftDetector> {
        match self {
            DetectorSpec::Lmmse => Box::new(Lmmse),
            DetectorSpec::MlExact => Box::new(Ml { max_log: false }),
            DetectorSpec::MlMaxLog => Box::new(Ml { max_log: true }),
            DetectorSpec::KBest { k } => Box::new(KBest { k: *k }),
        }
    }
}

/// (user, antenna row) of each global stream index.
fn stream_map(sys: &System) -> Vec<(usize, usize)> {
    let mut map = Vec::with_capacity(sys.total_streams());
    for (u, cfg) in sys.users.iter().enumerate() {
        for l in 0..cfg.n_t {
            map.push((u, l));
        }
    }
    map
}

/// Exact per-axis LLRs for a scalar real observation `z` over a PAM
/// alphabet with per-axis noise variance `sigma2`, log-sum-exp stabilized.
///
/// `pam[label]` is the amplitude of an axis label; `out[j]` receives the LLR
/// of axis bit `j` (bit 0 = sign bit, most significant).
pub fn axis_llrs_exact(z: f64, sigma2: f64, pam: &[f64], out: &mut [f64]) {
    let h = out.len();
    debug_assert_eq!(pam.len(), 1 << h);
    let inv = 1.0 / (2.0 * sigma2);
    let metrics: Vec<f64> = pam.iter().map(|&a| -(z - a) * (z - a) * inv).collect();
    for (j, o) in out.iter_mut().enumerate() {
        let bitpos = h - 1 - j;
        let mut max1 = f64::NEG_INFINITY;
        let mut max0 = f64::NEG_INFINITY;
        for (lab, &m) in metrics.iter().enumerate() {
            if (lab >> bitpos) & 1 == 1 {
                max1 = max1.max(m);
            } else {
                max0 = max0.max(m);
            }
        }
        let mut s1 = 0.0;
        let mut s0 = 0.0;
        for (lab, &m) in metrics.iter().enumerate() {
            if (lab >> bitpos) & 1 == 1 {
                s1 += (m - max1).exp();
            } else {
                s0 += (m - max0).exp();
            }
        }
        *o = clip_llr(max1 + s1.ln() - (max0 + s0.ln()));
    }
}

// ---------------------------------------------------------------------------
// LMMSE
// ---------------------------------------------------------------------------

/// LMMSE equalizer followed by per-stream scalar demapping.
pub struct Lmmse;

struct PreparedLmmse {
    w: ComplexMatrix,
    gains: Vec<f64>,
    streams: Vec<(usize, usize)>,
    sys: System,
}

impl SoftDetector for Lmmse {
    fn name(&self) -> String {
        "lmmse".into()
    }

    fn prepare(
        &self,
        h_eff: &ComplexMatrix,
        sys: &System,
    ) -> Result<Box<dyn PreparedLlr>, DetectError> {
        check_dims(h_eff, sys)?;
        let a_inv = regularized_gram_inverse(h_eff);
        let w = a_inv.matmul(&h_eff.hermitian());
        // g_k = [W H]_{kk} = 1 - [A^{-1}]_{kk}
        let n = h_eff.cols;
        let wh = w.matmul(h_eff);
        let gains: Vec<f64> = (0..n).map(|k| wh.get(k, k).re).collect();
        Ok(Box::new(PreparedLmmse { w, gains, streams: stream_map(sys), sys: sys.clone() }))
    }
}

impl PreparedLlr for PreparedLmmse {
    fn llr(&self, y: &ComplexMatrix) -> Result<Vec<LlrMatrix>, DetectError> {
        if y.rows != self.w.cols || y.cols != 1 {
            return Err(DetectError::ShapeMismatch(format!(
                "y is {}x{}, expected {}x1",
                y.rows, y.cols, self.w.cols
            )));
        }
        let s_hat = self.w.matvec(&y.data);
        let mut out = LlrMatrix::zeros_for(&self.sys);
        let mut axis = [0.0f64; 3];
        for (k, &(u, row)) in self.streams.iter().enumerate() {
            let cfg = &self.sys.users[u];
            let h = cfg.constellation.axis_bits();
            let g = self.gains[k];
            if g <= 1e-12 {
                continue; // dead stream, LLRs stay zero
            }
            let sinr = g / (1.0 - g).max(1e-15);
            let z = s_hat[k] / g;
            // Unit-energy symbol plus complex noise of variance 1/sinr:
            // each axis sees variance 1/(2 sinr).
            let sigma2 = 1.0 / (2.0 * sinr);
            axis_llrs_exact(z.re, sigma2, &cfg.constellation.pam, &mut axis[..h]);
            for j in 0..h {
                out[u].set(row, j, axis[j]);
            }
            axis_llrs_exact(z.im, sigma2, &cfg.constellation.pam, &mut axis[..h]);
            for j in 0..h {
                out[u].set(row, h + j, axis[j]);
            }
        }
        Ok(out)
    }
}

/// Post-equalization SINR per stream: `1 / [(I + H^H H)^{-1}]_kk - 1`
/// on the power-scaled channel.
pub fn post_eq_sinr(h_eff: &ComplexMatrix) -> Vec<f64> {
    let a_inv = regularized_gram_inverse(h_eff);
    (0..h_eff.cols)
        .map(|k| {
            let d = a_inv.get(k, k).re;
            (1.0 / d - 1.0).max(0.0)
        })
        .collect()
}

/// `(H^H H + I)^{-1}` via complex Cholesky.
fn regularized_gram_inverse(h_eff: &ComplexMatrix) -> ComplexMatrix {
    let n = h_eff.cols;
    let mut a = h_eff.hermitian().matmul(h_eff);
    for i in 0..n {
        let v = a.get(i, i) + Complex64::new(1.0, 0.0);
        a.set(i, i, v);
    }
    // A = L L^H
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j).re;
        for k in 0..j {
            d -= l.get(j, k).norm_sqr();
        }
        let djj = d.max(1e-300).sqrt();
        l.set(j, j, Complex64::new(djj, 0.0));
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k).conj();
            }
            l.set(i, j, v / djj);
        }
    }
    // L^{-1} by forward substitution
    let mut linv = ComplexMatrix::zeros(n, n);
    for c in 0..n {
        for r in c..n {
            if r == c {
                linv.set(r, c, Complex64::new(1.0 / l.get(r, r).re, 0.0));
            } else {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in c..r {
                    acc += l.get(r, k) * linv.get(k, c);
                }
                linv.set(r, c, -acc / l.get(r, r).re);
            }
        }
    }
    // A^{-1} = L^{-H} L^{-1}
    linv.hermitian().matmul(&linv)
}

fn check_dims(h_eff: &ComplexMatrix, sys: &System) -> Result<(), DetectError> {
    if h_eff.rows != sys.n_r || h_eff.cols != sys.total_streams() {
        return Err(DetectError::ShapeMismatch(format!(
            "channel is {}x{}, system expects {}x{}",
            h_eff.rows,
            h_eff.cols,
            sys.n_r,
            sys.total_streams()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exact / max-log ML
// ---------------------------------------------------------------------------

const ML_MAX_BITS: usize = 16;

/// Exhaustive ML detector, exact (log-sum-exp) or max-log.
pub struct Ml {
    pub max_log: bool,
}

struct PreparedMl {
    max_log: bool,
    /// H s for every composite hypothesis, n_r entries per hypothesis.
    hs: Vec<Complex64>,
    n_r: usize,
    total_bits: usize,
    /// (user, row, bits per symbol) per stream in enumeration order; the
    /// first stream occupies the most significant label bits.
    streams: Vec<(usize, usize, usize)>,
    sys: System,
}

impl SoftDetector for Ml {
    fn name(&self) -> String {
        if self.max_log {
            "ml-maxlog".into()
        } else {
            "ml-exact".into()
        }
    }

    fn prepare(
        &self,
        h_eff: &ComplexMatrix,
        sys: &System,
    ) -> Result<Box<dyn PreparedLlr>, DetectError> {
        check_dims(h_eff, sys)?;
        let smap = stream_map(sys);
        let streams: Vec<(usize, usize, usize)> = smap
            .iter()
            .map(|&(u, row)| (u, row, sys.users[u].constellation.bits_per_symbol))
            .collect();
        let total_bits: usize = streams.iter().map(|s| s.2).sum();
        if total_bits > ML_MAX_BITS {
            return Err(DetectError::TooLarge { bits: total_bits, max: ML_MAX_BITS });
        }
        let count = 1usize << total_bits;
        let n_r = sys.n_r;
        let n = sys.total_streams();
        let mut hs = vec![Complex64::new(0.0, 0.0); count * n_r];
        let mut s = vec![Complex64::new(0.0, 0.0); n];
        for combo in 0..count {
            let mut shift = total_bits;
            for (k, &(u, _, m)) in streams.iter().enumerate() {
                shift -= m;
                let label = (combo >> shift) & ((1 << m) - 1);
                s[k] = sys.users[u].constellation.point(label);
            }
            let y = h_eff.matvec(&s);
            hs[combo * n_r..(combo + 1) * n_r].copy_from_slice(&y);
        }
        Ok(Box::new(PreparedMl {
            max_log: self.max_log,
            hs,
            n_r,
            total_bits,
            streams,
            sys: sys.clone(),
        }))
    }
}

impl PreparedLlr for PreparedMl {
    fn llr(&self, y: &ComplexMatrix) -> Result<Vec<LlrMatrix>, DetectError> {
        if y.rows != self.n_r || y.cols != 1 {
            return Err(DetectError::ShapeMismatch(format!(
                "y is {}x{}, expected {}x1",
                y.rows, y.cols, self.n_r
            )));
        }
        let count = 1usize << self.total_bits;
        // Log-likelihood (up to a constant) of every hypothesis.
        let mut metric = vec![0.0f64; count];
        for combo in 0..count {
            let base = combo * self.n_r;
            let mut d = 0.0;
            for r in 0..self.n_r {
                d += (y.data[r] - self.hs[base + r]).norm_sqr();
            }
            metric[combo] = -d;
        }

        let mut out = LlrMatrix::zeros_for(&self.sys);
        let mut shift = self.total_bits;
        for &(u, row, m) in &self.streams {
            shift -= m;
            for j in 0..m {
                let bitpos = shift + m - 1 - j;
                let llr = if self.max_log {
                    let mut best1 = f64::NEG_INFINITY;
                    let mut best0 = f64::NEG_INFINITY;
                    for (combo, &mt) in metric.iter().enumerate() {
                        if (combo >> bitpos) & 1 == 1 {
                            best1 = best1.max(mt);
                        } else {
                            best0 = best0.max(mt);
                        }
                    }
                    best1 - best0
                } else {
                    let mut max1 = f64::NEG_INFINITY;
                    let mut max0 = f64::NEG_INFINITY;
                    for (combo, &mt) in metric.iter().enumerate() {
                        if (combo >> bitpos) & 1 == 1 {
                            max1 = max1.max(mt);
                        } else {
                            max0 = max0.max(mt);
                        }
                    }
                    let mut s1 = 0.0;
                    let mut s0 = 0.0;
                    for (combo, &mt) in metric.iter().enumerate() {
                        if (combo >> bitpos) & 1 == 1 {
                            s1 += (mt - max1).exp();
                        } else {
                            s0 += (mt - max0).exp();
                        }
                    }
                    (max1 + s1.ln()) - (max0 + s0.ln())
                };
                out[u].set(row, j, clip_llr(llr));
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// K-best
// ---------------------------------------------------------------------------

/// Breadth-first tree search in the real-valued model, keeping the K best
/// partial candidates per level; max-log LLRs from the survivor list.
pub struct KBest {
    pub k: usize,
}

/// Alphabet of one real-domain level: per-axis PAM amplitudes indexed by
/// the axis label, plus where the level's bits land in the output.
#[derive(Debug, Clone)]
pub struct RealLevel {
    pub pam: Vec<f64>,
    pub user: usize,
    pub row: usize,
    /// Column offset of this axis' bits inside the user's LLR matrix
    /// (0 for the I axis, m/2 for the Q axis).
    pub bit_offset: usize,
}

/// Real-domain levels for a system: entries `0..N` are I axes of the streams
/// in order, entries `N..2N` the Q axes.
pub fn real_levels(sys: &System) -> Vec<RealLevel> {
    let smap = stream_map(sys);
    let mut levels = Vec::with_capacity(2 * smap.len());
    for axis in 0..2 {
        for &(u, row) in smap.iter() {
            let c = &sys.users[u].constellation;
            levels.push(RealLevel {
                pam: c.pam.clone(),
                user: u,
                row,
                bit_offset: axis * c.axis_bits(),
            });
        }
    }
    levels
}

/// Survivor of the tree search: per-level axis labels and the accumulated
/// squared distance.
#[derive(Debug, Clone)]
pub struct Survivor {
    pub labels: Vec<u8>,
    pub metric: f64,
}

/// K-best search over `min ||y_bar - R x||^2` with `x` drawn per level from
/// the PAM alphabets. Ties in the survivor sort break by insertion order.
///
/// Candidate labels are packed 3 bits per level into a u128 so the hot loop
/// never allocates; this supports up to 42 levels of 8-point axes (any
/// system this crate targets).
pub fn kbest_search(
    y_bar: &[f64],
    r: &RealMatrix,
    levels: &[RealLevel],
    k: usize,
) -> Vec<Survivor> {
    let n = levels.len();
    debug_assert_eq!(r.rows, n);
    debug_assert_eq!(y_bar.len(), n);
    assert!(n <= 42, "too many real-domain levels for the packed search");
    debug_assert!(levels.iter().all(|l| l.pam.len() <= 8));

    #[derive(Clone, Copy)]
    struct Cand {
        labels: u128,
        metric: f64,
    }
    let lab_at = |labels: u128, lv: usize| -> usize { ((labels >> (3 * lv)) & 7) as usize };

    let mut cands: Vec<Cand> = vec![Cand { labels: 0, metric: 0.0 }];
    let mut next: Vec<Cand> = Vec::new();
    // The search runs bottom-up: level n-1 first (last row of R).
    for lv in (0..n).rev() {
        let rdiag = r.get(lv, lv);
        next.clear();
        for cand in &cands {
            let mut base = y_bar[lv];
            for j in (lv + 1)..n {
                base -= r.get(lv, j) * levels[j].pam[lab_at(cand.labels, j)];
            }
            for (lab, &amp) in levels[lv].pam.iter().enumerate() {
                let e = base - rdiag * amp;
                next.push(Cand {
                    labels: cand.labels | ((lab as u128) << (3 * lv)),
                    metric: cand.metric + e * e,
                });
            }
        }
        // Stable sort keeps insertion order on ties.
        next.sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap());
        next.truncate(k);
        std::mem::swap(&mut cands, &mut next);
    }
    cands
        .into_iter()
        .map(|c| Survivor {
            labels: (0..n).map(|lv| lab_at(c.labels, lv) as u8).collect(),
            metric: c.metric,
        })
        .collect()
}

/// Max-log LLRs from a survivor list. The real model noise variance is 0.5
/// per dimension, so `LLR = D0 - D1` without further scaling. A bit class
/// absent from the survivor list clips at the LLR bound.
pub fn kbest_llrs_from_survivors(
    survivors: &[Survivor],
    levels: &[RealLevel],
    sys: &System,
) -> Vec<LlrMatrix> {
    let mut out = LlrMatrix::zeros_for(sys);
    for (lv, level) in levels.iter().enumerate() {
        let h = sys.users[level.user].constellation.axis_bits();
        for j in 0..h {
            let bitpos = h - 1 - j;
            let mut d1 = f64::INFINITY;
            let mut d0 = f64::INFINITY;
            for s in survivors {
                let lab = s.labels[lv] as usize;
                if (lab >> bitpos) & 1 == 1 {
                    d1 = d1.min(s.metric);
                } else {
                    d0 = d0.min(s.metric);
                }
            }
            let llr = match (d0.is_finite(), d1.is_finite()) {
                (true, true) => d0 - d1,
                (true, false) => -LLR_CLIP,
                (false, true) => LLR_CLIP,
                (false, false) => 0.0,
            };
            out[level.user].set(level.row, level.bit_offset + j, clip_llr(llr));
        }
    }
    out
}

struct PreparedKBest {
    k: usize,
    qt: RealMatrix,
    r: RealMatrix,
    levels: Vec<RealLevel>,
    sys: System,
}

impl SoftDetector for KBest {
    fn name(&self) -> String {
        format!("kbest:K={}", self.k)
    }

    fn prepare(
        &self,
        h_eff: &ComplexMatrix,
        sys: &System,
    ) -> Result<Box<dyn PreparedLlr>, DetectError> {
        check_dims(h_eff, sys)?;
        let embedded = real_embed_matrix(h_eff)?;
        let (q, r) = qr_decompose(&embedded)?;
        Ok(Box::new(PreparedKBest {
            k: self.k,
            qt: q.transpose(),
            r,
            levels: real_levels(sys),
            sys: sys.clone(),
        }))
    }
}

impl PreparedLlr for PreparedKBest {
    fn llr(&self, y: &ComplexMatrix) -> Result<Vec<LlrMatrix>, DetectError> {
        if y.rows * 2 != self.qt.cols || y.cols != 1 {
            return Err(DetectError::ShapeMismatch(format!(
                "y is {}x{}, expected {}x1",
                y.rows,
                y.cols,
                self.qt.cols / 2
            )));
        }
        let y_r = real_embed_slice(&y.data);
        let y_bar = self.qt.matvec(&y_r);
        let survivors = kbest_search(&y_bar, &self.r, &self.levels, self.k);
        Ok(kbest_llrs_from_survivors(&survivors, &self.levels, &self.sys))
    }
}
