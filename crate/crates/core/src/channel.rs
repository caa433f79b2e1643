//! Synthetic MU-MIMO channel generation, per-user power normalization,
//! resource-element simulation, and imperfect-CSI noise whitening.
//!
//! Channels are composite `n_r x N` matrices with one column block per user.
//! The signal model for one RE is `y = sum_i sqrt(rho_i / n_t_i) H_i s_i + n`
//! with unit-energy constellation symbols and `n ~ CN(0, I)`.

use crate::linalg::{hermitian_eigen, hermitian_power, ComplexMatrix, LinalgError};
use crate::modem::{map_bits, BitMatrix, Constellation, ModemError};
use crate::rng::{Purpose, RngStream};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("system is inconsistent: {0}")]
    BadSystem(String),
    #[error("insufficient channels for stratification: {missing} short across {bins} bins")]
    InsufficientChannels { missing: usize, bins: usize },
    #[error("noise covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("noise covariance is not Hermitian")]
    NotHermitian,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Modem(#[from] ModemError),
}

/// Per-user configuration: antennas, constellation, transmit-power range.
#[derive(Debug, Clone)]
pub struct UserConfig {
    pub n_t: usize,
    pub constellation: Constellation,
    /// [rho_min, rho_max] in dB for dataset power draws.
    pub rho_range_db: (f64, f64),
}

/// Default per-constellation transmit-power ranges (dB) for label
/// generation, chosen so labels land inside the useful code-rate window.
pub fn default_power_range_db(m: usize) -> (f64, f64) {
    match m {
        2 => (-16.0, -6.0),
        4 => (-8.0, 0.0),
        _ => (-4.0, 10.0),
    }
}

/// System description shared by detectors and estimators.
#[derive(Debug, Clone)]
pub struct System {
    pub n_r: usize,
    pub users: Vec<UserConfig>,
}

impl System {
    pub fn new(n_r: usize, users: Vec<UserConfig>) -> Result<Self, ChannelError> {
        let sys = Self { n_r, users };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.users.is_empty() {
            return Err(ChannelError::BadSystem("no users".into()));
        }
        for (i, u) in self.users.iter().enumerate() {
            if u.n_t == 0 {
                return Err(ChannelError::BadSystem(format!("user {i} has n_t = 0")));
            }
            if u.rho_range_db.0 > u.rho_range_db.1 {
                return Err(ChannelError::BadSystem(format!(
                    "user {i} has rho_min > rho_max"
                )));
            }
        }
        if self.total_streams() > self.n_r {
            return Err(ChannelError::BadSystem(format!(
                "total streams {} exceed n_r {}",
                self.total_streams(),
                self.n_r
            )));
        }
        Ok(())
    }

    /// Total number of spatial streams N.
    pub fn total_streams(&self) -> usize {
        self.users.iter().map(|u| u.n_t).sum()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Start column/stream index of each user block.
    pub fn stream_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.users.len());
        let mut acc = 0;
        for u in &self.users {
            offs.push(acc);
            acc += u.n_t;
        }
        offs
    }

    /// User owning global stream index `k`.
    pub fn user_of_stream(&self, k: usize) -> usize {
        let mut acc = 0;
        for (i, u) in self.users.iter().enumerate() {
            acc += u.n_t;
            if k < acc {
                return i;
            }
        }
        panic!("stream index {k} out of range");
    }

    /// Column scale factors sqrt(rho_i / n_t_i), one per stream.
    pub fn column_scales(&self, rho: &[f64]) -> Result<Vec<f64>, ChannelError> {
        if rho.len() != self.users.len() {
            return Err(ChannelError::ShapeMismatch(format!(
                "{} power values for {} users",
                rho.len(),
                self.users.len()
            )));
        }
        let mut scales = Vec::with_capacity(self.total_streams());
        for (u, &r) in self.users.iter().zip(rho.iter()) {
            let s = (r / u.n_t as f64).sqrt();
            scales.extend(std::iter::repeat(s).take(u.n_t));
        }
        Ok(scales)
    }
}

/// One composite MU-MIMO channel realization.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Raw (unscaled by transmit power) composite matrix, n_r x N.
    pub h: ComplexMatrix,
    /// Start column of each user block.
    pub user_offsets: Vec<usize>,
    /// Identity for split bookkeeping and provenance.
    pub id: u64,
    pub subcarrier: u32,
    pub symbol: u32,
}

impl ChannelRealization {
    pub fn n_users(&self) -> usize {
        self.user_offsets.len()
    }

    pub fn user_cols(&self, i: usize) -> (usize, usize) {
        let start = self.user_offsets[i];
        let end = if i + 1 < self.user_offsets.len() {
            self.user_offsets[i + 1]
        } else {
            self.h.cols
        };
        (start, end - start)
    }

    /// User block Frobenius norm.
    pub fn user_norm(&self, i: usize) -> f64 {
        let (start, len) = self.user_cols(i);
        self.h.col_block(start, len).fro_norm()
    }

    /// Power-scaled composite channel `H * Omega` with per-stream scales
    /// sqrt(rho_i / n_t_i). This is the effective channel detectors see.
    pub fn scaled(&self, sys: &System, rho: &[f64]) -> Result<ComplexMatrix, ChannelError> {
        let scales = sys.column_scales(rho)?;
        if scales.len() != self.h.cols {
            return Err(ChannelError::ShapeMismatch(format!(
                "channel has {} columns, system has {} streams",
                self.h.cols,
                scales.len()
            )));
        }
        let mut out = self.h.clone();
        for (c, &s) in scales.iter().enumerate() {
            out.scale_cols(c, 1, s);
        }
        Ok(out)
    }
}

/// Normalize each user block to `||H_i||^2 = n_r * n_t_i` in place.
pub fn normalize_per_user(ch: &mut ChannelRealization, n_r: usize) {
    let n_users = ch.n_users();
    for i in 0..n_users {
        let (start, len) = ch.user_cols(i);
        let norm = ch.h.col_block(start, len).fro_norm();
        if norm > 0.0 {
            let target = ((n_r * len) as f64).sqrt();
            ch.h.scale_cols(start, len, target / norm);
        }
    }
}

/// Sequence-level power control: scale each user's blocks by one common
/// factor across the whole set so the set-average `||H_i||^2` equals
/// `n_r * n_t_i`. Individual realizations keep their relative strengths.
pub fn normalize_per_user_sequence(channels: &mut [ChannelRealization], n_r: usize) {
    let Some(first) = channels.first() else { return };
    let n_users = first.n_users();
    let cols: Vec<(usize, usize)> = (0..n_users).map(|i| first.user_cols(i)).collect();
    for i in 0..n_users {
        let (start, len) = cols[i];
        let mean_sq: f64 = channels
            .iter()
            .map(|ch| ch.h.col_block(start, len).fro_norm().powi(2))
            .sum::<f64>()
            / channels.len() as f64;
        if mean_sq > 0.0 {
            let scale = ((n_r * len) as f64 / mean_sq).sqrt();
            for ch in channels.iter_mut() {
                ch.h.scale_cols(start, len, scale);
            }
        }
    }
}

/// i.i.d. Rayleigh channels, per-user normalized so `||H_i||^2 = n_r * n_t_i`.
pub fn generate_iid_rayleigh(
    n_r: usize,
    users: &[UserConfig],
    count: usize,
    rng: &RngStream,
) -> Vec<ChannelRealization> {
    generate_kronecker(n_r, users, count, 0.0, 0.0, rng)
}

/// Kronecker-correlated Rayleigh channels with exponential correlation
/// `rho^|i-j|` at both ends; `rx_corr = tx_corr = 0` is the i.i.d. case.
pub fn generate_kronecker(
    n_r: usize,
    users: &[UserConfig],
    count: usize,
    rx_corr: f64,
    tx_corr: f64,
    rng: &RngStream,
) -> Vec<ChannelRealization> {
    let rx_half = if rx_corr != 0.0 {
        Some(corr_sqrt(n_r, rx_corr))
    } else {
        None
    };
    let tx_halves: Vec<Option<ComplexMatrix>> = users
        .iter()
        .map(|u| {
            if tx_corr != 0.0 && u.n_t > 1 {
                Some(corr_sqrt(u.n_t, tx_corr))
            } else {
                None
            }
        })
        .collect();

    (0..count)
        .map(|c| {
            let mut crng = rng.substream(Purpose::Channel, c as u64);
            let mut ch = draw_one(n_r, users, c as u64, &mut crng, rx_half.as_ref(), &tx_halves);
            normalize_per_user(&mut ch, n_r);
            ch
        })
        .collect()
}

/// Candidate pool with a wide condition-number spread, for stratification.
///
/// Each realization either (a) shrinks an i.i.d. draw's singular-value
/// spread by a random power, which reaches arbitrarily well-conditioned
/// matrices, or (b) applies receive correlation with a coefficient drawn
/// log-uniformly close to 1, which reaches arbitrarily ill-conditioned ones.
pub fn generate_condition_spread(
    n_r: usize,
    users: &[UserConfig],
    count: usize,
    rng: &RngStream,
) -> Vec<ChannelRealization> {
    let tx_halves: Vec<Option<ComplexMatrix>> = users.iter().map(|_| None).collect();
    (0..count)
        .map(|c| {
            let mut crng = rng.substream(Purpose::Channel, c as u64);
            let mode = crng.uniform();
            let mut ch = if mode < 0.5 {
                let t = crng.uniform();
                let mut ch = draw_one(n_r, users, c as u64, &mut crng, None, &tx_halves);
                ch.h = shrink_singular_spread(&ch.h, t);
                ch
            } else {
                let u = crng.uniform();
                // corr in [0, 1 - 1e-3], log-uniform distance from 1.
                let corr = 1.0 - 10f64.powf(-3.0 * u);
                let rx_half = if corr > 0.0 {
                    Some(corr_sqrt(n_r, corr))
                } else {
                    None
                };
                draw_one(n_r, users, c as u64, &mut crng, rx_half.as_ref(), &tx_halves)
            };
            normalize_per_user(&mut ch, n_r);
            ch
        })
        .collect()
}

/// Replace the singular values of `g` by `sigma^t` (directions kept), so the
/// condition number in dB scales by `t`. `t = 1` is the identity.
fn shrink_singular_spread(g: &ComplexMatrix, t: f64) -> ComplexMatrix {
    let m = g.hermitian().matmul(g);
    let (eigs, v) = hermitian_eigen(&m).expect("Gram matrix is Hermitian");
    let n = g.cols;
    // A = V diag(lambda^((t-1)/2)) V^H, so G A has singular values sigma^t.
    let mut a = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let lam = eigs[k].max(1e-30);
                acc += v.get(i, k) * lam.powf((t - 1.0) / 2.0) * v.get(j, k).conj();
            }
            a.set(i, j, acc);
        }
    }
    g.matmul(&a)
}

fn draw_one(
    n_r: usize,
    users: &[UserConfig],
    id: u64,
    rng: &mut RngStream,
    rx_half: Option<&ComplexMatrix>,
    tx_halves: &[Option<ComplexMatrix>],
) -> ChannelRealization {
    let total: usize = users.iter().map(|u| u.n_t).sum();
    let mut h = ComplexMatrix::zeros(n_r, total);
    let mut offsets = Vec::with_capacity(users.len());
    let mut col = 0;
    for (ui, u) in users.iter().enumerate() {
        offsets.push(col);
        let mut g = ComplexMatrix::zeros(n_r, u.n_t);
        for r in 0..n_r {
            for c in 0..u.n_t {
                g.set(r, c, rng.cnormal());
            }
        }
        if let Some(rh) = rx_half {
            g = rh.matmul(&g);
        }
        if let Some(th) = &tx_halves[ui] {
            g = g.matmul(th);
        }
        for r in 0..n_r {
            for c in 0..u.n_t {
                h.set(r, col + c, g.get(r, c));
            }
        }
        col += u.n_t;
    }
    ChannelRealization { h, user_offsets: offsets, id, subcarrier: 0, symbol: 0 }
}

/// Square root of the exponential correlation matrix `rho^|i-j|`.
fn corr_sqrt(n: usize, rho: f64) -> ComplexMatrix {
    let mut r = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            r.set(i, j, Complex64::new(rho.powi((i as i32 - j as i32).abs()), 0.0));
        }
    }
    hermitian_power(&r, 0.5).expect("exponential correlation matrix is PD for |rho| < 1")
}

/// Result of condition-number stratification.
#[derive(Debug, Clone)]
pub struct StratifiedSelection {
    pub channels: Vec<ChannelRealization>,
    /// (bin index, missing count) for bins that could not be filled.
    pub shortfall: Vec<(usize, usize)>,
}

/// Select a subset whose condition numbers are uniform across `bins` equal
/// dB bins spanning `[low_db, high_db]`, `per_bin` channels per bin.
///
/// In strict mode any unfillable bin is an error; in lenient mode the partial
/// selection is returned together with the per-bin shortfall.
pub fn select_by_condition_number(
    channels: &[ChannelRealization],
    low_db: f64,
    high_db: f64,
    bins: usize,
    per_bin: usize,
    lenient: bool,
) -> Result<StratifiedSelection, ChannelError> {
    if !(low_db < high_db) || bins == 0 {
        return Err(ChannelError::BadSystem("bad stratification range".into()));
    }
    let width = (high_db - low_db) / bins as f64;
    let mut buckets: Vec<Vec<&ChannelRealization>> = vec![Vec::new(); bins];
    for ch in channels {
        let cond = match crate::linalg::condition_number_db(&ch.h) {
            Ok(c) if c.is_finite() => c,
            _ => continue,
        };
        if cond < low_db || cond >= high_db {
            continue;
        }
        let bin = ((cond - low_db) / width) as usize;
        let bin = bin.min(bins - 1);
        if buckets[bin].len() < per_bin {
            buckets[bin].push(ch);
        }
    }
    let mut shortfall = Vec::new();
    for (i, b) in buckets.iter().enumerate() {
        if b.len() < per_bin {
            shortfall.push((i, per_bin - b.len()));
        }
    }
    if !shortfall.is_empty() && !lenient {
        return Err(ChannelError::InsufficientChannels {
            missing: shortfall.iter().map(|(_, m)| m).sum(),
            bins: shortfall.len(),
        });
    }
    let selected = buckets
        .into_iter()
        .flat_map(|b| b.into_iter().cloned())
        .collect();
    Ok(StratifiedSelection { channels: selected, shortfall })
}

/// Draw one RE worth of uniform bits for every user.
pub fn draw_re_bits(sys: &System, rng: &mut RngStream) -> Vec<BitMatrix> {
    sys.users
        .iter()
        .map(|u| {
            let m = u.constellation.bits_per_symbol;
            let bits: Vec<u8> = (0..u.n_t * m).map(|_| rng.bit()).collect();
            BitMatrix::new(u.n_t, m, bits)
        })
        .collect()
}

/// Map per-user bit matrices to the stacked symbol vector (N x 1).
pub fn stack_symbols(sys: &System, bits: &[BitMatrix]) -> Result<ComplexMatrix, ChannelError> {
    let mut data = Vec::with_capacity(sys.total_streams());
    for (u, b) in sys.users.iter().zip(bits.iter()) {
        let s = map_bits(b, &u.constellation)?;
        data.extend_from_slice(&s.data);
    }
    Ok(ComplexMatrix::new(sys.total_streams(), 1, data))
}

/// Simulate one RE: `y = H Omega s + n` with `n ~ CN(0, I)`.
pub fn simulate_re(
    ch: &ChannelRealization,
    sys: &System,
    rho: &[f64],
    s: &ComplexMatrix,
    rng: &mut RngStream,
) -> Result<ComplexMatrix, ChannelError> {
    let noise: Vec<Complex64> = (0..ch.h.rows).map(|_| rng.cnormal()).collect();
    simulate_re_with_noise(ch, sys, rho, s, &noise)
}

/// Simulate one RE with the noise vector supplied by the caller.
pub fn simulate_re_with_noise(
    ch: &ChannelRealization,
    sys: &System,
    rho: &[f64],
    s: &ComplexMatrix,
    noise: &[Complex64],
) -> Result<ComplexMatrix, ChannelError> {
    if s.rows != ch.h.cols || s.cols != 1 {
        return Err(ChannelError::ShapeMismatch(format!(
            "symbol vector {}x{} for channel with {} columns",
            s.rows, s.cols, ch.h.cols
        )));
    }
    if noise.len() != ch.h.rows {
        return Err(ChannelError::ShapeMismatch(format!(
            "noise length {} for {} receive antennas",
            noise.len(),
            ch.h.rows
        )));
    }
    let h_eff = ch.scaled(sys, rho)?;
    let mut y = h_eff.matvec(&s.data);
    for (yi, ni) in y.iter_mut().zip(noise.iter()) {
        *yi += ni;
    }
    Ok(ComplexMatrix::new(ch.h.rows, 1, y))
}

const CHANNEL_MAGIC: &[u8; 4] = b"BMDH";
const CHANNEL_VERSION: u32 = 1;

/// Write a channel set to the shared binary container: header (magic,
/// version, n_r, per-user n_t, count) then per channel its id, RE indices,
/// and entries as little-endian f64 pairs.
pub fn save_channels<P: AsRef<std::path::Path>>(
    channels: &[ChannelRealization],
    n_r: usize,
    path: P,
) -> Result<(), ChannelError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let write = |f: &mut dyn Write, b: &[u8]| f.write_all(b).map_err(io_err);
    write(&mut f, CHANNEL_MAGIC)?;
    write(&mut f, &CHANNEL_VERSION.to_le_bytes())?;
    write(&mut f, &(n_r as u32).to_le_bytes())?;
    let offsets = channels.first().map(|c| c.user_offsets.clone()).unwrap_or_default();
    write(&mut f, &(offsets.len() as u32).to_le_bytes())?;
    for &o in &offsets {
        write(&mut f, &(o as u32).to_le_bytes())?;
    }
    let cols = channels.first().map(|c| c.h.cols).unwrap_or(0);
    write(&mut f, &(cols as u32).to_le_bytes())?;
    write(&mut f, &(channels.len() as u64).to_le_bytes())?;
    for ch in channels {
        if ch.h.rows != n_r || ch.h.cols != cols || ch.user_offsets != offsets {
            return Err(ChannelError::ShapeMismatch(
                "channel set is not homogeneous".into(),
            ));
        }
        write(&mut f, &ch.id.to_le_bytes())?;
        write(&mut f, &ch.subcarrier.to_le_bytes())?;
        write(&mut f, &ch.symbol.to_le_bytes())?;
        for z in &ch.h.data {
            write(&mut f, &z.re.to_le_bytes())?;
            write(&mut f, &z.im.to_le_bytes())?;
        }
    }
    f.flush().map_err(io_err)?;
    Ok(())
}

fn io_err(e: std::io::Error) -> ChannelError {
    ChannelError::BadSystem(format!("channel file i/o: {e}"))
}

/// Read a channel set; returns `(n_r, channels)`.
pub fn load_channels<P: AsRef<std::path::Path>>(
    path: P,
) -> Result<(usize, Vec<ChannelRealization>), ChannelError> {
    use std::io::Read;
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);
    let mut read_exact = |buf: &mut [u8]| -> Result<(), ChannelError> {
        f.read_exact(buf)
            .map_err(|e| ChannelError::BadSystem(format!("channel file truncated: {e}")))
    };
    let mut magic = [0u8; 4];
    read_exact(&mut magic)?;
    if &magic != CHANNEL_MAGIC {
        return Err(ChannelError::BadSystem("bad channel file magic".into()));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHANNEL_VERSION {
        return Err(ChannelError::BadSystem(format!("unsupported channel file version {version}")));
    }
    read_exact(&mut b4)?;
    let n_r = u32::from_le_bytes(b4) as usize;
    read_exact(&mut b4)?;
    let n_users = u32::from_le_bytes(b4) as usize;
    let mut offsets = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        read_exact(&mut b4)?;
        offsets.push(u32::from_le_bytes(b4) as usize);
    }
    read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut channels = Vec::with_capacity(count);
    for _ in 0..count {
        read_exact(&mut b8)?;
        let id = u64::from_le_bytes(b8);
        read_exact(&mut b4)?;
        let subcarrier = u32::from_le_bytes(b4);
        read_exact(&mut b4)?;
        let symbol = u32::from_le_bytes(b4);
        let mut data = Vec::with_capacity(n_r * cols);
        for _ in 0..n_r * cols {
            read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            data.push(Complex64::new(re, im));
        }
        channels.push(ChannelRealization {
            h: ComplexMatrix::new(n_r, cols, data),
            user_offsets: offsets.clone(),
            id,
            subcarrier,
            symbol,
        });
    }
    Ok((n_r, channels))
}

/// Interference-plus-thermal and estimation-error covariances.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub k_n: ComplexMatrix,
    pub k_e: ComplexMatrix,
}

impl NoiseModel {
    /// Identity thermal noise, no estimation error (the perfect-CSI model).
    pub fn identity(n_r: usize) -> Self {
        Self { k_n: ComplexMatrix::identity(n_r), k_e: ComplexMatrix::zeros(n_r, n_r) }
    }

    pub fn new(k_n: ComplexMatrix, k_e: ComplexMatrix) -> Result<Self, ChannelError> {
        let nm = Self { k_n, k_e };
        nm.validate()?;
        Ok(nm)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for k in [&self.k_n, &self.k_e] {
            if k.rows != k.cols {
                return Err(ChannelError::ShapeMismatch("covariance not square".into()));
            }
            for i in 0..k.rows {
                for j in 0..k.cols {
                    if (k.get(i, j) - k.get(j, i).conj()).norm() > 1e-12 {
                        return Err(ChannelError::NotHermitian);
                    }
                }
            }
        }
        let (eigs, _) = hermitian_eigen(&self.k_n)?;
        if eigs[0] <= 0.0 {
            return Err(ChannelError::NotPositiveDefinite);
        }
        Ok(())
    }

    /// `(K_n + K_e)^(-1/2)`, the whitening transform.
    pub fn whitener(&self) -> Result<ComplexMatrix, ChannelError> {
        let n = self.k_n.rows;
        let mut sum = ComplexMatrix::zeros(n, n);
        for i in 0..n * n {
            sum.data[i] = self.k_n.data[i] + self.k_e.data[i];
        }
        hermitian_power(&sum, -0.5).map_err(|e| match e {
            LinalgError::NotPositiveDefinite { .. } => ChannelError::NotPositiveDefinite,
            other => ChannelError::Linalg(other),
        })
    }

    /// `K_n^(1/2)`, for drawing colored noise from white samples.
    pub fn noise_coloring(&self) -> Result<ComplexMatrix, ChannelError> {
        hermitian_power(&self.k_n, 0.5).map_err(|e| match e {
            LinalgError::NotPositiveDefinite { .. } => ChannelError::NotPositiveDefinite,
            other => ChannelError::Linalg(other),
        })
    }
}

/// Whiten an observation/estimate pair: `y' = (K_n+K_e)^(-1/2) y`,
/// `H' = (K_n+K_e)^(-1/2) H_hat`.
pub fn whiten(
    y: &ComplexMatrix,
    h_hat: &ComplexMatrix,
    noise: &NoiseModel,
) -> Result<(ComplexMatrix, ComplexMatrix), ChannelError> {
    if y.rows != h_hat.rows || y.cols != 1 {
        return Err(ChannelError::ShapeMismatch(format!(
            "y is {}x{}, H_hat is {}x{}",
            y.rows, y.cols, h_hat.rows, h_hat.cols
        )));
    }
    let w = noise.whitener()?;
    Ok((w.matmul(y), w.matmul(h_hat)))
}
