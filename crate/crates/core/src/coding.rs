//! BICM chain for validating the BMDR / code-rate / CER relationship:
//! alist-loaded LDPC codes, a deterministic progressive-edge-growth
//! construction, systematic encoding, seeded interleaving, sum-product
//! belief propagation, and the fixed-channel-set CER simulation.
//!
//! LLRs follow the detector convention `ln q(1)/q(0)`: negative means bit 0.

use crate::bmdr::{bmdr_set, BmdrError, BmdrEstimate};
use crate::channel::{ChannelError, ChannelRealization, System};
use crate::detect::{DetectError, SoftDetector};
use crate::linalg::ComplexMatrix;
use crate::modem::BitMatrix;
use crate::rng::{Purpose, RngStream};
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodingError {
    #[error("alist parse error: {0}")]
    ParseError(String),
    #[error("alist adjacency inconsistent: edge ({var}, {check}) listed once")]
    InconsistentAdjacency { var: usize, check: usize },
    #[error("message length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("no full-rank parity sub-block; cannot build systematic encoder")]
    EncodingSingular,
    #[error("codeword length {n} is not a multiple of {bits} bits per RE (or users disagree)")]
    BudgetMismatch { n: usize, bits: usize },
    #[error(transparent)]
    Bmdr(#[from] BmdrError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse parity-check matrix with both adjacency directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityCheckMatrix {
    /// Codeword length (variables).
    pub n: usize,
    /// Message length, `n - rank(H)`.
    pub k: usize,
    /// Check -> variable neighbors, sorted.
    pub row_adj: Vec<Vec<usize>>,
    /// Variable -> check neighbors, sorted.
    pub col_adj: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    /// Build from check-side adjacency; computes `k` from the GF(2) rank.
    pub fn from_rows(n: usize, row_adj: Vec<Vec<usize>>) -> Self {
        let mut col_adj = vec![Vec::new(); n];
        for (c, row) in row_adj.iter().enumerate() {
            for &v in row {
                assert!(v < n);
                col_adj[v].push(c);
            }
        }
        let mut row_adj = row_adj;
        for r in row_adj.iter_mut() {
            r.sort_unstable();
        }
        for c in col_adj.iter_mut() {
            c.sort_unstable();
        }
        let rank = gf2_rank(n, &row_adj);
        Self { n, k: n - rank, row_adj, col_adj }
    }

    pub fn n_checks(&self) -> usize {
        self.row_adj.len()
    }

    /// Syndrome over GF(2); zero for every codeword.
    pub fn syndrome(&self, bits: &[u8]) -> Vec<u8> {
        self.row_adj
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &v| acc ^ (bits[v] & 1)))
            .collect()
    }

    pub fn syndrome_is_zero(&self, bits: &[u8]) -> bool {
        self.syndrome(bits).iter().all(|&s| s == 0)
    }
}

/// GF(2) rank by bitset Gaussian elimination.
pub fn gf2_rank(n: usize, rows: &[Vec<usize>]) -> usize {
    let words = n.div_ceil(64);
    let mut mat: Vec<Vec<u64>> = rows
        .iter()
        .map(|row| {
            let mut bits = vec![0u64; words];
            for &v in row {
                bits[v / 64] |= 1u64 << (v % 64);
            }
            bits
        })
        .collect();
    let mut rank = 0;
    for col in 0..n {
        let (w, b) = (col / 64, col % 64);
        let pivot = (rank..mat.len()).find(|&r| mat[r][w] >> b & 1 == 1);
        let Some(pivot) = pivot else { continue };
        mat.swap(rank, pivot);
        let pivot_row = mat[rank].clone();
        for (r, row) in mat.iter_mut().enumerate() {
            if r != rank && row[w] >> b & 1 == 1 {
                for (a, b) in row.iter_mut().zip(pivot_row.iter()) {
                    *a ^= b;
                }
            }
        }
        rank += 1;
        if rank == mat.len() {
            break;
        }
    }
    rank
}

// ---------------------------------------------------------------------------
// alist interchange format
// ---------------------------------------------------------------------------

/// Parse the standard alist text format (1-indexed neighbor lists, zero
/// padding allowed). Validates check- and variable-side lists against each
/// other.
pub fn parse_alist(text: &str) -> Result<ParityCheckMatrix, CodingError> {
    let mut nums = text
        .split_whitespace()
        .map(|t| t.parse::<i64>().map_err(|_| CodingError::ParseError(format!("bad token '{t}'"))));
    let mut next = |what: &str| -> Result<i64, CodingError> {
        nums.next()
            .ok_or_else(|| CodingError::ParseError(format!("missing {what}")))?
    };
    let n = next("n")? as usize;
    let m = next("m")? as usize;
    let _max_col = next("max col degree")?;
    let _max_row = next("max row degree")?;
    let col_deg: Vec<usize> = (0..n)
        .map(|_| next("column degree").map(|x| x as usize))
        .collect::<Result<_, _>>()?;
    let row_deg: Vec<usize> = (0..m)
        .map(|_| next("row degree").map(|x| x as usize))
        .collect::<Result<_, _>>()?;

    let mut col_adj: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (v, &d) in col_deg.iter().enumerate() {
        let mut list = Vec::with_capacity(d);
        for _ in 0..d {
            let c = next("column entry")?;
            if c < 1 || c as usize > m {
                return Err(CodingError::ParseError(format!(
                    "column {v}: check index {c} out of range"
                )));
            }
            list.push(c as usize - 1);
        }
        col_adj.push(list);
    }
    let mut row_adj: Vec<Vec<usize>> = Vec::with_capacity(m);
    for (c, &d) in row_deg.iter().enumerate() {
        let mut list = Vec::with_capacity(d);
        for _ in 0..d {
            let v = next("row entry")?;
            if v < 1 || v as usize > n {
                return Err(CodingError::ParseError(format!(
                    "row {c}: variable index {v} out of range"
                )));
            }
            list.push(v as usize - 1);
        }
        row_adj.push(list);
    }

    // Mutual consistency.
    for (v, list) in col_adj.iter().enumerate() {
        for &c in list {
            if !row_adj[c].contains(&v) {
                return Err(CodingError::InconsistentAdjacency { var: v, check: c });
            }
        }
    }
    for (c, list) in row_adj.iter().enumerate() {
        for &v in list {
            if !col_adj[v].contains(&c) {
                return Err(CodingError::InconsistentAdjacency { var: v, check: c });
            }
        }
    }
    Ok(ParityCheckMatrix::from_rows(n, row_adj))
}

pub fn load_alist<P: AsRef<Path>>(path: P) -> Result<ParityCheckMatrix, CodingError> {
    parse_alist(&std::fs::read_to_string(path)?)
}

pub fn render_alist(h: &ParityCheckMatrix) -> String {
    let m = h.n_checks();
    let max_col = h.col_adj.iter().map(|c| c.len()).max().unwrap_or(0);
    let max_row = h.row_adj.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!("{} {}\n{} {}\n", h.n, m, max_col, max_row));
    out.push_str(
        &h.col_adj.iter().map(|c| c.len().to_string()).collect::<Vec<_>>().join(" "),
    );
    out.push('\n');
    out.push_str(
        &h.row_adj.iter().map(|r| r.len().to_string()).collect::<Vec<_>>().join(" "),
    );
    out.push('\n');
    for c in &h.col_adj {
        let line: Vec<String> = c.iter().map(|&x| (x + 1).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    for r in &h.row_adj {
        let line: Vec<String> = r.iter().map(|&x| (x + 1).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_alist<P: AsRef<Path>>(h: &ParityCheckMatrix, path: P) -> Result<(), CodingError> {
    std::fs::write(path, render_alist(h))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Progressive edge growth construction
// ---------------------------------------------------------------------------

/// Deterministic PEG construction of a regular LDPC code: each new edge
/// connects to the check at the largest girth-preserving distance, ties
/// broken by lowest current degree then lowest index. A (col_weight = 3,
/// n = 648, checks = 216) instance gives the stand-in rate-2/3 code.
pub fn peg_ldpc(n: usize, n_checks: usize, col_weight: usize) -> ParityCheckMatrix {
    let mut row_adj: Vec<Vec<usize>> = vec![Vec::new(); n_checks];
    let mut col_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    // Cap check degrees so the code comes out exactly regular when
    // n * col_weight is a multiple of n_checks.
    let cap = (n * col_weight).div_ceil(n_checks);

    for v in 0..n {
        for _edge in 0..col_weight {
            // BFS from v over the bipartite graph built so far.
            let dist = bfs_check_distances(v, &row_adj, &col_adj, n, n_checks);
            let pick = |respect_cap: bool| {
                (0..n_checks)
                    .filter(|&c| !col_adj[v].contains(&c))
                    .filter(|&c| !respect_cap || row_adj[c].len() < cap)
                    .max_by(|&a, &b| {
                        // larger distance first (usize::MAX = unreachable = best)
                        dist[a]
                            .cmp(&dist[b])
                            .then_with(|| row_adj[b].len().cmp(&row_adj[a].len()))
                            .then_with(|| b.cmp(&a))
                    })
            };
            let best = pick(true).or_else(|| pick(false)).expect("more checks than column weight");
            row_adj[best].push(v);
            col_adj[v].push(best);
        }
    }
    ParityCheckMatrix::from_rows(n, row_adj)
}

fn bfs_check_distances(
    start_var: usize,
    row_adj: &[Vec<usize>],
    col_adj: &[Vec<usize>],
    n: usize,
    n_checks: usize,
) -> Vec<usize> {
    let mut var_dist = vec![usize::MAX; n];
    let mut check_dist = vec![usize::MAX; n_checks];
    var_dist[start_var] = 0;
    let mut frontier = vec![start_var];
    let mut depth = 0;
    while !frontier.is_empty() {
        let mut next_checks = Vec::new();
        for &v in &frontier {
            for &c in &col_adj[v] {
                if check_dist[c] == usize::MAX {
                    check_dist[c] = depth + 1;
                    next_checks.push(c);
                }
            }
        }
        let mut next_vars = Vec::new();
        for &c in &next_checks {
            for &v in &row_adj[c] {
                if var_dist[v] == usize::MAX {
                    var_dist[v] = depth + 2;
                    next_vars.push(v);
                }
            }
        }
        frontier = next_vars;
        depth += 2;
    }
    check_dist
}

// ---------------------------------------------------------------------------
// Systematic encoding
// ---------------------------------------------------------------------------

/// Systematic LDPC encoder: Gaussian elimination picks `n - k` pivot columns
/// (the parity positions); the remaining `k` free columns carry the message.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub n: usize,
    pub k: usize,
    /// Message bit positions in the codeword, ascending.
    pub message_positions: Vec<usize>,
    /// Parity positions, one per reduced row.
    parity_positions: Vec<usize>,
    /// RREF rows restricted to the free columns, as bitsets over k.
    parity_rows: Vec<Vec<u64>>,
}

impl Encoder {
    pub fn new(h: &ParityCheckMatrix) -> Result<Self, CodingError> {
        let n = h.n;
        let words = n.div_ceil(64);
        let mut mat: Vec<Vec<u64>> = h
            .row_adj
            .iter()
            .map(|row| {
                let mut bits = vec![0u64; words];
                for &v in row {
                    bits[v / 64] |= 1u64 << (v % 64);
                }
                bits
            })
            .collect();
        let get = |row: &Vec<u64>, col: usize| row[col / 64] >> (col % 64) & 1 == 1;

        // Row-reduce to RREF, recording pivot columns.
        let mut pivots: Vec<usize> = Vec::new();
        let mut rank = 0usize;
        for col in 0..n {
            let pivot = (rank..mat.len()).find(|&r| get(&mat[r], col));
            let Some(p) = pivot else { continue };
            mat.swap(rank, p);
            let prow = mat[rank].clone();
            for (r, row) in mat.iter_mut().enumerate() {
                if r != rank && get(row, col) {
                    for (a, b) in row.iter_mut().zip(prow.iter()) {
                        *a ^= b;
                    }
                }
            }
            pivots.push(col);
            rank += 1;
            if rank == mat.len() {
                break;
            }
        }
        if rank != n - h.k {
            return Err(CodingError::EncodingSingular);
        }
        let pivot_set: std::collections::HashSet<usize> = pivots.iter().copied().collect();
        let message_positions: Vec<usize> =
            (0..n).filter(|c| !pivot_set.contains(c)).collect();
        let kwords = h.k.div_ceil(64);
        // Row r of the RREF gives parity at pivots[r] as the XOR of the free
        // columns present in that row.
        let parity_rows: Vec<Vec<u64>> = mat[..rank]
            .iter()
            .map(|row| {
                let mut bits = vec![0u64; kwords];
                for (j, &col) in message_positions.iter().enumerate() {
                    if get(row, col) {
                        bits[j / 64] |= 1u64 << (j % 64);
                    }
                }
                bits
            })
            .collect();
        Ok(Self { n, k: h.k, message_positions, parity_positions: pivots, parity_rows })
    }

    /// Encode a k-bit message to an n-bit codeword with `H c = 0`.
    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>, CodingError> {
        if message.len() != self.k {
            return Err(CodingError::LengthMismatch { got: message.len(), expected: self.k });
        }
        let kwords = self.k.div_ceil(64);
        let mut msg_bits = vec![0u64; kwords];
        for (j, &b) in message.iter().enumerate() {
            if b & 1 == 1 {
                msg_bits[j / 64] |= 1u64 << (j % 64);
            }
        }
        let mut cw = vec![0u8; self.n];
        for (j, &pos) in self.message_positions.iter().enumerate() {
            cw[pos] = message[j] & 1;
        }
        for (r, row) in self.parity_rows.iter().enumerate() {
            let mut parity = 0u32;
            for (a, b) in row.iter().zip(msg_bits.iter()) {
                parity ^= (a & b).count_ones() & 1;
            }
            cw[self.parity_positions[r]] = parity as u8;
        }
        Ok(cw)
    }
}

// ---------------------------------------------------------------------------
// Interleaver
// ---------------------------------------------------------------------------

/// Seeded uniform random permutation of the codeword positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Interleaver {
    pub perm: Vec<usize>,
    pub seed: u64,
}

impl Interleaver {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = RngStream::new(seed).substream(Purpose::Shuffle, 0);
        rng.shuffle(&mut perm);
        Self { perm, seed }
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), seed: 0 }
    }

    /// `out[i] = in[perm[i]]`.
    pub fn interleave<T: Copy>(&self, xs: &[T]) -> Result<Vec<T>, CodingError> {
        if xs.len() != self.perm.len() {
            return Err(CodingError::LengthMismatch { got: xs.len(), expected: self.perm.len() });
        }
        Ok(self.perm.iter().map(|&p| xs[p]).collect())
    }

    /// Inverse of [`Self::interleave`].
    pub fn deinterleave<T: Copy + Default>(&self, xs: &[T]) -> Result<Vec<T>, CodingError> {
        if xs.len() != self.perm.len() {
            return Err(CodingError::LengthMismatch { got: xs.len(), expected: self.perm.len() });
        }
        let mut out = vec![T::default(); xs.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = xs[i];
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Sum-product belief propagation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BpResult {
    pub bits: Vec<u8>,
    pub converged: bool,
    pub iters: usize,
}

const BP_MSG_CLIP: f64 = 30.0;

/// Flooding sum-product decoder in the stable tanh domain.
///
/// Input LLRs use `ln q(1)/q(0)`; internally the classic `ln p0/p1`
/// orientation is used, flipped at the boundaries.
pub fn bp_decode(h: &ParityCheckMatrix, llrs: &[f64], max_iters: usize) -> BpResult {
    assert_eq!(llrs.len(), h.n);
    let chan: Vec<f64> = llrs.iter().map(|&l| -l).collect();

    // Edge storage, row-major per check.
    let row_of: Vec<&[usize]> = h.row_adj.iter().map(|r| r.as_slice()).collect();
    let mut check_msg: Vec<Vec<f64>> = h.row_adj.iter().map(|r| vec![0.0; r.len()]).collect();

    let mut totals = vec![0.0f64; h.n];
    let mut hard = vec![0u8; h.n];
    for iter in 1..=max_iters {
        // Variable totals.
        totals.copy_from_slice(&chan);
        for (c, row) in row_of.iter().enumerate() {
            for (e, &v) in row.iter().enumerate() {
                totals[v] += check_msg[c][e];
            }
        }
        // Check update with forward/backward partial products.
        for (c, row) in row_of.iter().enumerate() {
            let deg = row.len();
            let t: Vec<f64> = (0..deg)
                .map(|e| {
                    let q = totals[row[e]] - check_msg[c][e];
                    (q * 0.5).tanh()
                })
                .collect();
            let mut fwd = vec![1.0f64; deg + 1];
            for e in 0..deg {
                fwd[e + 1] = fwd[e] * t[e];
            }
            let mut bwd = vec![1.0f64; deg + 1];
            for e in (0..deg).rev() {
                bwd[e] = bwd[e + 1] * t[e];
            }
            for e in 0..deg {
                let prod = (fwd[e] * bwd[e + 1]).clamp(-0.999_999_999_999_999, 0.999_999_999_999_999);
                check_msg[c][e] = (2.0 * prod.atanh()).clamp(-BP_MSG_CLIP, BP_MSG_CLIP);
            }
        }
        // Posterior totals and hard decisions.
        totals.copy_from_slice(&chan);
        for (c, row) in row_of.iter().enumerate() {
            for (e, &v) in row.iter().enumerate() {
                totals[v] += check_msg[c][e];
            }
        }
        for (v, &t) in totals.iter().enumerate() {
            hard[v] = if t < 0.0 { 1 } else { 0 };
        }
        if h.syndrome_is_zero(&hard) {
            return BpResult { bits: hard, converged: true, iters: iter };
        }
    }
    BpResult { bits: hard, converged: false, iters: max_iters }
}

// ---------------------------------------------------------------------------
// CER simulation over a fixed channel set
// ---------------------------------------------------------------------------

/// Per-user result at one transmit power.
#[derive(Debug, Clone)]
pub struct UserCer {
    pub user: usize,
    pub cer: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bmdr: BmdrEstimate,
}

#[derive(Debug, Clone)]
pub struct CerPoint {
    pub rho_db: f64,
    pub users: Vec<UserCer>,
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(errors: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Simulate coded transmission of every user over the cycled fixed channel
/// set (fresh noise per codeword) and pair each CER with the set-BMDR at the
/// same power. All users share the common transmit power from `rho_grid_db`.
#[allow(clippy::too_many_arguments)]
pub fn cer_simulate(
    channels: &[ChannelRealization],
    sys: &System,
    code: &ParityCheckMatrix,
    interleaver: &Interleaver,
    det: &dyn SoftDetector,
    rho_grid_db: &[f64],
    n_codewords: usize,
    bp_max_iters: usize,
    bmdr_n_samp: usize,
    rng: &RngStream,
) -> Result<Vec<CerPoint>, CodingError> {
    if channels.is_empty() {
        return Err(CodingError::Bmdr(BmdrError::EmptySet));
    }
    // Every user must consume the codeword in the same number of REs.
    let bits_per_re: Vec<usize> = sys
        .users
        .iter()
        .map(|u| u.n_t * u.constellation.bits_per_symbol)
        .collect();
    let bits0 = bits_per_re[0];
    if bits_per_re.iter().any(|&b| b != bits0) || code.n % bits0 != 0 {
        return Err(CodingError::BudgetMismatch { n: code.n, bits: bits0 });
    }
    let re_per_cw = code.n / bits0;
    let encoder = Encoder::new(code)?;
    let n_users = sys.n_users();

    let mut points = Vec::with_capacity(rho_grid_db.len());
    for (ri, &rho_db) in rho_grid_db.iter().enumerate() {
        let rho_lin = 10f64.powf(rho_db / 10.0);
        let rho = vec![rho_lin; n_users];
        let point_rng = rng.substream(Purpose::Power, ri as u64);

        // Per channel at this power: the effective (scaled) matrix for the
        // transmit side and a prepared detector for the receive side.
        let mut h_effs = Vec::with_capacity(channels.len());
        let mut prepared = Vec::with_capacity(channels.len());
        for ch in channels {
            let h_eff = ch.scaled(sys, &rho)?;
            prepared.push(det.prepare(&h_eff, sys)?);
            h_effs.push(h_eff);
        }

        let errors: Vec<Vec<bool>> = (0..n_codewords)
            .into_par_iter()
            .map(|cw| {
                let cw_rng = point_rng.substream(Purpose::Channel, cw as u64);
                simulate_codeword(
                    &h_effs,
                    sys,
                    &encoder,
                    code,
                    interleaver,
                    &prepared,
                    re_per_cw,
                    bp_max_iters,
                    &cw_rng,
                )
            })
            .collect::<Result<Vec<Vec<bool>>, CodingError>>()?;

        let bmdr = bmdr_set(channels, sys, &rho, det, bmdr_n_samp, &point_rng)?;
        let users = (0..n_users)
            .map(|u| {
                let e = errors.iter().filter(|cwe| cwe[u]).count();
                let cer = e as f64 / n_codewords as f64;
                let (lo, hi) = wilson_interval(e, n_codewords, 1.96);
                UserCer { user: u, cer, ci_low: lo, ci_high: hi, bmdr: bmdr[u].clone() }
            })
            .collect();
        points.push(CerPoint { rho_db, users });
    }
    Ok(points)
}

#[allow(clippy::too_many_arguments)]
fn simulate_codeword(
    h_effs: &[ComplexMatrix],
    sys: &System,
    encoder: &Encoder,
    code: &ParityCheckMatrix,
    interleaver: &Interleaver,
    prepared: &[Box<dyn crate::detect::PreparedLlr>],
    re_per_cw: usize,
    bp_max_iters: usize,
    rng: &RngStream,
) -> Result<Vec<bool>, CodingError> {
    let n_users = sys.n_users();
    let mut srng = rng.substream(Purpose::Symbols, 0);
    let mut nrng = rng.substream(Purpose::Noise, 0);

    // Encode and interleave one codeword per user.
    let mut tx_bits: Vec<Vec<u8>> = Vec::with_capacity(n_users);
    let mut codewords: Vec<Vec<u8>> = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let msg: Vec<u8> = (0..encoder.k).map(|_| srng.bit()).collect();
        let cw = encoder.encode(&msg)?;
        tx_bits.push(interleaver.interleave(&cw)?);
        codewords.push(cw);
    }

    // Transmit across the cycled channel set, collecting per-user LLRs in
    // the same antenna-major, bit-minor order the bits were consumed in.
    let mut rx_llrs: Vec<Vec<f64>> = vec![Vec::with_capacity(code.n); n_users];
    for re in 0..re_per_cw {
        let ch_idx = re % h_effs.len();
        let h_eff = &h_effs[ch_idx];
        let mut symbol = Vec::with_capacity(sys.total_streams());
        for (u, cfg) in sys.users.iter().enumerate() {
            let m = cfg.constellation.bits_per_symbol;
            let chunk = &tx_bits[u][re * cfg.n_t * m..(re + 1) * cfg.n_t * m];
            let b = BitMatrix::new(cfg.n_t, m, chunk.to_vec());
            for row in 0..cfg.n_t {
                symbol.push(cfg.constellation.point(b.row_label(row)));
            }
        }
        let mut y = h_eff.matvec(&symbol);
        for v in y.iter_mut() {
            *v += nrng.cnormal();
        }
        let y = ComplexMatrix::new(sys.n_r, 1, y);
        let llrs = prepared[ch_idx].llr(&y)?;
        for (u, l) in llrs.iter().enumerate() {
            rx_llrs[u].extend_from_slice(&l.data);
        }
    }

    // Deinterleave, decode, and count codeword errors per user.
    let mut errs = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let deint = interleaver.deinterleave(&rx_llrs[u])?;
        let result = bp_decode(code, &deint, bp_max_iters);
        errs.push(result.bits != codewords[u]);
    }
    Ok(errs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_iid_rayleigh, UserConfig};
    use crate::detect::DetectorSpec;
    use crate::modem::build_qam;

    const HAMMING_7_4_ALIST: &str = "\
7 3
3 4
3 2 2 2 1 1 1
4 4 4
1 2 3
1 2
1 3
2 3
1
2
3
1 2 3 5
1 2 4 6
1 3 4 7
";

    // A (7,4) Hamming code as a parity-check matrix (rows are checks):
    //   1110100
    //   1101010
    //   1011001
    fn hamming_7_4() -> ParityCheckMatrix {
        ParityCheckMatrix::from_rows(
            7,
            vec![vec![0, 1, 2, 4], vec![0, 1, 3, 5], vec![0, 2, 3, 6]],
        )
    }

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

    #[test]
    fn alist_round_trip_toy() {
        let h = hamming_7_4();
        let text = render_alist(&h);
        let back = parse_alist(&text).unwrap();
        assert_eq!(h, back);
        assert_eq!(back.n, 7);
        assert_eq!(back.k, 4);
    }

    #[test]
    fn alist_parses_handwritten_text() {
        // Independent hand-written alist of the (7,4) Hamming code.
        let h = parse_alist(HAMMING_7_4_ALIST).unwrap();
        assert_eq!(h.n, 7);
        assert_eq!(h.n_checks(), 3);
        assert_eq!(h.k, 4);
        assert_eq!(h, hamming_7_4());
    }

    #[test]
    fn alist_rejects_inconsistent_adjacency() {
        // Column list says var 0 touches check 1, row list disagrees.
        let text = "2 2\n1 1\n1 1\n1 1\n2\n1\n2\n2\n";
        match parse_alist(text) {
            Err(CodingError::InconsistentAdjacency { .. }) => {}
            other => panic!("expected InconsistentAdjacency, got {other:?}"),
        }
    }

    #[test]
    fn peg_code_has_expected_rank_and_degrees() {
        // The stand-in rate-2/3 code: (3,9)-regular (648, 432).
        let h = peg_ldpc(648, 216, 3);
        assert_eq!(h.n, 648);
        assert_eq!(h.n_checks(), 216);
        for col in &h.col_adj {
            assert_eq!(col.len(), 3);
        }
        for row in &h.row_adj {
            assert_eq!(row.len(), 9);
        }
        // Independent dense-boolean elimination oracle for the rank.
        let mut dense: Vec<Vec<bool>> = h
            .row_adj
            .iter()
            .map(|row| {
                let mut r = vec![false; h.n];
                for &v in row {
                    r[v] = true;
                }
                r
            })
            .collect();
        let mut rank = 0usize;
        for col in 0..h.n {
            if let Some(p) = (rank..dense.len()).find(|&r| dense[r][col]) {
                dense.swap(rank, p);
                let prow = dense[rank].clone();
                for (r, row) in dense.iter_mut().enumerate() {
                    if r != rank && row[col] {
                        for (a, b) in row.iter_mut().zip(prow.iter()) {
                            *a ^= b;
                        }
                    }
                }
                rank += 1;
            }
        }
        assert_eq!(rank, 216, "the PEG code must have full-rank checks");
        assert_eq!(h.k, 432);
    }

    #[test]
    fn peg_is_deterministic() {
        let a = peg_ldpc(60, 20, 3);
        let b = peg_ldpc(60, 20, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_properties() {
        let h = peg_ldpc(60, 20, 3);
        let enc = Encoder::new(&h).unwrap();
        assert_eq!(enc.k, 40);

        // Zero message encodes to the zero codeword.
        let zero = enc.encode(&vec![0u8; 40]).unwrap();
        assert!(zero.iter().all(|&b| b == 0));

        let mut rng = RngStream::new(1);
        for _ in 0..20 {
            let m1: Vec<u8> = (0..40).map(|_| rng.bit()).collect();
            let m2: Vec<u8> = (0..40).map(|_| rng.bit()).collect();
            let c1 = enc.encode(&m1).unwrap();
            let c2 = enc.encode(&m2).unwrap();
            // Syndrome zero (GF(2) multiply oracle).
            assert!(h.syndrome_is_zero(&c1));
            // Linearity: the sum of codewords is a codeword.
            let sum: Vec<u8> = c1.iter().zip(c2.iter()).map(|(a, b)| a ^ b).collect();
            assert!(h.syndrome_is_zero(&sum));
            // Systematic: message recoverable from message positions.
            for (j, &pos) in enc.message_positions.iter().enumerate() {
                assert_eq!(c1[pos], m1[j]);
            }
        }

        assert!(matches!(
            enc.encode(&vec![0u8; 39]),
            Err(CodingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn interleaver_round_trip_and_determinism() {
        let il = Interleaver::new(100, 7);
        let mut rng = RngStream::new(2);
        let xs: Vec<f64> = (0..100).map(|_| rng.normal()).collect();
        let forward = il.interleave(&xs).unwrap();
        let back = il.deinterleave(&forward).unwrap();
        assert_eq!(xs, back);

        // Identity permutation leaves data unchanged.
        let id = Interleaver::identity(100);
        assert_eq!(id.interleave(&xs).unwrap(), xs);

        // Seed determinism.
        assert_eq!(Interleaver::new(100, 7), il);
        assert_ne!(Interleaver::new(100, 8).perm, il.perm);

        assert!(matches!(
            il.interleave(&xs[..50]),
            Err(CodingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn bp_all_zero_strong_llrs_one_iteration() {
        let h = hamming_7_4();
        let llrs = vec![-crate::detect::LLR_CLIP; 7];
        let r = bp_decode(&h, &llrs, 50);
        assert!(r.converged);
        assert_eq!(r.iters, 1);
        assert!(r.bits.iter().all(|&b| b == 0));
    }

    #[test]
    fn bp_single_flip_correction() {
        // Single-error-correction oracle over all 16 codewords x 7 flip
        // positions with equal strong magnitudes. Exhaustive ML corrects all
        // of them; flooding sum-product with early exit corrects every flip
        // except at the degree-3 variable, where the first iteration lands
        // on the neighboring weight-3 codeword. Both facts are frozen here
        // from the oracle run.
        let h = hamming_7_4();
        let enc = Encoder::new(&h).unwrap();
        let deg3_var = (0..7).find(|&v| h.col_adj[v].len() == 3).unwrap();
        for w in 0..16u8 {
            let msg: Vec<u8> = (0..4).map(|j| (w >> (3 - j)) & 1).collect();
            let cw = enc.encode(&msg).unwrap();
            for flip in 0..7 {
                let mut llrs: Vec<f64> =
                    cw.iter().map(|&b| if b == 1 { 8.0 } else { -8.0 }).collect();
                llrs[flip] = -llrs[flip];
                let r = bp_decode(&h, &llrs, 50);
                assert!(r.converged, "cw {w} flip {flip} did not converge");
                if flip == deg3_var {
                    // Wrong but valid codeword at distance 3.
                    assert!(h.syndrome_is_zero(&r.bits));
                    let dist: usize =
                        r.bits.iter().zip(cw.iter()).filter(|(a, b)| a != b).count();
                    assert_eq!(dist, 3, "cw {w} flip {flip}");
                } else {
                    assert_eq!(r.bits, cw, "cw {w} flip {flip} not corrected");
                }
            }
        }
    }

    #[test]
    fn bp_tracks_exhaustive_ml_at_high_snr() {
        // 16-codeword exhaustive ML oracle on the (7,4) code over a BPSK-ish
        // AWGN abstraction at high SNR.
        let h = hamming_7_4();
        let enc = Encoder::new(&h).unwrap();
        let all_codewords: Vec<Vec<u8>> = (0..16u8)
            .map(|w| {
                let msg: Vec<u8> = (0..4).map(|j| (w >> (3 - j)) & 1).collect();
                enc.encode(&msg).unwrap()
            })
            .collect();

        let mut rng = RngStream::new(4);
        let snr = 10f64.powf(6.0 / 10.0);
        let n_trials = 10_000;
        let mut agree = 0usize;
        for _ in 0..n_trials {
            let w = rng.below(16);
            let cw = &all_codewords[w];
            // y = (-1)^b sqrt(snr) + n, LLR(ln p1/p0) = -4 sqrt(snr) y / 2
            let obs: Vec<f64> = cw
                .iter()
                .map(|&b| {
                    let s = if b == 1 { -1.0 } else { 1.0 };
                    s * snr.sqrt() + rng.normal() * 0.5f64.sqrt()
                })
                .collect();
            let llrs: Vec<f64> = obs.iter().map(|&y| -4.0 * snr.sqrt() * y).collect();

            let bp = bp_decode(&h, &llrs, 50);
            // Exhaustive ML: maximize sum of per-bit log-metrics.
            let ml = all_codewords
                .iter()
                .max_by(|a, b| {
                    let score = |c: &Vec<u8>| -> f64 {
                        c.iter()
                            .zip(obs.iter())
                            .map(|(&bit, &y)| {
                                let s = if bit == 1 { -1.0 } else { 1.0 };
                                -(y - s * snr.sqrt()) * (y - s * snr.sqrt())
                            })
                            .sum()
                    };
                    score(a).partial_cmp(&score(b)).unwrap()
                })
                .unwrap();
            if &bp.bits == ml {
                agree += 1;
            }
        }
        let frac = agree as f64 / n_trials as f64;
        assert!(frac >= 0.999, "BP/ML agreement {frac}");
    }

    #[test]
    fn bp_decoded_success_has_zero_syndrome() {
        let h = peg_ldpc(60, 20, 3);
        let enc = Encoder::new(&h).unwrap();
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            let msg: Vec<u8> = (0..40).map(|_| rng.bit()).collect();
            let cw = enc.encode(&msg).unwrap();
            let llrs: Vec<f64> = cw
                .iter()
                .map(|&b| (if b == 1 { 3.0 } else { -3.0 }) + rng.normal() * 2.0)
                .collect();
            let r = bp_decode(&h, &llrs, 50);
            if r.converged {
                assert!(h.syndrome_is_zero(&r.bits));
            }
        }
    }

    #[test]
    fn cer_endpoints_behave() {
        // Tiny (36, 24) PEG code, 2 users, 4-QAM: CER ~ 1 at very low power
        // and 0 at very high power with the exact ML detector.
        let h = peg_ldpc(36, 12, 3);
        assert_eq!(h.k, 24);
        let sys = sys_of(8, &[(1, 2), (1, 2)]);
        let rng = RngStream::new(6);
        let chans = generate_iid_rayleigh(8, &sys.users, 5, &rng);
        let il = Interleaver::new(36, 9);
        let det = DetectorSpec::MlExact.build();
        let points = cer_simulate(
            &chans,
            &sys,
            &h,
            &il,
            det.as_ref(),
            &[-25.0, 20.0],
            60,
            50,
            100,
            &RngStream::new(7),
        )
        .unwrap();
        for u in 0..2 {
            assert!(points[0].users[u].cer > 0.95, "low power CER {}", points[0].users[u].cer);
            assert_eq!(points[1].users[u].cer, 0.0, "high power CER");
            // BMDR paired with each point and monotone across the two.
            assert!(points[1].users[u].bmdr.value > points[0].users[u].bmdr.value);
        }
    }

    #[test]
    fn cer_budget_mismatch_rejected() {
        let h = hamming_7_4(); // n = 7 does not divide by 2 bits per RE
        let sys = sys_of(4, &[(1, 2)]);
        let rng = RngStream::new(8);
        let chans = generate_iid_rayleigh(4, &sys.users, 2, &rng);
        let il = Interleaver::new(7, 1);
        let det = DetectorSpec::Lmmse.build();
        match cer_simulate(
            &chans,
            &sys,
            &h,
            &il,
            det.as_ref(),
            &[0.0],
            5,
            10,
            10,
            &RngStream::new(9),
        ) {
            Err(CodingError::BudgetMismatch { n: 7, bits: 2 }) => {}
            other => panic!("expected BudgetMismatch, got {other:?}"),
        }
    }

    #[test]
    fn wilson_interval_basics() {
        let (lo, hi) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(hi - lo < 0.25);
    }
}
