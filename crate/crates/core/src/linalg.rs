//! Dense real/complex matrix kernels used throughout the crate: the
//! complex-to-real embedding, Householder QR with a positive-diagonal
//! convention, one-sided Jacobi singular values, and a Hermitian Jacobi
//! eigensolver for noise-whitening.
//!
//! Matrices here are small (tens of rows), so everything is plain row-major
//! storage and O(n^3) loops; no BLAS.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is rank deficient (pivot {pivot:e} below tolerance)")]
    RankDeficient { pivot: f64 },
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("matrix is not positive definite (eigenvalue {eig:e})")]
    NotPositiveDefinite { eig: f64 },
}

/// Complex matrix, row-major, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn hermitian(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c).conj());
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..other.cols {
                    let v = out.get(r, c) + a * other.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    /// `self * v` for a column vector given as a slice of length `cols`.
    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for r in 0..self.rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..self.cols {
                acc += self.get(r, c) * v[c];
            }
            out[r] = acc;
        }
        out
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// Columns `[start, start+len)` as a new matrix.
    pub fn col_block(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        let mut out = Self::zeros(self.rows, len);
        for r in 0..self.rows {
            for c in 0..len {
                out.set(r, c, self.get(r, start + c));
            }
        }
        out
    }

    /// Scale columns `[start, start+len)` in place.
    pub fn scale_cols(&mut self, start: usize, len: usize, s: f64) {
        for r in 0..self.rows {
            for c in start..start + len {
                let v = self.get(r, c) * s;
                self.set(r, c, v);
            }
        }
    }
}

/// Real matrix, row-major, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    let v = out.get(r, c) + a * other.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += self.get(r, c) * v[c];
            }
            out[r] = acc;
        }
        out
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_upper_triangular(&self, tol: f64) -> bool {
        for r in 0..self.rows {
            for c in 0..r.min(self.cols) {
                if self.get(r, c).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Real embedding of a complex matrix: `[[Re X, -Im X], [Im X, Re X]]`.
///
/// The embedding is a ring homomorphism: `(X + Y)^R = X^R + Y^R` and
/// `(X Y)^R = X^R Y^R` for compatible shapes.
pub fn real_embed_matrix(x: &ComplexMatrix) -> Result<RealMatrix, LinalgError> {
    if !x.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let (m, n) = (x.rows, x.cols);
    let mut out = RealMatrix::zeros(2 * m, 2 * n);
    for r in 0..m {
        for c in 0..n {
            let z = x.get(r, c);
            out.set(r, c, z.re);
            out.set(r, n + c, -z.im);
            out.set(m + r, c, z.im);
            out.set(m + r, n + c, z.re);
        }
    }
    Ok(out)
}

/// Real embedding of a complex column vector: `[Re x; Im x]`.
///
/// Consistent with [`real_embed_matrix`]: `(H x)^R = H^R x^R`.
pub fn real_embed_vector(x: &ComplexMatrix) -> Result<RealMatrix, LinalgError> {
    if x.cols != 1 {
        return Err(LinalgError::ShapeMismatch(format!(
            "expected column vector, got {}x{}",
            x.rows, x.cols
        )));
    }
    if !x.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = x.rows;
    let mut out = RealMatrix::zeros(2 * n, 1);
    for r in 0..n {
        let z = x.get(r, 0);
        out.set(r, 0, z.re);
        out.set(n + r, 0, z.im);
    }
    Ok(out)
}

/// Embed a complex slice as `[Re; Im]`.
pub fn real_embed_slice(x: &[Complex64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; 2 * n];
    for (i, z) in x.iter().enumerate() {
        out[i] = z.re;
        out[n + i] = z.im;
    }
    out
}

const QR_PIVOT_TOL: f64 = 1e-12;

/// Thin QR decomposition by Householder reflections, `A = Q R` with
/// `Q^T Q = I` and `R` upper-triangular.
///
/// The sign convention forces `diag(R) > 0`, which makes the factorization
/// unique and therefore a canonical feature map: two runs on the same input
/// return bit-identical factors.
pub fn qr_decompose(a: &RealMatrix) -> Result<(RealMatrix, RealMatrix), LinalgError> {
    let (m, n) = (a.rows, a.cols);
    if m < n {
        return Err(LinalgError::ShapeMismatch(format!(
            "QR requires rows >= cols, got {}x{}",
            m, n
        )));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let norm_a = a.fro_norm();

    let mut r = a.clone();
    // Householder vectors, one per column, each of length m - j.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        // x = R[j.., j]
        let mut v: Vec<f64> = (j..m).map(|i| r.get(i, j)).collect();
        let alpha = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let alpha = if v[0] > 0.0 { -alpha } else { alpha };
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|x| x * x).sum::<f64>();
        if vnorm2 > 0.0 {
            // Apply H = I - 2 v v^T / (v^T v) to R[j.., j..].
            for c in j..n {
                let mut dot = 0.0;
                for i in j..m {
                    dot += v[i - j] * r.get(i, c);
                }
                let f = 2.0 * dot / vnorm2;
                for i in j..m {
                    let val = r.get(i, c) - f * v[i - j];
                    r.set(i, c, val);
                }
            }
        }
        vs.push(v);
    }

    // Rank check on the diagonal pivots.
    for j in 0..n {
        let pivot = r.get(j, j).abs();
        if pivot < QR_PIVOT_TOL * norm_a.max(1e-300) {
            return Err(LinalgError::RankDeficient { pivot });
        }
    }

    // Thin Q: apply the reflectors in reverse to the first n columns of I_m.
    let mut q = RealMatrix::zeros(m, n);
    for i in 0..n {
        q.set(i, i, 1.0);
    }
    for j in (0..n).rev() {
        let v = &vs[j];
        let vnorm2 = v.iter().map(|x| x * x).sum::<f64>();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in 0..n {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i - j] * q.get(i, c);
            }
            let f = 2.0 * dot / vnorm2;
            for i in j..m {
                let val = q.get(i, c) - f * v[i - j];
                q.set(i, c, val);
            }
        }
    }

    // Zero the sub-diagonal explicitly and enforce diag(R) > 0.
    let mut r_out = RealMatrix::zeros(n, n);
    for i in 0..n {
        for c in i..n {
            r_out.set(i, c, r.get(i, c));
        }
    }
    for i in 0..n {
        if r_out.get(i, i) < 0.0 {
            for c in i..n {
                let v = -r_out.get(i, c);
                r_out.set(i, c, v);
            }
            for row in 0..m {
                let v = -q.get(row, i);
                q.set(row, i, v);
            }
        }
    }
    Ok((q, r_out))
}

/// Singular values (descending) by one-sided Jacobi on the real embedding.
pub fn singular_values(h: &ComplexMatrix) -> Result<Vec<f64>, LinalgError> {
    if !h.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let embedded = real_embed_matrix(h)?;
    // Each singular value of h appears twice in the embedding; keep one copy.
    let all = singular_values_real(&embedded)?;
    Ok(all.into_iter().step_by(2).collect())
}

/// Singular values (descending) of a real matrix by one-sided Jacobi sweeps.
pub fn singular_values_real(a: &RealMatrix) -> Result<Vec<f64>, LinalgError> {
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    // Work on the tall orientation so columns are the short dimension.
    let work = if a.rows >= a.cols { a.clone() } else { a.transpose() };
    let (m, n) = (work.rows, work.cols);
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..m).map(|r| work.get(r, c)).collect())
        .collect();

    let tol = 1e-14;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    app += cols[p][i] * cols[p][i];
                    aqq += cols[q][i] * cols[q][i];
                    apq += cols[p][i] * cols[q][i];
                }
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                off = off.max(apq.abs() / (app * aqq).sqrt().max(1e-300));
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let xp = cols[p][i];
                    let xq = cols[q][i];
                    cols[p][i] = c * xp - s * xq;
                    cols[q][i] = s * xp + c * xq;
                }
            }
        }
        if off == 0.0 {
            break;
        }
    }

    let mut sigmas: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sigmas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(sigmas)
}

const SINGULAR_RATIO_TOL: f64 = 1e-14;

/// Condition number in dB: `20 log10(sigma_max / sigma_min)`.
///
/// Returns `f64::INFINITY` when `sigma_min < 1e-14 * sigma_max`.
pub fn condition_number_db(h: &ComplexMatrix) -> Result<f64, LinalgError> {
    let sigmas = singular_values(h)?;
    let smax = sigmas[0];
    let smin = *sigmas.last().unwrap();
    if smax <= 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    if smin < SINGULAR_RATIO_TOL * smax {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (smax / smin).log10())
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns `(eigenvalues ascending, V)` with `M = V diag(l) V^H`.
pub fn hermitian_eigen(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix), LinalgError> {
    if m.rows != m.cols {
        return Err(LinalgError::ShapeMismatch(format!(
            "eigen requires a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = ComplexMatrix::identity(n);

    let tol = 1e-14 * m.fro_norm().max(1e-300);
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let g = a.get(p, q);
                let gn = g.norm();
                max_off = max_off.max(gn);
                if gn <= tol {
                    continue;
                }
                // Phase that makes the pivot real, then a real Jacobi angle.
                let phase = g / gn;
                let app = a.get(p, p).re;
                let aqq = a.get(q, q).re;
                let tau = (aqq - app) / (2.0 * gn);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // J: columns p,q mix with J[p][p]=c, J[p][q]=s*phase,
                //    J[q][p]=-s*conj(phase)... applied as A <- J^H A J.
                let jp = Complex64::new(c, 0.0);
                let jq = s * phase;
                // Update columns of A: A <- A J
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, aip * jp - aiq * jq.conj());
                    a.set(i, q, aip * jq + aiq * jp);
                }
                // Update rows of A: A <- J^H A
                for i in 0..n {
                    let api = a.get(p, i);
                    let aqi = a.get(q, i);
                    a.set(p, i, jp * api - jq * aqi);
                    a.set(q, i, jq.conj() * api + jp * aqi);
                }
                // Accumulate V <- V J
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, vip * jp - viq * jq.conj());
                    v.set(i, q, vip * jq + viq * jp);
                }
            }
        }
        if max_off <= tol {
            break;
        }
    }

    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a.get(i, i).re, i)).collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let eigs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut vs = ComplexMatrix::zeros(n, n);
    for (new_c, &(_, old_c)) in pairs.iter().enumerate() {
        for r in 0..n {
            vs.set(r, new_c, v.get(r, old_c));
        }
    }
    Ok((eigs, vs))
}

/// `M^p` for Hermitian positive-definite `M` via its eigendecomposition,
/// with `p` in `{-1/2, 1/2}` style fractional powers.
pub fn hermitian_power(m: &ComplexMatrix, p: f64) -> Result<ComplexMatrix, LinalgError> {
    let (eigs, v) = hermitian_eigen(m)?;
    let scale = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    for &e in &eigs {
        if e <= 1e-12 * scale.max(1e-300) {
            return Err(LinalgError::NotPositiveDefinite { eig: e });
        }
    }
    let n = m.rows;
    let mut out = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += v.get(i, k) * eigs[k].powf(p) * v.get(j, k).conj();
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}
