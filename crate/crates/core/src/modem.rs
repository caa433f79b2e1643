//! Unit-energy square QAM constellations with per-axis Gray labeling.
//!
//! Labeling convention (part of the artifact contract): a symbol carries
//! `m` bits `(b_0, ..., b_{m-1})`; the first `m/2` bits select the I axis,
//! the rest the Q axis. Within an axis, bit 0 selects the sign (0 = positive)
//! and the remaining bits Gray-select the magnitude, so adjacent PAM levels
//! differ in exactly one bit and negating a point flips exactly the two axis
//! sign bits. Bits `(0,0)` on 4-QAM map to `(1+i)/sqrt(2)`.

use crate::linalg::ComplexMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModemError {
    #[error("unsupported constellation order m={0} (expected 2, 4, or 6)")]
    UnsupportedOrder(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Gray-coded square QAM with unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    /// Bits per symbol (m).
    pub bits_per_symbol: usize,
    /// Points indexed by the m-bit label with `b_0` as the most significant bit.
    pub points: Vec<Complex64>,
    /// Per-axis PAM amplitudes indexed by the (m/2)-bit axis label.
    pub pam: Vec<f64>,
    /// Unnormalized odd integer amplitudes behind `pam` (for exact checks).
    pub pam_int: Vec<i32>,
    /// Amplitude normalization factor (1/sqrt(2), 1/sqrt(10), 1/sqrt(42)).
    pub norm: f64,
}

impl Constellation {
    /// Bits per axis (m/2).
    pub fn axis_bits(&self) -> usize {
        self.bits_per_symbol / 2
    }

    /// Point for an m-bit label.
    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    /// Label whose point is nearest to `z`.
    pub fn nearest_label(&self, z: Complex64) -> usize {
        let i = self.nearest_axis_label(z.re);
        let q = self.nearest_axis_label(z.im);
        (i << self.axis_bits()) | q
    }

    /// Axis label whose PAM amplitude is nearest to `x`.
    pub fn nearest_axis_label(&self, x: f64) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (lab, &a) in self.pam.iter().enumerate() {
            let d = (x - a) * (x - a);
            if d < best_d {
                best_d = d;
                best = lab;
            }
        }
        best
    }

    /// XOR mask on the m-bit label implied by negating a point: exactly the
    /// two axis sign bits flip.
    pub fn negation_mask(&self) -> usize {
        let h = self.axis_bits();
        (1 << (self.bits_per_symbol - 1)) | (1 << (h - 1))
    }
}

/// Gray code of `k`.
fn gray(k: usize) -> usize {
    k ^ (k >> 1)
}

/// Build a Gray-coded square QAM constellation for `m` in {2, 4, 6}.
pub fn build_qam(m: usize) -> Result<Constellation, ModemError> {
    if !(m == 2 || m == 4 || m == 6) {
        return Err(ModemError::UnsupportedOrder(m));
    }
    let h = m / 2;
    let levels = 1usize << h;
    // Mean square of the two-axis unnormalized grid: 2 * (4^h - 1) / 3.
    let energy_int: i64 = 2 * ((1i64 << (2 * h)) - 1) / 3;
    let norm = 1.0 / (energy_int as f64).sqrt();

    // Gray label for descending amplitudes: level index k = 0 maps to the
    // largest positive amplitude, so the all-zero label is positive (sign
    // bit 0 => positive half).
    let mut pam_int = vec![0i32; levels];
    for k in 0..levels {
        let amp = (levels as i32 - 1) - 2 * k as i32;
        pam_int[gray(k)] = amp;
    }
    let pam: Vec<f64> = pam_int.iter().map(|&a| a as f64 * norm).collect();

    let mut points = Vec::with_capacity(1 << m);
    for label in 0..(1usize << m) {
        let i_lab = label >> h;
        let q_lab = label & (levels - 1);
        points.push(Complex64::new(pam[i_lab], pam[q_lab]));
    }

    Ok(Constellation { bits_per_symbol: m, points, pam, pam_int, norm })
}

/// Per-RE bit matrix for one user: `n_t` rows of `m` bits.
#[derive(Debug, Clone, PartialEq)]
pub struct BitMatrix {
    pub n_t: usize,
    pub m: usize,
    pub bits: Vec<u8>,
}

impl BitMatrix {
    pub fn new(n_t: usize, m: usize, bits: Vec<u8>) -> Self {
        assert_eq!(bits.len(), n_t * m);
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Self { n_t, m, bits }
    }

    pub fn zeros(n_t: usize, m: usize) -> Self {
        Self { n_t, m, bits: vec![0; n_t * m] }
    }

    #[inline]
    pub fn get(&self, row: usize, j: usize) -> u8 {
        self.bits[row * self.m + j]
    }

    #[inline]
    pub fn set(&mut self, row: usize, j: usize, b: u8) {
        self.bits[row * self.m + j] = b;
    }

    /// m-bit label of one row, `b_0` most significant.
    pub fn row_label(&self, row: usize) -> usize {
        let mut label = 0usize;
        for j in 0..self.m {
            label = (label << 1) | self.get(row, j) as usize;
        }
        label
    }

    pub fn from_labels(labels: &[usize], m: usize) -> Self {
        let n_t = labels.len();
        let mut out = Self::zeros(n_t, m);
        for (row, &label) in labels.iter().enumerate() {
            for j in 0..m {
                out.set(row, j, ((label >> (m - 1 - j)) & 1) as u8);
            }
        }
        out
    }
}

/// Map a bit matrix to the symbol vector (n_t x 1) through the constellation.
pub fn map_bits(b: &BitMatrix, c: &Constellation) -> Result<ComplexMatrix, ModemError> {
    if b.m != c.bits_per_symbol {
        return Err(ModemError::ShapeMismatch(format!(
            "bit matrix has m={}, constellation has m={}",
            b.m, c.bits_per_symbol
        )));
    }
    let data = (0..b.n_t).map(|row| c.point(b.row_label(row))).collect();
    Ok(ComplexMatrix::new(b.n_t, 1, data))
}

/// Nearest-point hard demap, inverse of [`map_bits`] under zero noise.
pub fn demap_symbols(s: &ComplexMatrix, c: &Constellation) -> Result<BitMatrix, ModemError> {
    if s.cols != 1 {
        return Err(ModemError::ShapeMismatch(format!(
            "expected column vector, got {}x{}",
            s.rows, s.cols
        )));
    }
    let labels: Vec<usize> = (0..s.rows).map(|r| c.nearest_label(s.get(r, 0))).collect();
    Ok(BitMatrix::from_labels(&labels, c.bits_per_symbol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsupported_orders_rejected() {
        assert_eq!(build_qam(3), Err(ModemError::UnsupportedOrder(3)));
        assert_eq!(build_qam(8), Err(ModemError::UnsupportedOrder(8)));
    }

    #[test]
    fn qpsk_points_and_anchor() {
        let c = build_qam(2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // (0,0) anchor
        let b = BitMatrix::new(1, 2, vec![0, 0]);
        let p = map_bits(&b, &c).unwrap().get(0, 0);
        assert!((p - Complex64::new(s, s)).norm() < 1e-15);
        // All four quadrant corners present
        for target in [(s, s), (s, -s), (-s, s), (-s, -s)] {
            assert!(c
                .points
                .iter()
                .any(|p| (p - Complex64::new(target.0, target.1)).norm() < 1e-15));
        }
    }

    #[test]
    fn energy_exact_and_zero_mean() {
        for m in [2usize, 4, 6] {
            let c = build_qam(m).unwrap();
            let h = m / 2;
            // Exact integer check: sum of unnormalized |point|^2 over the grid
            // equals 2^m * (2 (4^h - 1) / 3).
            let energy_int: i64 = 2 * ((1i64 << (2 * h)) - 1) / 3;
            let mut total: i64 = 0;
            for i_lab in 0..(1usize << h) {
                for q_lab in 0..(1usize << h) {
                    let a = c.pam_int[i_lab] as i64;
                    let b = c.pam_int[q_lab] as i64;
                    total += a * a + b * b;
                }
            }
            assert_eq!(total, (1i64 << m) * energy_int, "m={m}");

            let mean_e: f64 =
                c.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.points.len() as f64;
            assert!((mean_e - 1.0).abs() < 1e-14, "m={m} mean energy {mean_e}");

            let sum: Complex64 = c.points.iter().sum();
            assert!(sum.norm() < 1e-14, "m={m} constellation not zero-mean");

            // Symmetric about the origin.
            for p in &c.points {
                assert!(c.points.iter().any(|q| (q + p).norm() < 1e-14));
            }
        }
    }

    #[test]
    fn qam16_amplitudes() {
        let c = build_qam(4).unwrap();
        let mut amps: Vec<i32> = c.pam_int.clone();
        amps.sort_unstable();
        assert_eq!(amps, vec![-3, -1, 1, 3]);
        assert!((c.norm - 1.0 / 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        // Exhaustive adjacency enumeration: nearest-neighbor pairs at the
        // minimum grid distance must differ in exactly one bit.
        for m in [2usize, 4, 6] {
            let c = build_qam(m).unwrap();
            let step = 2.0 * c.norm;
            let n = c.points.len();
            let mut checked = 0;
            for a in 0..n {
                for b in (a + 1)..n {
                    let d = (c.points[a] - c.points[b]).norm();
                    if (d - step).abs() < 1e-9 {
                        let diff = (a ^ b).count_ones();
                        assert_eq!(diff, 1, "m={m} labels {a:0b} and {b:0b}");
                        checked += 1;
                    }
                }
            }
            assert!(checked > 0);
        }
    }

    #[test]
    fn negation_flips_exactly_the_sign_bits() {
        for m in [2usize, 4, 6] {
            let c = build_qam(m).unwrap();
            let mask = c.negation_mask();
            for label in 0..c.points.len() {
                let neg = -c.point(label);
                assert_eq!(c.nearest_label(neg), label ^ mask, "m={m} label {label}");
            }
        }
    }

    #[test]
    fn map_demap_round_trip_exhaustive_qpsk() {
        let c = build_qam(2).unwrap();
        for label in 0..4usize {
            let b = BitMatrix::from_labels(&[label], 2);
            let s = map_bits(&b, &c).unwrap();
            let back = demap_symbols(&s, &c).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn map_demap_round_trip_random_qam16() {
        let c = build_qam(4).unwrap();
        let mut rng = crate::rng::RngStream::new(3);
        for _ in 0..200 {
            let bits: Vec<u8> = (0..4 * 4).map(|_| rng.bit()).collect();
            let b = BitMatrix::new(4, 4, bits);
            let s = map_bits(&b, &c).unwrap();
            let back = demap_symbols(&s, &c).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let c = build_qam(4).unwrap();
        let b = BitMatrix::zeros(2, 2);
        assert!(matches!(map_bits(&b, &c), Err(ModemError::ShapeMismatch(_))));
    }
}
