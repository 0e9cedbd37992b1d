//! Dense complex linear algebra.
//!
//! Everything here works on small row-major complex matrices (a few hundred
//! rows at most), which is all the detectors need. The routines are plain
//! loops over `Complex64`; no BLAS.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modem::Constellation;

/// Pivot tolerance for the Cholesky factorization.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Relative tolerance and iteration cap of [`lambda_max`].
pub const POWER_TOLERANCE: f64 = 1e-8;
pub const POWER_MAX_ITERATIONS: usize = 10_000;

/// Dense complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries. All entries must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Real diagonal matrix.
    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A x`.
    pub fn matvec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols {
            return Err(Error::LengthMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        self.matvec_into(x, &mut out);
        Ok(out)
    }

    /// `A x` into a caller-provided buffer. Lengths are the caller's problem.
    #[inline]
    pub fn matvec_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `Aᴴ v`.
    pub fn matvec_h(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.rows {
            return Err(Error::LengthMismatch {
                expected: self.rows,
                got: v.len(),
            });
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a.conj() * vr;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("subtraction of unequal shapes".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&self, value: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += value;
        }
        out
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Euclidean norm squared of a complex vector.
#[inline]
pub fn sqnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Euclidean norm of a complex vector.
#[inline]
pub fn norm(v: &[Complex64]) -> f64 {
    sqnorm(v).sqrt()
}

/// Gram matrix `HᴴH`.
pub fn gram(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    if h.rows == 0 || h.cols == 0 {
        return Err(Error::DimensionMismatch("empty channel matrix".into()));
    }
    let n = h.cols;
    let mut a = ComplexMatrix::zeros(n, n);
    for r in 0..h.rows {
        let row = h.row(r);
        for i in 0..n {
            let hi = row[i].conj();
            for j in i..n {
                a[(i, j)] += hi * row[j];
            }
        }
    }
    for i in 0..n {
        a[(i, i)].im = 0.0;
        for j in i + 1..n {
            a[(j, i)] = a[(i, j)].conj();
        }
    }
    Ok(a)
}

/// Lower Cholesky factor `L` with `L Lᴴ = A`.
pub fn cholesky_lower(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !a.is_square() || a.rows == 0 {
        return Err(Error::DimensionMismatch("cholesky needs a square nonempty matrix".into()));
    }
    let n = a.rows;
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= PIVOT_TOLERANCE || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { column: j, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
fn invert_lower(l: &ComplexMatrix) -> ComplexMatrix {
    let n = l.rows;
    let mut inv = ComplexMatrix::zeros(n, n);
    for col in 0..n {
        // Forward substitution for L x = e_col.
        for i in col..n {
            let mut s = if i == col {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            for k in col..i {
                s -= l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / l[(i, i)];
        }
    }
    inv
}

/// Inverse of a Hermitian positive definite matrix, `A⁻¹ = L⁻ᴴ L⁻¹`.
pub fn invert_hpd(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let l = cholesky_lower(a)?;
    let n = l.rows;
    let li = invert_lower(&l);
    let mut inv = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            // (L⁻ᴴ L⁻¹)_{ij} = Σ_k conj(Li_{k i}) Li_{k j}, k ≥ max(i, j)
            let mut s = Complex64::new(0.0, 0.0);
            for k in i..n {
                s += li[(k, i)].conj() * li[(k, j)];
            }
            inv[(i, j)] = s;
            inv[(j, i)] = s.conj();
        }
        inv[(i, i)].im = 0.0;
    }
    Ok(inv)
}

/// Frobenius norm.
pub fn frobenius_norm(a: &ComplexMatrix) -> f64 {
    sqnorm(&a.data).sqrt()
}

/// Dominant eigenvalue of a Hermitian PSD matrix by power iteration.
///
/// Only tests use this; the detectors bound it with [`frobenius_norm`].
pub fn lambda_max(a: &ComplexMatrix) -> Result<f64> {
    if !a.is_square() || a.rows == 0 {
        return Err(Error::DimensionMismatch("lambda_max needs a square matrix".into()));
    }
    let n = a.rows;
    // Irregular start vector so it is not orthogonal to the dominant
    // eigenvector of any structured test matrix.
    let mut v: Vec<Complex64> = (0..n)
        .map(|k| Complex64::new(1.0 + 0.1 * k as f64, 0.05 * ((k * 7 % 5) as f64)))
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|z| *z /= nv);
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERATIONS {
        a.matvec_into(&v, &mut w);
        let rq: f64 = v.iter().zip(&w).map(|(vi, wi)| (vi.conj() * wi).re).sum();
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        if (rq - lambda).abs() <= POWER_TOLERANCE * rq.abs().max(f64::MIN_POSITIVE) {
            return Ok(rq.max(lambda));
        }
        lambda = rq;
    }
    Err(Error::NonConvergence(POWER_MAX_ITERATIONS))
}

/// `r = y − Hx` and `‖r‖²`.
pub fn residual(y: &[Complex64], hx: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
    if y.len() != hx.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: hx.len(),
        });
    }
    let r: Vec<Complex64> = y.iter().zip(hx).map(|(a, b)| a - b).collect();
    let s = sqnorm(&r);
    Ok((r, s))
}

/// Channel columns pre-scaled by every positive per-axis QAM amplitude.
///
/// `Hx` for a constellation vector is then a signed sum of cached columns
/// (the imaginary axis is a free rotation by `i`), with no multiplications.
#[derive(Debug, Clone)]
pub struct ColumnCache {
    nr: usize,
    nt: usize,
    magnitudes: usize,
    order: usize,
    /// `[(column * magnitudes + level) * nr + row]`
    columns: Vec<Complex64>,
    /// Per constellation point: (re magnitude index, re sign, im magnitude index, im sign).
    lookup: Vec<(usize, f64, usize, f64)>,
}

impl ColumnCache {
    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// QAM order this cache was built for.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of stored scaled columns.
    pub fn stored_columns(&self) -> usize {
        self.nt * self.magnitudes
    }

    /// Column `j` scaled by the `level`-th positive amplitude.
    pub fn scaled_column(&self, j: usize, level: usize) -> &[Complex64] {
        let start = (j * self.magnitudes + level) * self.nr;
        &self.columns[start..start + self.nr]
    }

    /// Writes `Hx` into `out` for the point indices `symbols`.
    #[inline]
    pub fn product_into(&self, symbols: &[u8], out: &mut [Complex64]) {
        debug_assert_eq!(symbols.len(), self.nt);
        debug_assert_eq!(out.len(), self.nr);
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (j, &s) in symbols.iter().enumerate() {
            let (mr, sr, mi, si) = self.lookup[s as usize];
            let cr = self.scaled_column(j, mr);
            let ci = self.scaled_column(j, mi);
            for ((o, a), b) in out.iter_mut().zip(cr).zip(ci) {
                o.re += sr * a.re - si * b.im;
                o.im += sr * a.im + si * b.re;
            }
        }
    }

    /// `Hx` for the point indices `symbols`.
    pub fn product(&self, symbols: &[u8]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.nr];
        self.product_into(symbols, &mut out);
        out
    }

    /// `‖y − Hx‖²`; `scratch` must have length `N_r`.
    #[inline]
    pub fn residual_sqnorm(&self, y: &[Complex64], symbols: &[u8], scratch: &mut [Complex64]) -> f64 {
        self.product_into(symbols, scratch);
        y.iter().zip(scratch.iter()).map(|(a, b)| (a - b).norm_sqr()).sum()
    }

    /// Adds column `j` times point `symbol` onto `acc`.
    #[inline]
    pub fn add_column_into(&self, j: usize, symbol: u8, acc: &mut [Complex64]) {
        let (mr, sr, mi, si) = self.lookup[symbol as usize];
        let cr = self.scaled_column(j, mr);
        let ci = self.scaled_column(j, mi);
        for ((o, a), b) in acc.iter_mut().zip(cr).zip(ci) {
            o.re += sr * a.re - si * b.im;
            o.im += sr * a.im + si * b.re;
        }
    }
}

/// Scales every column of `h` by every distinct positive axis amplitude of `c`.
pub fn build_column_cache(h: &ComplexMatrix, c: &Constellation) -> ColumnCache {
    let positive: Vec<f64> = c.axis_levels().iter().copied().filter(|&v| v > 0.0).collect();
    let magnitudes = positive.len();
    let (nr, nt) = (h.rows(), h.cols());
    let mut columns = Vec::with_capacity(nt * magnitudes * nr);
    for j in 0..nt {
        for &a in &positive {
            columns.extend((0..nr).map(|r| h[(r, j)] * a));
        }
    }
    let lookup = (0..c.order())
        .map(|p| {
            let z = c.point(p as u8);
            let mag_index = |v: f64| {
                positive
                    .iter()
                    .position(|&a| (a - v.abs()).abs() < 1e-9)
                    .expect("axis amplitude present in level table")
            };
            (mag_index(z.re), z.re.signum(), mag_index(z.im), z.im.signum())
        })
        .collect();
    ColumnCache {
        nr,
        nt,
        magnitudes,
        order: c.order(),
        columns,
        lookup,
    }
}
