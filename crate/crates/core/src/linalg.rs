//! Symmetric sparse matrices in envelope (profile) storage.
//!
//! Only the lower triangle is stored. Row `i` holds the contiguous run of
//! columns `first[i]..=i`. Cholesky factorization creates no fill outside
//! the envelope, so the factor and the selected inverse share the layout of
//! the matrix they came from. The orderings used in this crate keep the
//! spatial blocks banded and put the few dense rows (fixed effects, yearly
//! effects) last, which makes the envelope tight.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("entry ({row}, {col}) lies outside the stored envelope")]
    OutsideEnvelope { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Row extents of a lower-triangular envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeLayout {
    first: Vec<usize>,
    ptr: Vec<usize>,
    /// For each column `j`, the rows `k > j` whose envelope reaches `j`.
    below: Vec<Vec<usize>>,
}

impl EnvelopeLayout {
    pub fn new(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut ptr = Vec::with_capacity(n + 1);
        ptr.push(0);
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope start {f} beyond diagonal at row {i}");
            ptr.push(ptr[i] + (i - f + 1));
        }
        let mut below = vec![Vec::new(); n];
        for (k, &f) in first.iter().enumerate() {
            for col in below.iter_mut().take(k).skip(f) {
                col.push(k);
            }
        }
        Self { first, ptr, below }
    }

    /// Layout with every row reaching back `bandwidth` columns.
    pub fn banded(n: usize, bandwidth: usize) -> Self {
        Self::new((0..n).map(|i| i.saturating_sub(bandwidth)).collect())
    }

    /// Smallest envelope containing the given (row, col) positions.
    pub fn from_positions<I: IntoIterator<Item = (usize, usize)>>(n: usize, positions: I) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in positions {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            if c < first[r] {
                first[r] = c;
            }
        }
        Self::new(first)
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn nnz(&self) -> usize {
        *self.ptr.last().unwrap_or(&0)
    }

    pub fn first(&self, row: usize) -> usize {
        self.first[row]
    }

    /// Rows strictly below the diagonal whose envelope reaches `col`.
    pub fn rows_below(&self, col: usize) -> &[usize] {
        &self.below[col]
    }

    /// Storage offset of `(row, col)` with `row >= col`, if stored.
    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> Option<usize> {
        debug_assert!(row >= col);
        if col < self.first[row] {
            None
        } else {
            Some(self.ptr[row] + col - self.first[row])
        }
    }

    /// Largest distance from the diagonal over all rows.
    pub fn bandwidth(&self) -> usize {
        self.first.iter().enumerate().map(|(i, &f)| i - f).max().unwrap_or(0)
    }

    #[inline]
    fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.ptr[row]..self.ptr[row + 1]
    }
}

/// Symmetric matrix stored on an [`EnvelopeLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct SymEnvelope {
    layout: Arc<EnvelopeLayout>,
    values: Vec<f64>,
}

/// A symmetric positive-definite precision matrix.
pub type SparsePrecision = SymEnvelope;

impl SymEnvelope {
    pub fn zeros(layout: Arc<EnvelopeLayout>) -> Self {
        let values = vec![0.0; layout.nnz()];
        Self { layout, values }
    }

    /// Builds a matrix from entries of either triangle; duplicates add up.
    /// Each off-diagonal pair must be given once.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let layout = EnvelopeLayout::from_positions(n, triplets.iter().map(|&(i, j, _)| (i, j)));
        let mut m = Self::zeros(Arc::new(layout));
        for &(i, j, v) in triplets {
            m.add(i, j, v).expect("position is inside the envelope it defined");
        }
        m
    }

    pub fn layout(&self) -> &Arc<EnvelopeLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.layout.offset(r, c).map_or(0.0, |o| self.values[o])
    }

    /// Entry as stored, `None` when outside the envelope.
    pub fn try_get(&self, i: usize, j: usize) -> Option<f64> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.layout.offset(r, c).map(|o| self.values[o])
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<(), LinalgError> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let o = self.layout.offset(r, c).ok_or(LinalgError::OutsideEnvelope { row: r, col: c })?;
        self.values[o] += v;
        Ok(())
    }

    /// `self += alpha * other`; both must share a layout.
    pub fn axpy(&mut self, alpha: f64, other: &SymEnvelope) {
        assert!(Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout, "axpy on different layouts");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// `sum_ij self_ij * other_ij`, i.e. `tr(self * other)` for symmetric
    /// matrices on a common layout.
    pub fn trace_product(&self, other: &SymEnvelope) -> f64 {
        assert_eq!(self.layout.nnz(), other.layout.nnz());
        let mut total = 0.0;
        for i in 0..self.dim() {
            let range = self.layout.row_range(i);
            let diag = range.end - 1;
            for o in range {
                let w = if o == diag { 1.0 } else { 2.0 };
                total += w * self.values[o] * other.values[o];
            }
        }
        total
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.layout.first[i];
            let row = &self.values[self.layout.row_range(i)];
            let (off, diag) = row.split_at(row.len() - 1);
            let mut acc = diag[0] * x[i];
            for (k, &a) in off.iter().enumerate() {
                let j = f + k;
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            let f = self.layout.first[i];
            for (k, &v) in self.values[self.layout.row_range(i)].iter().enumerate() {
                let j = f + k;
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        d
    }

    pub fn cholesky(&self) -> Result<Cholesky, LinalgError> {
        Cholesky::factor(self)
    }
}

/// Lower-triangular factor `L` with `A = L Lᵀ`, on the layout of `A`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    layout: Arc<EnvelopeLayout>,
    values: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SymEnvelope) -> Result<Self, LinalgError> {
        let layout = Arc::clone(&a.layout);
        let mut l = a.values.clone();
        let n = layout.dim();
        for i in 0..n {
            let fi = layout.first[i];
            let pi = layout.ptr[i];
            for j in fi..i {
                let fj = layout.first[j];
                let pj = layout.ptr[j];
                let start = fi.max(fj);
                let mut s = l[pi + j - fi];
                if start < j {
                    let ri = &l[pi + start - fi..pi + j - fi];
                    let rj = &l[pj + start - fj..pj + j - fj];
                    s -= dot(ri, rj);
                }
                let ljj = l[pj + j - fj];
                l[pi + j - fi] = s / ljj;
            }
            let row = &l[pi..pi + i - fi];
            let d = l[pi + i - fi] - dot(row, row);
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: i, pivot: d });
            }
            l[pi + i - fi] = d.sqrt();
        }
        Ok(Self { layout, values: l })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    #[inline]
    fn diag(&self, i: usize) -> f64 {
        self.values[self.layout.ptr[i + 1] - 1]
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// Smallest diagonal entry of the factor.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim()).map(|i| self.diag(i)).fold(f64::INFINITY, f64::min)
    }

    /// Solves `L w = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        for i in 0..self.dim() {
            let f = self.layout.first[i];
            let row = &self.values[self.layout.row_range(i)];
            let (off, diag) = row.split_at(row.len() - 1);
            let s = b[i] - dot(off, &b[f..i]);
            b[i] = s / diag[0];
        }
    }

    /// Solves `Lᵀ x = w` in place.
    pub fn backward_in_place(&self, w: &mut [f64]) {
        for k in (0..self.dim()).rev() {
            let f = self.layout.first[k];
            let row = &self.values[self.layout.row_range(k)];
            let (off, diag) = row.split_at(row.len() - 1);
            let xk = w[k] / diag[0];
            w[k] = xk;
            for (a, wj) in off.iter().zip(&mut w[f..k]) {
                *wj -= a * xk;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }

    /// Zero-mean draw with covariance `A⁻¹`: `x = L⁻ᵀ z`, `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.backward_in_place(&mut z);
        z
    }

    /// Entries of `A⁻¹` on the envelope of `A` (Takahashi recursions).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let layout = &self.layout;
        let n = layout.dim();
        let mut sigma = vec![0.0; layout.nnz()];
        let lval = |row: usize, col: usize| -> f64 { self.values[layout.ptr[row] + col - layout.first[row]] };
        for i in (0..n).rev() {
            let lii = self.diag(i);
            let rows = layout.rows_below(i);
            // Sigma[j, i] for j below the diagonal in column i.
            for &j in rows {
                let mut s = 0.0;
                for &k in rows {
                    let (r, c) = if k >= j { (k, j) } else { (j, k) };
                    let o = layout.ptr[r] + c - layout.first[r];
                    s += lval(k, i) * sigma[o];
                }
                sigma[layout.ptr[j] + i - layout.first[j]] = -s / lii;
            }
            let mut s = 0.0;
            for &k in rows {
                s += lval(k, i) * sigma[layout.ptr[k] + i - layout.first[k]];
            }
            sigma[layout.ptr[i + 1] - 1] = (1.0 / lii - s) / lii;
        }
        SelectedInverse(SymEnvelope { layout: Arc::clone(layout), values: sigma })
    }
}

/// Entries of a covariance matrix restricted to the envelope of its precision.
#[derive(Debug, Clone)]
pub struct SelectedInverse(pub SymEnvelope);

impl SelectedInverse {
    pub fn diag(&self) -> Vec<f64> {
        (0..self.0.dim()).map(|i| self.0.get(i, i)).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64, LinalgError> {
        self.0.try_get(i, j).ok_or(LinalgError::OutsideEnvelope { row: i.max(j), col: i.min(j) })
    }

    /// Variance of `sum_k a_k x_k` for a sparse coefficient vector whose
    /// support pairs all lie in the envelope.
    pub fn quad_form_sparse(&self, a: &[(usize, f64)]) -> Result<f64, LinalgError> {
        let mut total = 0.0;
        for (p, &(i, ai)) in a.iter().enumerate() {
            total += ai * ai * self.get(i, i)?;
            for &(j, aj) in &a[..p] {
                total += 2.0 * ai * aj * self.get(i, j)?;
            }
        }
        Ok(total)
    }

    pub fn as_matrix(&self) -> &SymEnvelope {
        &self.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(m: &SymEnvelope) -> DMatrix<f64> {
        let d = m.to_dense();
        let n = d.len();
        DMatrix::from_fn(n, n, |i, j| d[i][j])
    }

    /// Banded block plus two dense trailing rows, diagonally dominant.
    fn arrow_matrix(n: usize, band: usize, border: usize) -> SymEnvelope {
        let total = n + border;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + (i % 3) as f64));
            for d in 1..=band.min(i) {
                t.push((i, i - d, -0.6 / d as f64));
            }
        }
        for b in 0..border {
            let r = n + b;
            t.push((r, r, 3.0 * n as f64));
            for j in 0..r {
                t.push((r, j, 0.3 + 0.01 * ((j * 7 + b) % 5) as f64));
            }
        }
        SymEnvelope::from_triplets(total, &t)
    }

    #[test]
    fn envelope_from_positions_tracks_leftmost_column() {
        let l = EnvelopeLayout::from_positions(4, [(0, 0), (2, 0), (3, 2), (1, 3)]);
        assert_eq!(l.first(0), 0);
        assert_eq!(l.first(1), 1);
        assert_eq!(l.first(2), 0);
        assert_eq!(l.first(3), 1);
        assert_eq!(l.nnz(), 1 + 1 + 3 + 3);
        assert_eq!(l.rows_below(1), &[2, 3]);
    }

    #[test]
    fn cholesky_matches_dense_factorization() {
        let a = arrow_matrix(30, 3, 2);
        let chol = a.cholesky().unwrap();
        let d = dense(&a);
        let dc = d.clone().cholesky().unwrap();
        let ld = dc.l();
        let logdet: f64 = 2.0 * ld.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((chol.log_det() - logdet).abs() < 1e-10);

        let b: Vec<f64> = (0..a.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = chol.solve(&b);
        let xd = dc.solve(&nalgebra::DVector::from_vec(b.clone()));
        for (u, v) in x.iter().zip(xd.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn selected_inverse_matches_dense_inverse_on_envelope() {
        let a = arrow_matrix(25, 4, 3);
        let sel = a.cholesky().unwrap().selected_inverse();
        let inv = dense(&a).try_inverse().unwrap();
        let layout = a.layout();
        for i in 0..a.dim() {
            for j in layout.first(i)..=i {
                let got = sel.get(i, j).unwrap();
                assert!((got - inv[(i, j)]).abs() < 1e-12, "({i},{j}) {got} vs {}", inv[(i, j)]);
            }
        }
    }

    #[test]
    fn trace_product_and_quad_form_agree_with_dense() {
        let a = arrow_matrix(12, 2, 1);
        let mut b = a.clone();
        for (k, v) in b.values_mut().iter_mut().enumerate() {
            *v = (k as f64 * 0.1).cos();
        }
        let (da, db) = (dense(&a), dense(&b));
        let tr = (&da * &db).trace();
        assert!((a.trace_product(&b) - tr).abs() < 1e-10);
        let x: Vec<f64> = (0..a.dim()).map(|i| i as f64 - 3.0).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        assert!((a.quad_form(&x) - (xv.transpose() * &da * &xv)[(0, 0)]).abs() < 1e-8);
    }

    #[test]
    fn indefinite_matrix_reports_row() {
        let m = SymEnvelope::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (1, 1, 1.0)]);
        match m.cholesky() {
            Err(LinalgError::NotPositiveDefinite { row, pivot }) => {
                assert_eq!(row, 1);
                assert!((pivot + 3.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn add_outside_envelope_is_rejected() {
        let layout = Arc::new(EnvelopeLayout::banded(4, 1));
        let mut m = SymEnvelope::zeros(layout);
        assert!(m.add(3, 0, 1.0).is_err());
        assert!(m.add(0, 1, 1.0).is_ok());
        assert_eq!(m.get(1, 0), 1.0);
    }

    #[test]
    fn samples_are_seed_deterministic() {
        let a = arrow_matrix(10, 2, 0);
        let chol = a.cholesky().unwrap();
        let x1 = chol.sample(&mut ChaCha8Rng::seed_from_u64(3));
        let x2 = chol.sample(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(x1, x2);
    }
}
