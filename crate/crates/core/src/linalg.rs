//! Dense K×K kernels used by every item update: Cholesky factorization,
//! rank-one factor updates, triangular solves and chunked Gram accumulation.
//!
//! Everything here is a pure function of its inputs. Nothing forms an
//! explicit inverse; callers combine a factor with two triangular solves.

use crate::real::Real;
use thiserror::Error;

/// Symmetry tolerance on factorization inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite: pivot {pivot} at column {column}")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("matrix is not symmetric: entries ({row}, {col}) differ by {diff}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("length mismatch: {rows} rows but {weights} weights")]
    LengthMismatch { rows: usize, weights: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Dense row-major k×k matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T = f64> {
    k: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(k: usize) -> Self {
        assert!(k >= 1, "dimension must be at least 1");
        SquareMatrix { k, data: vec![T::ZERO; k * k] }
    }

    pub fn identity(k: usize) -> Self {
        let mut m = Self::zeros(k);
        for i in 0..k {
            m.data[i * k + i] = T::ONE;
        }
        m
    }

    /// Builds from row-major entries; `data.len()` must be `k * k`.
    pub fn from_row_major(k: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if k == 0 || data.len() != k * k {
            return Err(LinalgError::DimensionMismatch { expected: k * k, got: data.len() });
        }
        Ok(SquareMatrix { k, data })
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.k + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.k + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn to_f64(&self) -> SquareMatrix<f64> {
        SquareMatrix { k: self.k, data: self.data.iter().map(|x| x.to_f64()).collect() }
    }

    pub fn from_f64(m: &SquareMatrix<f64>) -> Self {
        SquareMatrix { k: m.k, data: m.data.iter().map(|&x| T::from_f64(x)).collect() }
    }

    pub fn transpose(&self) -> Self {
        let k = self.k;
        let mut out = Self::zeros(k);
        for i in 0..k {
            for j in 0..k {
                out.data[j * k + i] = self.data[i * k + j];
            }
        }
        out
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        let k = self.k;
        let half = T::from_f64(0.5);
        let mut out = self.clone();
        for i in 0..k {
            for j in 0..i {
                let v = (self.data[i * k + j] + self.data[j * k + i]) * half;
                out.data[i * k + j] = v;
                out.data[j * k + i] = v;
            }
        }
        out
    }

    pub fn scaled(&self, s: T) -> Self {
        SquareMatrix { k: self.k, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.k, other.k);
        SquareMatrix {
            k: self.k,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.k, other.k);
        let k = self.k;
        let mut out = Self::zeros(k);
        for i in 0..k {
            for p in 0..k {
                let a = self.data[i * k + p];
                for j in 0..k {
                    out.data[i * k + j] += a * other.data[p * k + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.k);
        (0..self.k)
            .map(|i| self.row(i).iter().zip(x).fold(T::ZERO, |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.to_f64().powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_symmetric(&self) -> Result<(), LinalgError> {
        let k = self.k;
        for i in 0..k {
            for j in 0..i {
                let diff = (self.data[i * k + j] - self.data[j * k + i]).to_f64().abs();
                if !(diff <= SYMMETRY_TOL) {
                    return Err(LinalgError::NotSymmetric { row: i, col: j, diff });
                }
            }
        }
        Ok(())
    }
}

/// Lower-triangular k×k matrix, row-major with exact zeros above the
/// diagonal. Produced by [`cholesky`], so the diagonal is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular<T = f64> {
    k: usize,
    data: Vec<T>,
}

impl<T: Real> LowerTriangular<T> {
    pub fn identity(k: usize) -> Self {
        let m = SquareMatrix::<T>::identity(k);
        LowerTriangular { k, data: m.data }
    }

    /// Takes the lower triangle of `m` (upper entries are dropped). Returns
    /// `None` unless every diagonal entry is strictly positive.
    pub fn from_lower(m: &SquareMatrix<T>) -> Option<Self> {
        let k = m.k;
        let mut data = vec![T::ZERO; k * k];
        for i in 0..k {
            if !(m.get(i, i) > T::ZERO) {
                return None;
            }
            data[i * k..i * k + i + 1].copy_from_slice(&m.data[i * k..i * k + i + 1]);
        }
        Some(LowerTriangular { k, data })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.k + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.k).map(|i| self.get(i, i)).collect()
    }

    pub fn to_f64(&self) -> LowerTriangular<f64> {
        LowerTriangular { k: self.k, data: self.data.iter().map(|x| x.to_f64()).collect() }
    }

    pub fn from_f64(l: &LowerTriangular<f64>) -> Self {
        LowerTriangular { k: l.k, data: l.data.iter().map(|&x| T::from_f64(x)).collect() }
    }

    pub fn to_square(&self) -> SquareMatrix<T> {
        SquareMatrix { k: self.k, data: self.data.clone() }
    }

    pub fn scaled(&self, s: T) -> Self {
        LowerTriangular { k: self.k, data: self.data.iter().map(|&x| x * s).collect() }
    }

    /// `L · Lᵀ`, exactly symmetric by construction.
    pub fn reconstruct(&self) -> SquareMatrix<T> {
        let k = self.k;
        let mut out = SquareMatrix::zeros(k);
        for i in 0..k {
            let ri = &self.data[i * k..i * k + i + 1];
            for j in 0..=i {
                let rj = &self.data[j * k..j * k + j + 1];
                let v = ri.iter().zip(rj).fold(T::ZERO, |acc, (&a, &b)| acc + a * b);
                out.data[i * k + j] = v;
                out.data[j * k + i] = v;
            }
        }
        out
    }

    /// `L · x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let k = self.k;
        (0..k)
            .map(|i| self.data[i * k..i * k + i + 1].iter().zip(x).fold(T::ZERO, |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// `Lᵀ · x`.
    pub fn mul_vec_transposed(&self, x: &[T]) -> Vec<T> {
        let k = self.k;
        let mut out = vec![T::ZERO; k];
        for i in 0..k {
            for j in 0..=i {
                out[j] += self.data[i * k + j] * x[i];
            }
        }
        out
    }

    /// In-place version of [`chol_rank1_update`]; `x` is consumed as scratch.
    pub fn rank1_update_in_place(&mut self, x: &mut [T]) {
        let k = self.k;
        debug_assert_eq!(x.len(), k);
        for j in 0..k {
            let xj = x[j];
            if xj == T::ZERO {
                continue;
            }
            let ljj = self.data[j * k + j];
            let r = (ljj * ljj + xj * xj).sqrt();
            let inv_l = T::ONE / ljj;
            let c = r * inv_l;
            let s = xj * inv_l;
            let inv_c = ljj / r;
            self.data[j * k + j] = r;
            for i in j + 1..k {
                let lij = (self.data[i * k + j] + s * x[i]) * inv_c;
                self.data[i * k + j] = lij;
                x[i] = c * x[i] - s * lij;
            }
        }
    }
}

/// Cholesky factor of a symmetric positive definite matrix.
///
/// The input is symmetrized before factorization; asymmetry beyond
/// [`SYMMETRY_TOL`] is rejected.
pub fn cholesky<T: Real>(a: &SquareMatrix<T>) -> Result<LowerTriangular<T>, LinalgError> {
    a.check_symmetric()?;
    let a = a.symmetrized();
    let k = a.k;
    let mut l = vec![T::ZERO; k * k];
    for j in 0..k {
        let mut d = a.data[j * k + j];
        for &v in &l[j * k..j * k + j] {
            d -= v * v;
        }
        if !(d > T::ZERO) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { column: j, pivot: d.to_f64() });
        }
        let ljj = d.sqrt();
        l[j * k + j] = ljj;
        let inv = T::ONE / ljj;
        for i in j + 1..k {
            let mut s = a.data[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = s * inv;
        }
    }
    Ok(LowerTriangular { k, data: l })
}

/// Cholesky factor of `L·Lᵀ + v·vᵀ` in O(K²).
pub fn chol_rank1_update<T: Real>(l: &LowerTriangular<T>, v: &[T]) -> LowerTriangular<T> {
    assert_eq!(v.len(), l.k, "update vector length");
    let mut out = l.clone();
    let mut x = v.to_vec();
    out.rank1_update_in_place(&mut x);
    out
}

/// Solves `L·x = b`, or `Lᵀ·x = b` when `transposed`.
pub fn tri_solve<T: Real>(l: &LowerTriangular<T>, b: &[T], transposed: bool) -> Vec<T> {
    let k = l.k;
    assert_eq!(b.len(), k, "right-hand side length");
    let mut x = b.to_vec();
    if !transposed {
        for i in 0..k {
            let row = &l.data[i * k..i * k + i];
            let mut s = x[i];
            for (&lij, &xj) in row.iter().zip(&x[..i]) {
                s -= lij * xj;
            }
            x[i] = s / l.data[i * k + i];
        }
    } else {
        for i in (0..k).rev() {
            let mut s = x[i];
            for j in i + 1..k {
                s -= l.data[j * k + i] * x[j];
            }
            x[i] = s / l.data[i * k + i];
        }
    }
    x
}

/// Partial sums `(Σ vᵢvᵢᵀ, Σ wᵢvᵢ)` over one chunk of rows. Only the lower
/// triangle of the Gram part is accumulated until [`GramPartial::finish`].
#[derive(Clone, Debug, PartialEq)]
pub struct GramPartial<T = f64> {
    k: usize,
    gram: Vec<T>,
    vec: Vec<T>,
}

impl<T: Real> GramPartial<T> {
    pub fn zeros(k: usize) -> Self {
        GramPartial { k, gram: vec![T::ZERO; k * k], vec: vec![T::ZERO; k] }
    }

    #[inline]
    pub fn push(&mut self, row: &[f64], weight: f64) {
        let k = self.k;
        debug_assert_eq!(row.len(), k);
        for i in 0..k {
            let ri = row[i];
            let g = &mut self.gram[i * k..i * k + i + 1];
            for (gij, &rj) in g.iter_mut().zip(&row[..=i]) {
                *gij = gij.add_prod(ri, rj);
            }
            self.vec[i] = self.vec[i].add_prod(weight, ri);
        }
    }

    /// `self += other`, entrywise.
    pub fn merge(&mut self, other: &Self) {
        for (a, &b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, &b) in self.vec.iter_mut().zip(&other.vec) {
            *a += b;
        }
    }

    pub fn finish(self) -> (SquareMatrix<T>, Vec<T>) {
        let k = self.k;
        let mut gram = self.gram;
        for i in 0..k {
            for j in 0..i {
                gram[j * k + i] = gram[i * k + j];
            }
        }
        (SquareMatrix { k, data: gram }, self.vec)
    }
}

/// Accumulates one chunk. Rows are taken in order.
pub fn gram_chunk<T: Real, R: AsRef<[f64]>>(k: usize, rows: &[R], weights: &[f64]) -> GramPartial<T> {
    let mut p = GramPartial::zeros(k);
    for (row, &w) in rows.iter().zip(weights) {
        p.push(row.as_ref(), w);
    }
    p
}

/// Combines chunk partials in ascending chunk order.
pub fn combine_partials<T: Real>(k: usize, partials: impl IntoIterator<Item = GramPartial<T>>) -> GramPartial<T> {
    let mut it = partials.into_iter();
    match it.next() {
        None => GramPartial::zeros(k),
        Some(mut acc) => {
            for p in it {
                acc.merge(&p);
            }
            acc
        }
    }
}

/// `(Σᵢ vᵢvᵢᵀ, Σᵢ wᵢvᵢ)` with partial sums formed per fixed chunk of
/// `chunk_size` consecutive rows and combined in ascending chunk order.
/// The result does not depend on `workers`.
pub fn gram_accumulate<T: Real, R: AsRef<[f64]> + Sync>(
    k: usize,
    rows: &[R],
    weights: &[f64],
    chunk_size: usize,
    workers: usize,
) -> Result<(SquareMatrix<T>, Vec<T>), LinalgError> {
    assert!(chunk_size >= 1, "chunk_size must be at least 1");
    if rows.len() != weights.len() {
        return Err(LinalgError::LengthMismatch { rows: rows.len(), weights: weights.len() });
    }
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != k) {
        return Err(LinalgError::DimensionMismatch { expected: k, got: bad.as_ref().len() });
    }
    let n_chunks = rows.len().div_ceil(chunk_size);
    let chunk = |c: usize| {
        let lo = c * chunk_size;
        let hi = (lo + chunk_size).min(rows.len());
        gram_chunk::<T, R>(k, &rows[lo..hi], &weights[lo..hi])
    };
    let workers = workers.max(1).min(n_chunks.max(1));
    let partials: Vec<GramPartial<T>> = if workers <= 1 {
        (0..n_chunks).map(chunk).collect()
    } else {
        let mut slots: Vec<Option<GramPartial<T>>> = vec![None; n_chunks];
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let chunk = &chunk;
                    s.spawn(move || (w..n_chunks).step_by(workers).map(|c| (c, chunk(c))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (c, p) in h.join().expect("gram worker panicked") {
                    slots[c] = Some(p);
                }
            }
        });
        slots.into_iter().map(|p| p.expect("every chunk computed")).collect()
    };
    Ok(combine_partials(k, partials).finish())
}
