//! Orthonormal DCT-II sensing operator, spectral vectors and k-term
//! sparsification.
//!
//! The sensing operator `A` is the synthesis transform (inverse DCT), so an
//! observation is `y = A x̂` and the analysis transform `F = A*` maps a
//! signal back to its spectral coefficients. A row subset of `A` gives a
//! partial-DCT measurement operator; the full operator is square and
//! orthonormal.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

macro_rules! vector_newtype {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            /// Wraps `values`, rejecting empty or non-finite input.
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.is_empty() {
                    return Err(Error::InvalidParameter(concat!(stringify!($name), " must be non-empty").into()));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(i));
                }
                Ok(Self(values))
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn l1(&self) -> f64 {
                self.0.iter().map(|v| v.abs()).sum()
            }

            pub fn l2(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn linf(&self) -> f64 {
                self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
            }

            /// Exact count of nonzero entries.
            pub fn nnz(&self) -> usize {
                self.0.iter().filter(|v| **v != 0.0).count()
            }

            /// Number of entries with magnitude strictly above `threshold`.
            pub fn count_above(&self, threshold: f64) -> usize {
                self.0.iter().filter(|v| v.abs() > threshold).count()
            }

            pub fn dot(&self, other: &Self) -> Result<f64> {
                check_len(self.len(), other.len())?;
                Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
            }

            pub fn add(&self, other: &Self) -> Result<Self> {
                check_len(self.len(), other.len())?;
                Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
            }

            pub fn sub(&self, other: &Self) -> Result<Self> {
                check_len(self.len(), other.len())?;
                Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
            }

            pub fn scale(&self, factor: f64) -> Self {
                Self(self.0.iter().map(|v| v * factor).collect())
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }
    };
}

vector_newtype!(Signal);
vector_newtype!(SpectralVector);

impl SpectralVector {
    /// Indices of the nonzero entries, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Signal sparsity `k` and attack sparsity `tau` for an ambient dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityBudget {
    pub k: usize,
    pub tau: usize,
}

impl SparsityBudget {
    pub fn new(k: usize, tau: usize, n: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidParameter(format!("k = {k} must satisfy 1 <= k <= {n}")));
        }
        if tau > n {
            return Err(Error::InvalidParameter(format!("tau = {tau} exceeds N = {n}")));
        }
        Ok(Self { k, tau })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    OrthonormalDct2,
}

/// Synthesis operator `A = F⁻¹` for the orthonormal DCT-II, optionally
/// restricted to a subset of its rows. Cheap to clone; the matrix is shared.
#[derive(Clone)]
pub struct SensingOperator {
    n: usize,
    rows: Arc<[usize]>,
    full: bool,
    kind: TransformKind,
    // column-major: atom j sampled at the kept rows occupies
    // `atoms[j * m..(j + 1) * m]`, so sparse synthesis streams only the
    // columns it needs
    atoms: Arc<[f64]>,
}

impl std::fmt::Debug for SensingOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SensingOperator")
            .field("n", &self.n)
            .field("m", &self.rows.len())
            .field("full", &self.full)
            .field("kind", &self.kind)
            .finish()
    }
}

/// Entry `(i, j)` of the synthesis matrix: sample `i` of DCT-II atom `j`.
fn dct_atom(n: usize, sample: usize, freq: usize) -> f64 {
    let scale = if freq == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    scale * (PI * (2 * sample + 1) as f64 * freq as f64 / (2 * n) as f64).cos()
}

impl SensingOperator {
    /// Full square orthonormal DCT-II operator of size `n`.
    pub fn dct(n: usize) -> Result<Self> {
        Self::build(n, (0..n).collect())
    }

    /// Partial DCT: keeps only the listed rows (signal samples) of `A`.
    pub fn dct_rows(n: usize, rows: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; n];
        for &r in &rows {
            if r >= n {
                return Err(Error::InvalidParameter(format!("row {r} out of range for N = {n}")));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(Error::InvalidParameter(format!("duplicate row {r}")));
            }
        }
        if rows.is_empty() {
            return Err(Error::InvalidParameter("row subset must be non-empty".into()));
        }
        Self::build(n, rows)
    }

    fn build(n: usize, rows: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("N must be positive".into()));
        }
        let full = rows.len() == n && rows.iter().enumerate().all(|(i, &r)| i == r);
        let mut atoms = Vec::with_capacity(rows.len() * n);
        for j in 0..n {
            atoms.extend(rows.iter().map(|&r| dct_atom(n, r, j)));
        }
        Ok(Self {
            n,
            rows: rows.into(),
            full,
            kind: TransformKind::OrthonormalDct2,
            atoms: atoms.into(),
        })
    }

    /// Column count (ambient spectral dimension N).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Row count (number of measurements).
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.atoms[col * self.m() + row]
    }

    fn atom(&self, j: usize) -> &[f64] {
        let m = self.m();
        &self.atoms[j * m..(j + 1) * m]
    }

    /// `A c`, restricted to the operator's rows. Zero coefficients are
    /// skipped, so a k-sparse input costs O(k m).
    pub fn synthesize(&self, c: &SpectralVector) -> Result<Signal> {
        check_len(self.n, c.len())?;
        let mut out = vec![0.0; self.m()];
        for (j, &cj) in c.as_slice().iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.atom(j)) {
                *o += a * cj;
            }
        }
        Ok(Signal::from_vec_unchecked(out))
    }

    /// Adjoint `A* s`. For the full operator this is the forward DCT `F s`.
    pub fn analyze(&self, s: &Signal) -> Result<SpectralVector> {
        check_len(self.m(), s.len())?;
        let s = s.as_slice();
        let out = (0..self.n).map(|j| dot(self.atom(j), s)).collect();
        Ok(SpectralVector::from_vec_unchecked(out))
    }

    /// Dense `m × |cols|` submatrix `A_R` on the given columns.
    pub fn column_submatrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), cols.len(), |i, j| self.entry(i, cols[j]))
    }
}

/// Inner product over independent lanes, so the reduction vectorizes
/// instead of waiting on one accumulator. The summation order is fixed.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (a_head, a_tail) = a.split_at(a.len() - a.len() % LANES);
    let (b_head, b_tail) = b.split_at(a_head.len());
    for (x, y) in a_head.chunks_exact(LANES).zip(b_head.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = a_tail.iter().zip(b_tail).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// Magnitude-descending order, lowest index first among equal magnitudes.
fn magnitude_order(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Indices of the `k` largest-magnitude entries (ties keep the lower index),
/// returned ascending.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let order = magnitude_order(values);
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &order);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Best k-term approximation `x̂_{h(k)}`: keeps the `k` largest magnitudes.
pub fn top_k(c: &SpectralVector, k: usize) -> SpectralVector {
    let mut out = vec![0.0; c.len()];
    for i in top_k_indices(c.as_slice(), k) {
        out[i] = c[i];
    }
    SpectralVector::from_vec_unchecked(out)
}

/// `σ_k(c)₁ = ‖c − top_k(c, k)‖₁`.
pub fn best_k_term_error(c: &SpectralVector, k: usize) -> f64 {
    let kept = top_k_indices(c.as_slice(), k);
    let mut keep = vec![false; c.len()];
    for i in kept {
        keep[i] = true;
    }
    c.as_slice()
        .iter()
        .zip(&keep)
        .filter(|(_, kept)| !**kept)
        .map(|(v, _)| v.abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_matrix(n: usize) -> Vec<Vec<f64>> {
        // F[k][i] = s_k cos(pi (2i+1) k / 2N), written out independently
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|i| {
                        let s = if k == 0 { 1.0 / (n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                        s * ((2 * i + 1) as f64 * k as f64 * PI / (2.0 * n as f64)).cos()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn analyze_zero_is_zero() {
        let op = SensingOperator::dct(8).unwrap();
        let c = op.analyze(&Signal::zeros(8)).unwrap();
        assert!(c.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn analyze_constant_matches_matrix_oracle() {
        let op = SensingOperator::dct(8).unwrap();
        let s = Signal::new(vec![1.0; 8]).unwrap();
        let c = op.analyze(&s).unwrap();
        let f = dense_matrix(8);
        for k in 0..8 {
            let oracle: f64 = f[k].iter().sum();
            assert!((c[k] - oracle).abs() < 1e-12);
        }
        assert!((c[0] - 8f64.sqrt()).abs() < 1e-12);
        assert!(c.as_slice()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn first_atom_is_flat() {
        let op = SensingOperator::dct(4).unwrap();
        let mut e0 = SpectralVector::zeros(4);
        e0.as_mut_slice()[0] = 1.0;
        let s = op.synthesize(&e0).unwrap();
        for v in s.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert!(op.synthesize(&SpectralVector::zeros(4)).unwrap().l2() == 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let op = SensingOperator::dct(8).unwrap();
        let err = op.analyze(&Signal::zeros(7)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 8, found: 7 });
        assert!(op.synthesize(&SpectralVector::zeros(9)).is_err());
    }

    #[test]
    fn partial_rows_reject_duplicates() {
        assert!(SensingOperator::dct_rows(8, vec![0, 3, 3]).is_err());
        assert!(SensingOperator::dct_rows(8, vec![0, 8]).is_err());
        let op = SensingOperator::dct_rows(8, vec![5, 1, 2]).unwrap();
        assert_eq!(op.m(), 3);
        assert!(!op.is_full());
        assert!(SensingOperator::dct(8).unwrap().is_full());
    }

    #[test]
    fn top_k_examples() {
        let c = SpectralVector::new(vec![5.0, -3.0, 1.0, 0.0]).unwrap();
        assert_eq!(top_k(&c, 2).as_slice(), &[5.0, -3.0, 0.0, 0.0]);
        assert_eq!(top_k(&c, 0).as_slice(), &[0.0; 4]);
        let sparse = SpectralVector::new(vec![0.0, 2.0, 0.0, -1.0]).unwrap();
        assert_eq!(top_k(&sparse, 2), sparse);
    }

    #[test]
    fn top_k_tie_keeps_lowest_index() {
        let c = SpectralVector::new(vec![2.0, -2.0, 1.0]).unwrap();
        let kept = top_k(&c, 1);
        assert_eq!(kept.as_slice(), &[2.0, 0.0, 0.0]);
        // both single-entry candidates leave the same l2 error
        let alt = SpectralVector::new(vec![0.0, -2.0, 0.0]).unwrap();
        let e1 = c.sub(&kept).unwrap().l2();
        let e2 = c.sub(&alt).unwrap().l2();
        assert_eq!(e1, e2);
    }

    #[test]
    fn best_k_term_error_examples() {
        let c = SpectralVector::new(vec![5.0, -3.0, 1.0, 0.5]).unwrap();
        assert!((best_k_term_error(&c, 2) - 1.5).abs() < 1e-15);
        let sparse = SpectralVector::new(vec![0.0, 4.0, 0.0, -1.0]).unwrap();
        assert_eq!(best_k_term_error(&sparse, 2), 0.0);
        assert_eq!(best_k_term_error(&c, 4), 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(Signal::new(vec![0.0, f64::NAN]).unwrap_err(), Error::NonFinite(1));
        assert!(SpectralVector::new(vec![]).is_err());
    }

    #[test]
    fn sparsity_budget_bounds() {
        assert!(SparsityBudget::new(0, 0, 8).is_err());
        assert!(SparsityBudget::new(9, 0, 8).is_err());
        assert!(SparsityBudget::new(8, 9, 8).is_err());
        assert!(SparsityBudget::new(8, 8, 8).is_ok());
    }
}
