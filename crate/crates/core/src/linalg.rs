//! Banded linear algebra: LU with partial pivoting and a symmetric banded
//! eigensolver (inertia bisection + inverse iteration).

use num_complex::Complex64;
use std::ops::{Add, Div, Mul, Sub};

use crate::error::{LabError, Result};

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn zero() -> Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage reserves `kl` extra super-diagonals for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![T::zero(); n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j + self.kl < i || j > i + self.kl + self.ku {
            T::zero()
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "({i}, {j}) outside the declared band"
        );
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku + 1).min(self.n);
                (lo..hi).fold(T::zero(), |acc, j| acc + self.get(i, j) * x[j])
            })
            .collect()
    }

    /// LU factorization with partial pivoting, consuming the matrix.
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let n = self.n;
        let span = self.kl + self.ku;
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).modulus();
            for i in k + 1..=last_row {
                let m = self.get(i, k).modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(LabError::Singular { row: k });
            }
            pivots[k] = p;
            let last_col = (k + span).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let si = self.slot(i, k);
                let l = self.data[si] / pivot;
                self.data[si] = l;
                for j in k + 1..=last_col {
                    let sij = self.slot(i, j);
                    let skj = self.slot(k, j);
                    self.data[sij] = self.data[sij] - l * self.data[skj];
                }
            }
        }
        Ok(BandLu { m: self, pivots })
    }
}

/// Factorized band matrix; reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    m: BandMatrix<T>,
    pivots: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    pub fn solve_in_place(&self, b: &mut [T]) {
        let m = &self.m;
        let n = m.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + m.kl).min(n - 1) {
                b[i] = b[i] - m.data[m.slot(i, k)] * bk;
            }
        }
        let span = m.kl + m.ku;
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + span).min(n - 1) {
                acc = acc - m.data[m.slot(i, j)] * b[j];
            }
            b[i] = acc / m.data[m.slot(i, i)];
        }
    }
}

/// Real symmetric band matrix given by its diagonals `bands[d][i] = A[i][i+d]`.
#[derive(Debug, Clone)]
pub struct SymmetricBand {
    bands: Vec<Vec<f64>>,
}

impl SymmetricBand {
    pub fn new(bands: Vec<Vec<f64>>) -> Self {
        let n = bands[0].len();
        for (d, b) in bands.iter().enumerate() {
            assert_eq!(b.len(), n - d, "band {d} has wrong length");
        }
        SymmetricBand { bands }
    }

    pub fn dim(&self) -> usize {
        self.bands[0].len()
    }

    pub fn bandwidth(&self) -> usize {
        self.bands.len() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let d = j - i;
        if d > self.bandwidth() {
            0.0
        } else {
            self.bands[d][i]
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let b = self.bandwidth();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(b);
                let hi = (i + b + 1).min(n);
                (lo..hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// `A - shift*I` as a general band matrix.
    pub fn shifted(&self, shift: f64) -> BandMatrix<f64> {
        let n = self.dim();
        let b = self.bandwidth();
        let mut m = BandMatrix::zeros(n, b, b);
        for i in 0..n {
            for j in i.saturating_sub(b)..(i + b + 1).min(n) {
                let v = self.get(i, j) - if i == j { shift } else { 0.0 };
                m.set(i, j, v);
            }
        }
        m
    }

    /// Number of eigenvalues strictly below `sigma` (Sylvester inertia of LDL^T).
    pub fn count_below(&self, sigma: f64) -> usize {
        let n = self.dim();
        let b = self.bandwidth();
        let scale = self.gershgorin().1.abs().max(1.0);
        let tiny = f64::EPSILON * scale * 1e-3;
        // l[i][k] holds L[i][i-1-k]
        let mut l = vec![vec![0.0; b]; n];
        let mut d = vec![0.0; n];
        let mut negatives = 0;
        for j in 0..n {
            let mut dj = self.get(j, j) - sigma;
            for k in j.saturating_sub(b)..j {
                let ljk = l[j][j - 1 - k];
                dj -= ljk * ljk * d[k];
            }
            if dj.abs() < tiny {
                dj = -tiny;
            }
            d[j] = dj;
            if dj < 0.0 {
                negatives += 1;
            }
            for i in j + 1..(j + b + 1).min(n) {
                let mut v = self.get(i, j);
                for k in i.saturating_sub(b)..j {
                    v -= l[i][i - 1 - k] * l[j][j - 1 - k] * d[k];
                }
                l[i][i - 1 - j] = v / dj;
            }
        }
        negatives
    }

    /// Gershgorin bounds `(lo, hi)` on the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.dim();
        let b = self.bandwidth();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r: f64 = (i.saturating_sub(b)..(i + b + 1).min(n))
                .filter(|&j| j != i)
                .map(|j| self.get(i, j).abs())
                .sum();
            lo = lo.min(self.get(i, i) - r);
            hi = hi.max(self.get(i, i) + r);
        }
        (lo, hi)
    }

    /// The `index`-th smallest eigenvalue by bisection on the inertia count.
    pub fn eigenvalue(&self, index: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let tol = 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= tol || mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Lowest `k` eigenpairs, eigenvalues ascending, eigenvectors with unit Euclidean norm.
    pub fn lowest_eigenpairs(&self, k: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        let n = self.dim();
        let (glo, ghi) = self.gershgorin();
        let norm = glo.abs().max(ghi.abs()).max(1.0);
        let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
        const ITERATIONS: usize = 8;
        for state in 0..k {
            let lambda = self.eigenvalue(state);
            let shift = lambda + 1e3 * f64::EPSILON * norm;
            let lu = self.shifted(shift).factor()?;
            let mut v: Vec<f64> = (0..n)
                .map(|j| 1.0 + 0.37 * ((j as f64) * 0.61803 + state as f64).sin())
                .collect();
            let mut residual = f64::INFINITY;
            for _ in 0..ITERATIONS {
                lu.solve_in_place(&mut v);
                for (_, w) in &pairs {
                    let c: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(w).for_each(|(a, b)| *a -= c * b);
                }
                let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if !(nv > 0.0 && nv.is_finite()) {
                    break;
                }
                v.iter_mut().for_each(|a| *a /= nv);
                let hv = self.matvec(&v);
                let rq: f64 = hv.iter().zip(&v).map(|(a, b)| a * b).sum();
                residual = hv
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - rq * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if residual <= 1e-10 * norm {
                    break;
                }
            }
            if !(residual <= 1e-8 * norm) {
                return Err(LabError::Convergence {
                    state,
                    iterations: ITERATIONS,
                    residual,
                });
            }
            let hv = self.matvec(&v);
            let rq: f64 = hv.iter().zip(&v).map(|(a, b)| a * b).sum();
            pairs.push((rq, v));
        }
        Ok(pairs)
    }
}
