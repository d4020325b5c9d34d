//! Dense linear-algebra substrate, seeded randomness, and independent
//! verification oracles (central finite differences, brute-force
//! minimization of strongly convex problems).
//!
//! Everything here is 64-bit floats with deterministic summation order; the
//! envelope subproblems elsewhere are solved to tight tolerances and need the
//! headroom. No sparse storage, no BLAS.

use crate::error::{Error, Result};
use rand_core::{RngCore, SeedableRng};

// ---------------------------------------------------------------------------
// Vector
// ---------------------------------------------------------------------------

/// Dense column vector of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Checked construction: rejects NaN/Inf entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(coord) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Vector::new",
                coord,
            });
        }
        Ok(Self { data })
    }

    /// Construction from a slice; panics on non-finite entries.
    pub fn from_slice(data: &[f64]) -> Self {
        Self::new(data.to_vec()).expect("finite entries")
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            data: (0..dim).map(f).collect(),
        }
    }

    /// Unit basis vector `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[i] = 1.0;
        v
    }

    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector::from_raw(self.data.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    /// Concatenation `(self; other)`.
    pub fn concat(&self, other: &Vector) -> Vector {
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Vector::from_raw(data)
    }

    pub fn distance(&self, other: &Vector) -> f64 {
        self.sub(other).norm()
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Checked construction: rejects NaN/Inf entries and bad shapes.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "Matrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(coord) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Matrix::new",
                coord,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::new(r, c, data).expect("finite entries")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Dense product `A x` with fixed summation order.
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if self.cols != x.dim() {
            return Err(Error::MatVecDim {
                rows: self.rows,
                cols: self.cols,
                dim: x.dim(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.as_slice()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(Vector::from_raw(out))
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Spectral norm `|A|_{2,2}` by power iteration on `A^T A`.
    ///
    /// Deterministic start vector; 300 iterations are plenty at desk scale.
    pub fn spectral_norm(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let at = self.transpose();
        let mut v = Vector::from_raw(vec![1.0 / (self.cols as f64).sqrt(); self.cols]);
        let mut sigma2 = 0.0;
        for _ in 0..300 {
            let w = at.matvec(&self.matvec(&v).unwrap()).unwrap();
            let n = w.norm();
            if n == 0.0 {
                return 0.0;
            }
            sigma2 = n;
            v = w.scale(1.0 / n);
        }
        sigma2.sqrt()
    }

    /// Solve `A x = b` by LU with partial pivoting.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        assert_eq!(self.rows, self.cols, "solve needs a square matrix");
        assert_eq!(self.rows, b.dim(), "solve rhs dim");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x: Vec<f64> = b.as_slice().to_vec();
        for k in 0..n {
            // pivot
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in (k + 1)..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularSystem);
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                x.swap(k, p);
            }
            let piv = a[k * n + k];
            for i in (k + 1)..n {
                let m = a[i * n + k] / piv;
                if m == 0.0 {
                    continue;
                }
                a[i * n + k] = 0.0;
                for j in (k + 1)..n {
                    a[i * n + j] -= m * a[k * n + j];
                }
                x[i] -= m * x[k];
            }
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= a[i * n + j] * x[j];
            }
            x[i] = acc / a[i * n + i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(Vector::from_raw(x))
    }
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// Seeded counter-based generator (ChaCha8 core): identical seeds yield
/// identical streams across platforms. Streams can be split by id so that
/// independent consumers (initialization, shuffling, noise) never interleave.
#[derive(Debug, Clone)]
pub struct SeedRng {
    inner: rand_chacha::ChaCha8Rng,
    seed: u64,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream with the same seed. Stream 0 is the default stream.
    pub fn stream(&self, id: u64) -> SeedRng {
        let mut inner = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(id);
        SeedRng { inner, seed: self.seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller; fixed arithmetic, platform independent.
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                let v = self.uniform();
                return (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
            }
        }
    }

    pub fn normal_vector(&mut self, dim: usize) -> Vector {
        Vector::from_raw((0..dim).map(|_| self.normal()).collect())
    }

    pub fn uniform_vector(&mut self, dim: usize, lo: f64, hi: f64) -> Vector {
        Vector::from_raw((0..dim).map(|_| self.uniform_in(lo, hi)).collect())
    }

    /// Uniform integer in `[0, n)` by rejection (unbiased).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Random direction of exactly the given norm.
    pub fn direction(&mut self, dim: usize, norm: f64) -> Vector {
        loop {
            let v = self.normal_vector(dim);
            let n = v.norm();
            if n > 1e-12 {
                return v.scale(norm / n);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiable scalar oracles
// ---------------------------------------------------------------------------

/// A scalar function with a gradient oracle.
pub trait Differentiable {
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
}

/// Adapter over a pair of closures.
pub struct FnOracle<F, G>
where
    F: Fn(&Vector) -> f64,
    G: Fn(&Vector) -> Vector,
{
    pub value: F,
    pub gradient: G,
}

impl<F, G> Differentiable for FnOracle<F, G>
where
    F: Fn(&Vector) -> f64,
    G: Fn(&Vector) -> Vector,
{
    fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (self.gradient)(x)
    }
}

impl<T: Differentiable + ?Sized> Differentiable for &T {
    fn value(&self, x: &Vector) -> f64 {
        (*self).value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (*self).gradient(x)
    }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Default central-difference step: `1e-5 * max(1, |x|_inf)`.
pub fn fd_step(x: &Vector) -> f64 {
    1e-5 * x.norm_inf().max(1.0)
}

/// Central finite-difference gradient `(f(x+h e_i) - f(x-h e_i)) / (2h)`.
///
/// Errors if `f` returns a non-finite value, naming the coordinate being
/// perturbed.
pub fn finite_difference_gradient(
    f: &mut dyn FnMut(&Vector) -> f64,
    x: &Vector,
    h: f64,
) -> Result<Vector> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut out = vec![0.0; x.dim()];
    let mut probe = x.clone();
    for i in 0..x.dim() {
        let xi = probe[i];
        probe[i] = xi + h;
        let fp = f(&probe);
        probe[i] = xi - h;
        let fm = f(&probe);
        probe[i] = xi;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_difference_gradient",
                coord: i,
            });
        }
        out[i] = (fp - fm) / (2.0 * h);
    }
    Ok(Vector::from_raw(out))
}

/// Largest relative deviation between two gradient vectors,
/// `|a - b| / max(1e-12, |b|)`.
pub fn relative_error(a: &Vector, b: &Vector) -> f64 {
    a.sub(b).norm() / b.norm().max(1e-12)
}

// ---------------------------------------------------------------------------
// Brute-force minimization (independent oracle)
// ---------------------------------------------------------------------------

/// Result of [`brute_force_argmin`].
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub point: Vector,
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when the budget ran out before the 1e-8 stationarity target.
    pub converged: bool,
}

/// Long-horizon backtracking gradient descent, the designated independent
/// oracle for envelope ground-truth values. Caller asserts strong convexity
/// on the relevant region.
///
/// Stops at gradient norm `<= 1e-8` or after `budget` iterations (flagged).
/// Errors on divergence: the objective increasing over 100 consecutive
/// iterations.
pub fn brute_force_argmin(
    f: &dyn Differentiable,
    x0: &Vector,
    budget: usize,
) -> Result<BruteForce> {
    const TOL: f64 = 1e-8;
    let mut x = x0.clone();
    let mut fx = f.value(&x);
    let mut step = 1.0;
    let mut diverging = 0usize;
    let mut stalled = 0usize;
    let mut trace: Vec<f64> = vec![fx];
    for k in 0..budget {
        let g = f.gradient(&x);
        let gn = g.norm();
        if gn <= TOL {
            return Ok(BruteForce {
                point: x,
                grad_norm: gn,
                iterations: k,
                converged: true,
            });
        }
        // Armijo backtracking; near the value-resolution floor, fall back to
        // accepting strict gradient-norm contractions.
        let noise = 4.0 * f64::EPSILON * (1.0 + fx.abs());
        let mut s = step;
        let mut accepted = false;
        let mut saw_finite = false;
        for _ in 0..80 {
            if s * gn <= f64::EPSILON * (x.norm() + f64::EPSILON) {
                break; // step below representational resolution
            }
            let cand = x.axpy(-s, &g);
            let fc = f.value(&cand);
            if fc.is_finite() {
                saw_finite = true;
                if fc <= fx - 1e-4 * s * gn * gn {
                    x = cand;
                    fx = fc;
                    accepted = true;
                    break;
                }
                if 1e-4 * s * gn * gn <= noise && fc <= fx + noise {
                    let gc = f.gradient(&cand);
                    if gc.dot(&gc) <= gn * gn * (1.0 - 1e-3) {
                        x = cand;
                        fx = fc;
                        accepted = true;
                        break;
                    }
                }
            }
            s *= 0.5;
        }
        trace.push(fx);
        if trace.len() > 8 {
            trace.remove(0);
        }
        if accepted {
            diverging = 0;
            stalled = 0;
            step = (s * 2.0).min(1e8);
        } else if saw_finite {
            // at the floating-point floor: stop early, flagged
            stalled += 1;
            if stalled >= 100 {
                return Ok(BruteForce {
                    point: x,
                    grad_norm: gn,
                    iterations: k,
                    converged: false,
                });
            }
        } else {
            diverging += 1;
            if diverging >= 100 {
                return Err(Error::Divergence {
                    context: "brute_force_argmin",
                    trace,
                });
            }
        }
    }
    let g = f.gradient(&x);
    Ok(BruteForce {
        grad_norm: g.norm(),
        point: x,
        iterations: budget,
        converged: false,
    })
}
