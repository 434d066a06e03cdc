//! Dense complex kernels: Hermitian eigendecomposition (cyclic Jacobi),
//! Cholesky factorization, triangular inversion and blockwise inverse square
//! roots.
//!
//! Matrices in this crate are small (one row per microphone), so everything
//! is stored row-major in a flat `Vec` without any blocking.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::NodeLayout;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Relative asymmetry accepted (and symmetrized away) by
/// [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Jacobi stops once the off-diagonal Frobenius norm is below this fraction
/// of the matrix norm.
pub const EIGEN_TOL: f64 = 1e-13;
/// Cholesky pivots at or below `DEFINITENESS_TOL * trace / dim` are rejected.
pub const DEFINITENESS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Fills in row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(CMatrix {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = CMatrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// `scale * u v^H`
    pub fn outer(u: &[Complex64], v: &[Complex64], scale: f64) -> Self {
        CMatrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj() * scale)
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

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `||A - A^H||_F / max(1, ||A||_F)`
    pub fn relative_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt() / self.frobenius_norm().max(1.0)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square complex matrix equal to its conjugate transpose.
///
/// Construction symmetrizes inputs whose relative asymmetry is within
/// [`HERMITIAN_TOL`] and rejects the rest, so downstream code may rely on
/// exact Hermitian symmetry and a real diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMatrix", into = "CMatrix")]
pub struct HermitianMatrix(CMatrix);

impl TryFrom<CMatrix> for HermitianMatrix {
    type Error = Error;

    fn try_from(m: CMatrix) -> Result<Self> {
        HermitianMatrix::new(m)
    }
}

impl From<HermitianMatrix> for CMatrix {
    fn from(h: HermitianMatrix) -> Self {
        h.0
    }
}

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        let asymmetry = m.relative_asymmetry();
        if !(asymmetry <= HERMITIAN_TOL) {
            return Err(Error::NotHermitian { asymmetry });
        }
        Ok(HermitianMatrix::symmetrize(m))
    }

    /// `(A + A^H) / 2` without any tolerance check.
    pub fn symmetrize(m: CMatrix) -> Self {
        assert!(m.is_square());
        let n = m.rows;
        let mut out = m;
        for i in 0..n {
            out[(i, i)] = Complex64::new(out[(i, i)].re, 0.0);
            for j in i + 1..n {
                let avg = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = avg;
                out[(j, i)] = avg.conj();
            }
        }
        HermitianMatrix(out)
    }

    pub fn zeros(n: usize) -> Self {
        HermitianMatrix(CMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix(CMatrix::identity(n))
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        HermitianMatrix(CMatrix::from_real_diag(diag))
    }

    /// `scale * h h^H`
    pub fn outer(h: &[Complex64], scale: f64) -> Self {
        HermitianMatrix::symmetrize(CMatrix::outer(h, h, scale))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn add(&self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(self.0.add(&rhs.0))
    }

    pub fn sub(&self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(self.0.sub(&rhs.0))
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        HermitianMatrix(self.0.scale(s))
    }

    /// `A + load * I`
    pub fn add_diagonal(&self, load: f64) -> HermitianMatrix {
        let mut m = self.0.clone();
        for i in 0..m.rows {
            m[(i, i)].re += load;
        }
        HermitianMatrix(m)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.0.mul_vec(v)
    }

    /// `B A B^H`, symmetrized.
    pub fn congruence(&self, b: &CMatrix) -> HermitianMatrix {
        HermitianMatrix::symmetrize(b.matmul(&self.0).matmul(&b.adjoint()))
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, idx: (usize, usize)) -> &Complex64 {
        &self.0[idx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit norm; largest-magnitude entry real and non-negative.
    pub vector: Vec<Complex64>,
}

/// Full spectrum, eigenvalues in descending order, eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
    pub sweeps: usize,
}

impl Eigen {
    pub fn pair(&self, i: usize) -> EigenPair {
        let mut vector = self.vectors.column(i);
        fix_phase(&mut vector);
        EigenPair {
            value: self.values[i],
            vector,
        }
    }
}

/// Rotates `v` so its largest-magnitude entry (lowest index on ties) is real
/// and non-negative.
pub fn fix_phase(v: &mut [Complex64]) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best_mag {
            best = i;
            best_mag = m;
        }
    }
    if best_mag <= 0.0 {
        return;
    }
    let pivot = v[best];
    let phase = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z *= phase;
    }
    v[best] = Complex64::new(pivot.norm(), 0.0);
}

fn off_diagonal_norm(a: &CMatrix) -> f64 {
    let n = a.rows;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix.
///
/// Each rotation first removes the phase of `a[p][q]` with a diagonal unitary
/// and then applies a real Givens rotation, so the pair `(p, q)` is zeroed
/// exactly. At most `100 * dim` sweeps are performed.
pub fn eigh(a: &HermitianMatrix) -> Result<Eigen> {
    let n = a.dim();
    let mut m = a.as_matrix().clone();
    let mut v = CMatrix::identity(n);
    let norm = m.frobenius_norm();
    let target = EIGEN_TOL * norm;
    let max_sweeps = 100 * n.max(1);

    let mut sweeps = 0;
    let mut off = off_diagonal_norm(&m);
    while off > target {
        if sweeps == max_sweeps {
            return Err(Error::EigenNoConvergence {
                residual: off / norm.max(f64::MIN_POSITIVE),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
        off = off_diagonal_norm(&m);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].re.total_cmp(&m[(i, i)].re).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(Eigen {
        values,
        vectors,
        sweeps,
    })
}

fn rotate(m: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    // drop rotations that can no longer change either diagonal entry
    if r < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        m[(p, q)] = ZERO;
        m[(q, p)] = ZERO;
        return;
    }
    let phase = apq.conj() / r;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // U restricted to (p, q): [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
    let upp = Complex64::new(c, 0.0);
    let upq = Complex64::new(s, 0.0);
    let uqp = phase * (-s);
    let uqq = phase * c;

    let n = m.rows;
    for k in 0..n {
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        m[(k, p)] = akp * upp + akq * uqp;
        m[(k, q)] = akp * upq + akq * uqq;
    }
    for k in 0..n {
        let apk = m[(p, k)];
        let aqk = m[(q, k)];
        m[(p, k)] = upp.conj() * apk + uqp.conj() * aqk;
        m[(q, k)] = upq.conj() * apk + uqq.conj() * aqk;
    }
    m[(p, q)] = ZERO;
    m[(q, p)] = ZERO;
    m[(p, p)].im = 0.0;
    m[(q, q)].im = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * upp + vkq * uqp;
        v[(k, q)] = vkp * upq + vkq * uqq;
    }
}

/// Eigenpair with the largest eigenvalue, phase-normalized by [`fix_phase`].
pub fn principal_eigenpair(a: &HermitianMatrix) -> Result<EigenPair> {
    if a.dim() == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    Ok(eigh(a)?.pair(0))
}

/// Lower-triangular `L` with real positive diagonal and `A = L L^H`.
pub fn cholesky(a: &HermitianMatrix) -> Result<CMatrix> {
    let n = a.dim();
    let tol = DEFINITENESS_TOL * (a.trace() / n.max(1) as f64).max(0.0);
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > tol) {
            return Err(Error::NotPositiveDefinite {
                row: j,
                pivot: d,
                node: None,
            });
        }
        let ljj = d.sqrt();
        l[(j, j)] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Cholesky factor, retried once after adding `delta * trace / dim * I` when
/// the first attempt fails the definiteness check. Returns the factor and
/// whether loading was applied.
pub fn cholesky_with_loading(a: &HermitianMatrix, delta: f64) -> Result<(CMatrix, bool)> {
    match cholesky(a) {
        Ok(l) => Ok((l, false)),
        Err(Error::NotPositiveDefinite { .. }) if delta > 0.0 => {
            let load = delta * a.trace() / a.dim().max(1) as f64;
            let l = cholesky(&a.add_diagonal(load))?;
            Ok((l, true))
        }
        Err(e) => Err(e),
    }
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn lower_inverse(l: &CMatrix) -> CMatrix {
    let n = l.rows();
    let mut inv = CMatrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { ONE } else { ZERO };
            for k in c..i {
                s -= l[(i, k)] * inv[(k, c)];
            }
            inv[(i, c)] = s / l[(i, i)];
        }
    }
    inv
}

/// Solves `L L^H x = b`.
pub fn cholesky_solve(l: &CMatrix, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.rows();
    let mut y = vec![ZERO; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![ZERO; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)].conj();
    }
    x
}

/// Copies the node-wise diagonal blocks of `a` and zeroes everything else.
pub fn block_diagonal_part(a: &CMatrix, layout: &NodeLayout) -> CMatrix {
    let mut out = CMatrix::zeros(a.rows(), a.cols());
    for (start, len) in layout.block_spans() {
        for i in start..start + len {
            for j in start..start + len {
                out[(i, j)] = a[(i, j)];
            }
        }
    }
    out
}

fn extract_block(a: &CMatrix, start: usize, len: usize) -> CMatrix {
    CMatrix::from_fn(len, len, |i, j| a[(start + i, start + j)])
}

fn place_block(dst: &mut CMatrix, block: &CMatrix, start: usize) {
    for i in 0..block.rows() {
        for j in 0..block.cols() {
            dst[(start + i, start + j)] = block[(i, j)];
        }
    }
}

fn check_layout_dim(a: &HermitianMatrix, layout: &NodeLayout) -> Result<()> {
    if a.dim() != layout.num_mics() {
        return Err(Error::Shape(format!(
            "matrix dimension {} does not match layout with {} microphones",
            a.dim(),
            layout.num_mics()
        )));
    }
    Ok(())
}

/// Block-diagonal square root `L_blk` of the diagonal-block part of `a`,
/// one Cholesky factor per node (with optional one-shot loading per block).
pub fn block_cholesky(a: &HermitianMatrix, layout: &NodeLayout, delta: f64) -> Result<CMatrix> {
    check_layout_dim(a, layout)?;
    let mut out = CMatrix::zeros(a.dim(), a.dim());
    for (node, (start, len)) in layout.block_spans().into_iter().enumerate() {
        let block = HermitianMatrix::symmetrize(extract_block(a.as_matrix(), start, len));
        let (l, _) = cholesky_with_loading(&block, delta).map_err(|e| match e {
            Error::NotPositiveDefinite { row, pivot, .. } => Error::NotPositiveDefinite {
                row: start + row,
                pivot,
                node: Some(node),
            },
            other => other,
        })?;
        place_block(&mut out, &l, start);
    }
    Ok(out)
}

/// Block-diagonal inverse square root: `L_n^{-1}` on each node's diagonal
/// block, zeros elsewhere. Off-diagonal blocks of `rv` are ignored.
pub fn block_inverse_sqrt(rv: &HermitianMatrix, layout: &NodeLayout) -> Result<CMatrix> {
    let l = block_cholesky(rv, layout, 0.0)?;
    Ok(block_lower_inverse(&l, layout))
}

pub(crate) fn block_lower_inverse(l: &CMatrix, layout: &NodeLayout) -> CMatrix {
    let mut out = CMatrix::zeros(l.rows(), l.cols());
    for (start, len) in layout.block_spans() {
        let inv = lower_inverse(&extract_block(l, start, len));
        place_block(&mut out, &inv, start);
    }
    out
}

pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `u^H v`
pub fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}
