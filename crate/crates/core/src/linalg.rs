//! Dense linear algebra shared by the rest of the crate.
//!
//! Vectors are plain `[f64]` slices; [`Mat`] is a row-major matrix. The SVD is
//! a one-sided Jacobi iteration run on whichever side has the smaller Gram
//! matrix, which is plenty for snapshot matrices of a few hundred columns.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("empty matrix")]
    Empty,
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("t = {t} lies outside segment [{t0}, {t1}]")]
    OutOfDomain { t: f64, t0: f64, t1: f64 },
    #[error("degenerate segment: t1 ({t1}) must exceed t0 ({t0})")]
    DegenerateSegment { t0: f64, t1: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|col| col.len() != r) {
            return Err(LinalgError::Dimension("ragged columns".into()));
        }
        let mut m = Self::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(LinalgError::Dimension(format!(
                "{}x{} times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ x`
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(LinalgError::Dimension(format!(
                "({}x{})ᵀ times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            axpy(*xi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Thin SVD `A = U diag(sigma) Vt` with `k = min(rows, cols)` singular triplets.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub vt: Mat,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("consistent svd factors")
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD.
pub fn svd(a: &Mat) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::Empty);
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if a.cols() <= a.rows() {
        jacobi_tall(a)
    } else {
        // A = (Aᵀ)ᵀ = (U' S V'ᵀ)ᵀ = V' S U'ᵀ
        let t = jacobi_tall(&a.transpose())?;
        Ok(SvdResult { u: t.vt.transpose(), sigma: t.sigma, vt: t.u.transpose() })
    }
}

/// Orthogonalizes the columns of a tall (rows >= cols) matrix.
fn jacobi_tall(a: &Mat) -> Result<SvdResult> {
    let m = a.rows();
    let n = a.cols();
    // Column-major working copies so rotations touch contiguous memory.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = f64::EPSILON;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = w.iter().enumerate().map(|(j, col)| (norm2(col), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let smax = order.first().map_or(0.0, |o| o.0);
    let cutoff = smax * eps * (m as f64);

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut vt = Mat::zeros(n, n);
    for (k, &(s, j)) in order.iter().enumerate() {
        for i in 0..n {
            vt[(k, i)] = v[j][i];
        }
        if s > cutoff && s > 0.0 {
            ucols.push(w[j].iter().map(|x| x / s).collect());
            sigma.push(s);
        } else {
            ucols.push(complete_basis(&ucols, m));
            sigma.push(if s > cutoff { s } else { 0.0_f64.max(s) });
        }
    }
    let u = Mat::from_columns(&ucols)?;
    Ok(SvdResult { u, sigma, vt })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Unit vector orthogonal to every column in `basis` (modified Gram-Schmidt
/// over the canonical basis).
fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                axpy(-proj, b, &mut cand);
            }
        }
        let nrm = norm2(&cand);
        if nrm > 0.5 {
            return cand.iter().map(|x| x / nrm).collect();
        }
        if nrm > best_norm {
            best_norm = nrm;
            best = Some(cand);
        }
    }
    let cand = best.unwrap_or_else(|| vec![0.0; m]);
    if best_norm > 0.0 {
        cand.iter().map(|x| x / best_norm).collect()
    } else {
        cand
    }
}

/// LU factorization with partial pivoting, for the small Newton systems of the
/// implicit integrator.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Mat) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(LinalgError::Dimension("LU needs a square matrix".into()));
        }
        let n = a.rows();
        let mut lu = a.as_slice().to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut pmax = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::Dimension("rhs length".into()));
        }
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        Ok(x)
    }
}

/// Cubic Hermite interpolant on `[t0, t1]` from endpoint values and slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteSegment {
    pub t0: f64,
    pub t1: f64,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
}

impl HermiteSegment {
    pub fn new(t0: f64, t1: f64, u0: Vec<f64>, u1: Vec<f64>, f0: Vec<f64>, f1: Vec<f64>) -> Result<Self> {
        if !(t1 > t0) {
            return Err(LinalgError::DegenerateSegment { t0, t1 });
        }
        let n = u0.len();
        if u1.len() != n || f0.len() != n || f1.len() != n {
            return Err(LinalgError::Dimension("segment endpoint data".into()));
        }
        Ok(Self { t0, t1, u0, u1, f0, f1 })
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= self.t0 && t <= self.t1) {
            return Err(LinalgError::OutOfDomain { t, t0: self.t0, t1: self.t1 });
        }
        let mut out = vec![0.0; self.u0.len()];
        hermite_eval_into(self.t0, self.t1, &self.u0, &self.u1, &self.f0, &self.f1, t, &mut out);
        Ok(out)
    }
}

/// Unchecked Hermite evaluation used by the dense trajectory store. Exact at
/// both endpoints.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn hermite_eval_into(t0: f64, t1: f64, u0: &[f64], u1: &[f64], f0: &[f64], f1: &[f64], t: f64, out: &mut [f64]) {
    if t == t0 {
        out.copy_from_slice(u0);
        return;
    }
    if t == t1 {
        out.copy_from_slice(u1);
        return;
    }
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = (s3 - 2.0 * s2 + s) * h;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = (s3 - s2) * h;
    for i in 0..out.len() {
        out[i] = h00 * u0[i] + h10 * f0[i] + h01 * u1[i] + h11 * f1[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_orthonormal_columns(m: &Mat, tol: f64) {
        let g = m.transpose().matmul(m).unwrap();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < tol, "gram[{i},{j}] = {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn svd_of_diagonal() {
        let a = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14);
        assert!((s.sigma[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn svd_of_permutation() {
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - 1.0).abs() < 1e-14);
        assert!((s.sigma[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_of_shear_matches_golden_ratio() {
        // AᵀA has characteristic polynomial λ² − 3λ + 1.
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = svd(&a).unwrap();
        let l1 = (3.0 + 5f64.sqrt()) / 2.0;
        let l2 = (3.0 - 5f64.sqrt()) / 2.0;
        assert!((s.sigma[0] - l1.sqrt()).abs() < 1e-12);
        assert!((s.sigma[1] - l2.sqrt()).abs() < 1e-12);
        assert!((s.sigma[0] - 1.618034).abs() < 1e-6);
        assert!((s.sigma[1] - 0.618034).abs() < 1e-6);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let a = Mat::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        assert_eq!(svd(&a).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn svd_rank_deficient_still_orthonormal() {
        let a = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]])
            .unwrap();
        let s = svd(&a).unwrap();
        assert_orthonormal_columns(&s.u, 1e-10);
        assert_orthonormal_columns(&s.vt.transpose(), 1e-10);
        assert!(s.sigma[1] < 1e-12 && s.sigma[2] < 1e-12);
        let r = s.reconstruct();
        for i in 0..4 {
            for j in 0..3 {
                assert!((r[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn svd_is_deterministic() {
        let a = Mat::from_rows(&[vec![0.3, -1.2, 4.0], vec![2.2, 0.1, -0.7]]).unwrap();
        let s1 = svd(&a).unwrap();
        let s2 = svd(&a).unwrap();
        assert_eq!(s1.sigma, s2.sigma);
        assert_eq!(s1.u, s2.u);
        assert_eq!(s1.vt, s2.vt);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn svd_invariants(rows in 1usize..50, cols in 1usize..50, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = Mat::from_row_major(rows, cols, data).unwrap();
            let s = svd(&a).unwrap();
            let k = rows.min(cols);
            prop_assert_eq!(s.sigma.len(), k);
            for w in s.sigma.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            prop_assert!(s.sigma.iter().all(|&x| x >= 0.0));
            assert_orthonormal_columns(&s.u, 1e-10);
            assert_orthonormal_columns(&s.vt.transpose(), 1e-10);
            let r = s.reconstruct();
            let mut diff = r.clone();
            for i in 0..rows { for j in 0..cols { diff[(i, j)] -= a[(i, j)]; } }
            prop_assert!(diff.frobenius_norm() <= 1e-8 * a.frobenius_norm().max(1e-300));
        }

        #[test]
        fn hermite_reproduces_cubics(c in proptest::array::uniform4(-3.0f64..3.0), t0 in -2.0f64..2.0, h in 0.05f64..3.0, s in 0.0f64..=1.0) {
            let p = |t: f64| c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t;
            let dp = |t: f64| c[1] + 2.0 * c[2] * t + 3.0 * c[3] * t * t;
            let t1 = t0 + h;
            let seg = HermiteSegment::new(t0, t1, vec![p(t0)], vec![p(t1)], vec![dp(t0)], vec![dp(t1)]).unwrap();
            let t = t0 + s * h;
            let got = seg.eval(t.min(t1)).unwrap()[0];
            prop_assert!((got - p(t.min(t1))).abs() <= 1e-12 * (1.0 + p(t.min(t1)).abs()) + 1e-12);
        }
    }

    #[test]
    fn hermite_examples() {
        let c = HermiteSegment::new(0.0, 2.0, vec![4.0], vec![4.0], vec![0.0], vec![0.0]).unwrap();
        assert_eq!(c.eval(0.7).unwrap(), vec![4.0]);
        let lin = HermiteSegment::new(1.0, 3.0, vec![0.0], vec![1.0], vec![0.5], vec![0.5]).unwrap();
        assert!((lin.eval(2.0).unwrap()[0] - 0.5).abs() < 1e-15);
        let cub = HermiteSegment::new(0.0, 1.0, vec![0.0], vec![1.0], vec![0.0], vec![3.0]).unwrap();
        assert!((cub.eval(0.5).unwrap()[0] - 0.125).abs() < 1e-15);
        assert_eq!(cub.eval(0.0).unwrap(), vec![0.0]);
        assert_eq!(cub.eval(1.0).unwrap(), vec![1.0]);
        assert!(matches!(cub.eval(1.5), Err(LinalgError::OutOfDomain { .. })));
    }

    #[test]
    fn lu_solves_small_system() {
        let a = Mat::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]).unwrap();
        let x = vec![1.0, -2.0, 0.5];
        let b = a.matvec(&x).unwrap();
        let got = Lu::factor(&a).unwrap().solve(&b).unwrap();
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-14);
        }
        let sing = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(Lu::factor(&sing).is_err());
    }
}
