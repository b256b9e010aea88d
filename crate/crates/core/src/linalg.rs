//! Hankel liftings, anti-diagonal averaging, low-rank truncation and
//! polynomial rooting shared by the FRI solvers.
//!
//! Every function is pure. Matrices are small (a few dozen rows), so dense
//! SVDs are used throughout.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Layout of a lifted matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftKind {
    Single,
    Stacked,
    Paired,
}

/// Dimensions of a Hankel lifting: vector length `n`, order `alpha`,
/// and slot count `t_s` (only meaningful for [`LiftKind::Stacked`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftShape {
    pub n: usize,
    pub alpha: usize,
    pub t_s: usize,
    pub kind: LiftKind,
}

impl LiftShape {
    pub fn new(n: usize, alpha: usize, t_s: usize, kind: LiftKind) -> Result<Self> {
        check_order(n, alpha)?;
        if t_s == 0 {
            return Err(Error::Dimension("slot count must be positive".into()));
        }
        if kind != LiftKind::Stacked && t_s != 1 {
            return Err(Error::Dimension(format!("{kind:?} lifting takes a single slot")));
        }
        Ok(Self { n, alpha, t_s, kind })
    }

    /// Rows of one Hankel block.
    pub fn block_rows(&self) -> usize {
        self.n - self.alpha
    }

    pub fn rows(&self) -> usize {
        match self.kind {
            LiftKind::Stacked => self.block_rows() * self.t_s,
            _ => self.block_rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self.kind {
            LiftKind::Paired => 2 * (self.alpha + 1),
            _ => self.alpha + 1,
        }
    }
}

fn check_order(n: usize, alpha: usize) -> Result<()> {
    if alpha == 0 || alpha >= n {
        return Err(Error::LiftOrder { alpha, n });
    }
    Ok(())
}

/// `(n - alpha) x (alpha + 1)` Hankel matrix with entry `(i, m) = v[i + m]`.
pub fn hankel_lift(v: &CVector, alpha: usize) -> Result<CMatrix> {
    let n = v.len();
    check_order(n, alpha)?;
    Ok(DMatrix::from_fn(n - alpha, alpha + 1, |i, m| v[i + m]))
}

/// Vertical concatenation of the per-slot Hankel liftings.
pub fn stacked_hankel_lift(vs: &[CVector], alpha: usize) -> Result<CMatrix> {
    let first = vs
        .first()
        .ok_or_else(|| Error::Dimension("no slot vectors".into()))?;
    let n = first.len();
    check_order(n, alpha)?;
    if let Some(bad) = vs.iter().find(|v| v.len() != n) {
        return Err(Error::Dimension(format!(
            "ragged slot vectors: {} vs {n}",
            bad.len()
        )));
    }
    let br = n - alpha;
    Ok(DMatrix::from_fn(br * vs.len(), alpha + 1, |r, m| {
        vs[r / br][r % br + m]
    }))
}

/// `[H_alpha(v_r), H_alpha(v_t)]`.
pub fn paired_hankel_lift(v_r: &CVector, v_t: &CVector, alpha: usize) -> Result<CMatrix> {
    if v_r.len() != v_t.len() {
        return Err(Error::Dimension(format!(
            "paired vectors differ in length: {} vs {}",
            v_r.len(),
            v_t.len()
        )));
    }
    let n = v_r.len();
    check_order(n, alpha)?;
    let c = alpha + 1;
    Ok(DMatrix::from_fn(n - alpha, 2 * c, |i, m| {
        if m < c {
            v_r[i + m]
        } else {
            v_t[i + m - c]
        }
    }))
}

/// Anti-diagonal averaging: entry `k` is the mean of all `m(i, j)` with
/// `i + j = k`.
pub fn inverse_hankel(m: &CMatrix) -> Result<CVector> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let n = r + c - 1;
    let mut sum = DVector::from_element(n, ZERO);
    let mut count = vec![0usize; n];
    for j in 0..c {
        for i in 0..r {
            sum[i + j] += m[(i, j)];
            count[i + j] += 1;
        }
    }
    for (k, &cnt) in count.iter().enumerate() {
        sum[k] /= cnt as f64;
    }
    Ok(sum)
}

/// Projection onto Hankel matrices of the same shape.
pub fn hankelize(m: &CMatrix) -> Result<CMatrix> {
    let v = inverse_hankel(m)?;
    Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| v[i + j]))
}

/// Block-wise anti-diagonal averaging of a stacked lifting.
pub fn inverse_stacked_hankel(m: &CMatrix, shape: &LiftShape) -> Result<Vec<CVector>> {
    let br = shape.block_rows();
    if m.ncols() != shape.alpha + 1 {
        return Err(Error::Dimension(format!(
            "expected {} columns, got {}",
            shape.alpha + 1,
            m.ncols()
        )));
    }
    if m.nrows() % br != 0 {
        return Err(Error::Dimension(format!(
            "{} rows not divisible by block height {br}",
            m.nrows()
        )));
    }
    (0..m.nrows() / br)
        .map(|t| inverse_hankel(&m.rows(t * br, br).into_owned()))
        .collect()
}

/// Splits a paired lifting into halves and averages each.
pub fn inverse_paired_hankel(m: &CMatrix) -> Result<(CVector, CVector)> {
    let c = m.ncols();
    if c % 2 != 0 || c == 0 {
        return Err(Error::Dimension(format!("paired lifting needs an even column count, got {c}")));
    }
    let h = c / 2;
    let left = inverse_hankel(&m.columns(0, h).into_owned())?;
    let right = inverse_hankel(&m.columns(h, h).into_owned())?;
    Ok((left, right))
}

/// Number of length-`n` vectors a lifting of this shape is built from.
fn concatenated_blocks(shape: &LiftShape) -> usize {
    match shape.kind {
        LiftKind::Single => 1,
        LiftKind::Stacked => shape.t_s,
        LiftKind::Paired => 2,
    }
}

/// Lifting of the concatenation `[v_1; v_2; ...]` of equal-length vectors,
/// laid out as `shape` prescribes.
pub fn lift_concatenated(v: &CVector, shape: &LiftShape) -> Result<CMatrix> {
    let (n, br, c) = (shape.n, shape.block_rows(), shape.alpha + 1);
    if v.len() != n * concatenated_blocks(shape) {
        return Err(Error::Dimension(format!("vector of length {} for {shape:?}", v.len())));
    }
    Ok(match shape.kind {
        LiftKind::Single => DMatrix::from_fn(br, c, |i, j| v[i + j]),
        LiftKind::Stacked => DMatrix::from_fn(br * shape.t_s, c, |i, j| v[(i / br) * n + i % br + j]),
        LiftKind::Paired => DMatrix::from_fn(br, 2 * c, |i, j| v[(j / c) * n + i + j % c]),
    })
}

/// Inverse of [`lift_concatenated`]: anti-diagonal averaging of every
/// block, concatenated.
pub fn average_concatenated(m: &CMatrix, shape: &LiftShape) -> Result<CVector> {
    let (n, br, c) = (shape.n, shape.block_rows(), shape.alpha + 1);
    if m.shape() != (shape.rows(), shape.cols()) {
        return Err(Error::Dimension(format!("{:?} matrix for {shape:?}", m.shape())));
    }
    let blocks = concatenated_blocks(shape);
    let mut out = DVector::from_element(n * blocks, ZERO);
    for b in 0..blocks {
        let (r0, c0) = if shape.kind == LiftKind::Paired { (0, b * c) } else { (b * br, 0) };
        for j in 0..c {
            for i in 0..br {
                out[b * n + i + j] += m[(r0 + i, c0 + j)];
            }
        }
    }
    for k in 0..n {
        let count = (k.min(br - 1) + 1 - k.saturating_sub(shape.alpha)) as f64;
        for b in 0..blocks {
            out[b * n + k] /= count;
        }
    }
    Ok(out)
}

/// Frobenius distance from `m` to the set of stacked-Hankel matrices with
/// the given block height.
///
/// Block-wise anti-diagonal averaging is the orthogonal projection onto
/// that set, each averaged value being weighted by how often it appears.
pub fn stacked_hankel_distance(m: &CMatrix, block_rows: usize) -> Result<f64> {
    if block_rows == 0 || m.nrows() % block_rows != 0 {
        return Err(Error::Dimension(format!(
            "{} rows not divisible by block height {block_rows}",
            m.nrows()
        )));
    }
    let mut acc = 0.0;
    for t in 0..m.nrows() / block_rows {
        let blk = m.rows(t * block_rows, block_rows).into_owned();
        acc += (&blk - hankelize(&blk)?).norm_squared();
    }
    Ok(acc.sqrt())
}

/// Singular values in descending order.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `A^H A`, assembled from one real product of `[Re A, Im A]` with itself.
pub fn gram(a: &CMatrix) -> CMatrix {
    let c = a.ncols();
    let w = DMatrix::from_fn(a.nrows(), 2 * c, |i, j| if j < c { a[(i, j)].re } else { a[(i, j - c)].im });
    let p = w.transpose() * &w;
    DMatrix::from_fn(c, c, |i, j| {
        Complex64::new(p[(i, j)] + p[(c + i, c + j)], p[(i, c + j)] - p[(c + i, j)])
    })
}

/// Largest eigenvalue of a Hermitian matrix, i.e. `sigma_max(A)^2` for
/// `gram = A^H A`.
pub fn hermitian_lambda_max(gram: &CMatrix) -> f64 {
    if gram.is_empty() {
        return 0.0;
    }
    gram.clone().symmetric_eigenvalues().max().max(0.0)
}

/// Best rank-`k` approximation in Frobenius norm.
///
/// Projects onto the top-`k` eigenvectors of the smaller Gram matrix
/// (`M^H M` or `M M^H`), which are the dominant singular vectors of `M`.
pub fn rank_truncate(m: &CMatrix, k: usize) -> Result<CMatrix> {
    let (rows, cols) = m.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::RankOutOfRange { k, rows, cols });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let tall = rows >= cols;
    let gram = if tall { m.ad_mul(m) } else { m * m.adjoint() };
    let eig = gram.symmetric_eigen();
    // Stable sort keeps the first of tied values.
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = CMatrix::from_columns(&order[..k].iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    Ok(if tall {
        (m * &basis) * basis.adjoint()
    } else {
        &basis * basis.ad_mul(m)
    })
}

/// Right singular vector of the smallest singular value.
#[derive(Debug, Clone)]
pub struct NullVector {
    pub vector: CVector,
    /// True when the input was all zero and `vector` is `e_1`.
    pub degenerate: bool,
}

/// Unit right singular vector for the smallest singular value, with its
/// first nonzero entry rotated to be real and positive.
pub fn smallest_right_singular_vector(m: &CMatrix) -> Result<NullVector> {
    let (rows, cols) = m.shape();
    if cols < 2 {
        return Err(Error::Dimension(format!("need at least 2 columns, got {cols}")));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    if m.iter().all(|z| *z == ZERO) {
        let mut e = DVector::from_element(cols, ZERO);
        e[0] = Complex64::new(1.0, 0.0);
        return Ok(NullVector { vector: e, degenerate: true });
    }
    // Zero-pad wide matrices so the thin SVD yields a full set of right vectors.
    let padded;
    let a = if rows < cols {
        padded = m.clone().resize_vertically(cols, ZERO);
        &padded
    } else {
        m
    };
    let svd = a.clone().svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right vectors".into()))?;
    let idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut v: CVector = vt.row(idx).transpose().map(|z| z.conj());
    phase_normalize(&mut v);
    Ok(NullVector { vector: v, degenerate: false })
}

/// Scales `v` to unit norm and rotates it so its first non-negligible
/// entry is real and positive.
pub fn phase_normalize(v: &mut CVector) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    let tol = 1e-12 * v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(first) = v.iter().find(|z| z.norm() > tol).copied() {
        let rot = first.conj() / first.norm();
        v.iter_mut().for_each(|z| *z *= rot / norm);
    }
}

/// Ascending coefficients of `prod_k (1 - z / z_k)`.
pub fn polynomial_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &zk in roots {
        let w = -zk.inv();
        let mut next = vec![ZERO; c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] += ci * w;
        }
        c = next;
    }
    c
}

/// Roots of `sum_m c_m z^m` via the eigenvalues of the companion matrix.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let max = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max == 0.0 || !max.is_finite() {
        return Err(Error::ZeroPolynomial);
    }
    let tol = 1e-12 * max;
    let deg = coeffs
        .iter()
        .rposition(|c| c.norm() >= tol)
        .expect("max coefficient exceeds tolerance");
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[deg];
    if deg == 1 {
        return Ok(vec![-coeffs[0] / lead]);
    }
    let mut comp = DMatrix::from_element(deg, deg, ZERO);
    for i in 1..deg {
        comp[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let schur = comp
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("companion eigenvalue iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    // The complex Schur form is upper triangular.
    Ok(t.diagonal().iter().copied().collect())
}

/// Degrees for a root on (or near) the unit circle: `-asin(arg z / pi)`.
pub fn root_to_angle_deg(z: Complex64) -> f64 {
    let s = (z.arg() / std::f64::consts::PI).clamp(-1.0, 1.0);
    (-s).asin().to_degrees()
}

/// Keeps the `k` roots closest to the unit circle and converts them to
/// angles in degrees, sorted ascending.
pub fn roots_to_angles(roots: &[Complex64], k: usize) -> Result<Vec<f64>> {
    if roots.len() < k {
        return Err(Error::NotEnoughRoots { needed: k, got: roots.len() });
    }
    let mut idx: Vec<usize> = (0..roots.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (roots[a].norm() - 1.0).abs();
        let db = (roots[b].norm() - 1.0).abs();
        da.total_cmp(&db)
    });
    let mut out: Vec<f64> = idx[..k].iter().map(|&i| root_to_angle_deg(roots[i])).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}
