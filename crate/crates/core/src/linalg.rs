//! Householder factorizations and triangular helpers.
//!
//! Matrices are nalgebra's column-major `DMatrix`, so every reflector is
//! applied column by column over contiguous slices; the column loop is the
//! parallel axis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::par::ExecPolicy;

/// Below this many flops per reflector application the column loop stays sequential.
const PAR_MIN_WORK: usize = 1 << 16;
const COLS_PER_TASK: usize = 16;

/// Householder vector for `x`: returns `(tau, beta)` and overwrites `x[1..]`
/// with the tail of `v` (whose head is the implicit 1), so that
/// `(I − tau v vᵀ) x = beta e₁`.
fn make_reflector(x: &mut [f64]) -> (f64, f64) {
    let alpha = x[0];
    let tail_norm = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if tail_norm == 0.0 {
        return (0.0, alpha);
    }
    let beta = -alpha.signum() * alpha.hypot(tail_norm);
    let beta = if alpha == 0.0 {
        -alpha.hypot(tail_norm)
    } else {
        beta
    };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    x[1..].iter_mut().for_each(|v| *v *= scale);
    (tau, beta)
}

/// `col ← (I − tau v vᵀ) col` with `v = [1, tail…]`.
#[inline]
fn apply_reflector(tau: f64, tail: &[f64], col: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let (head, rest) = col.split_first_mut().expect("non-empty column");
    let mut dot = *head;
    for (a, b) in tail.iter().zip(rest.iter()) {
        dot += a * b;
    }
    let s = tau * dot;
    *head -= s;
    for (a, b) in tail.iter().zip(rest.iter_mut()) {
        *b -= s * a;
    }
}

/// Applies one reflector, acting on rows `offset..`, to the columns `from..` of
/// `a` (`rows` × `cols`, column-major).
fn reflect_columns(
    policy: &ExecPolicy,
    data: &mut [f64],
    rows: usize,
    from: usize,
    offset: usize,
    tau: f64,
    tail: &[f64],
) {
    if tau == 0.0 {
        return;
    }
    let cols = data.len() / rows;
    if from >= cols {
        return;
    }
    let region = &mut data[from * rows..];
    let work = (cols - from) * (rows - offset);
    let body = |_: usize, chunk: &mut [f64]| {
        for col in chunk.chunks_mut(rows) {
            apply_reflector(tau, tail, &mut col[offset..]);
        }
    };
    if work < PAR_MIN_WORK {
        ExecPolicy::SEQUENTIAL.for_each_chunk_mut(region, rows * COLS_PER_TASK, body);
    } else {
        policy.for_each_chunk_mut(region, rows * COLS_PER_TASK, body);
    }
}

/// Upper-triangular `R` with non-negative diagonal such that
/// `RᵀR = c² I + MᵀM`, i.e. the R factor of the stacked matrix `[c I; M]`.
///
/// The identity block is never materialized: reflector `j` only touches row
/// `j` of the top block and the `t` rows of `M`, so the cost is `O(t k²)`.
pub fn stacked_identity_r(c: f64, m: &DMatrix<f64>, policy: &ExecPolicy) -> Result<DMatrix<f64>> {
    let t = m.nrows();
    let k = m.ncols();
    if !(c > 0.0) {
        return Err(Error::domain("identity scale", c, "must be positive"));
    }
    // Column-major working copy with one scratch row on top per column.
    let rows = t + 1;
    let mut work = vec![0.0; rows * k];
    for j in 0..k {
        work[j * rows + 1..(j + 1) * rows].copy_from_slice(m.column(j).as_slice());
    }
    let mut r = DMatrix::<f64>::zeros(k, k);
    let mut tail = vec![0.0; t];
    for j in 0..k {
        let col = &mut work[j * rows..(j + 1) * rows];
        col[0] = c;
        let (tau, beta) = make_reflector(col);
        tail.copy_from_slice(&col[1..]);
        col[0] = 0.0;
        reflect_columns(policy, &mut work, rows, j + 1, 0, tau, &tail);
        let sign = if beta < 0.0 { -1.0 } else { 1.0 };
        r[(j, j)] = sign * beta;
        for l in j + 1..k {
            let top = &mut work[l * rows];
            r[(j, l)] = sign * *top;
            *top = 0.0;
        }
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in structured QR".into()));
    }
    Ok(r)
}

/// Inverse of an upper-triangular matrix (also upper triangular).
pub fn upper_triangular_inverse(r: &DMatrix<f64>, policy: &ExecPolicy) -> Result<DMatrix<f64>> {
    let k = r.nrows();
    if r.ncols() != k {
        return Err(Error::dimension(
            "triangular inverse (square)",
            k,
            r.ncols(),
        ));
    }
    if let Some(j) = (0..k).find(|&j| r[(j, j)] == 0.0 || !r[(j, j)].is_finite()) {
        return Err(Error::Numerical(format!(
            "singular triangular factor at pivot {j}"
        )));
    }
    let mut inv = DMatrix::<f64>::zeros(k, k);
    let rs = r.as_slice();
    policy.for_each_chunk_mut(inv.as_mut_slice(), k, |j, x| {
        x[j] = 1.0;
        for l in (0..=j).rev() {
            let xl = x[l] / rs[l * k + l];
            x[l] = xl;
            if xl != 0.0 {
                let col = &rs[l * k..l * k + l];
                for (xi, ri) in x[..l].iter_mut().zip(col) {
                    *xi -= xl * ri;
                }
            }
        }
    });
    Ok(inv)
}

/// Flips the sign of every column whose first clearly nonzero entry is negative.
pub fn normalize_column_signs(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        let tol = 1e-12 * scale;
        if let Some(&first) = col.iter().find(|v| v.abs() > tol) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Dense Householder QR of an `m × k` matrix with `m ≥ k`.
#[derive(Debug, Clone)]
pub struct HouseholderQr {
    /// R in the upper triangle, reflector tails below the diagonal.
    packed: DMatrix<f64>,
    taus: Vec<f64>,
}

impl HouseholderQr {
    pub fn new(a: &DMatrix<f64>, policy: &ExecPolicy) -> Result<Self> {
        let (m, k) = a.shape();
        if m < k {
            return Err(Error::dimension("QR input rows (>= cols)", k, m));
        }
        let mut packed = a.clone();
        let mut taus = Vec::with_capacity(k);
        let mut tail = Vec::with_capacity(m);
        for j in 0..k {
            let data = packed.as_mut_slice();
            let col = &mut data[j * m + j..(j + 1) * m];
            let (tau, beta) = make_reflector(col);
            tail.clear();
            tail.extend_from_slice(&col[1..]);
            col[0] = beta;
            reflect_columns(policy, data, m, j + 1, j, tau, &tail);
            taus.push(tau);
        }
        Ok(HouseholderQr { packed, taus })
    }

    pub fn nrows(&self) -> usize {
        self.packed.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.packed.ncols()
    }

    pub fn r(&self) -> DMatrix<f64> {
        let k = self.ncols();
        DMatrix::from_fn(k, k, |i, j| if i <= j { self.packed[(i, j)] } else { 0.0 })
    }

    /// Fails when a diagonal entry of R is negligible relative to the largest.
    pub fn check_full_rank(&self) -> Result<()> {
        let k = self.ncols();
        let diag: Vec<f64> = (0..k).map(|j| self.packed[(j, j)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let tol = max * (self.nrows().max(k) as f64) * f64::EPSILON * 16.0;
        match diag.iter().position(|&d| d <= tol || !d.is_finite()) {
            Some(j) => Err(Error::Numerical(format!(
                "rank-deficient matrix: |R[{j},{j}]| = {:.3e} <= {tol:.3e}",
                diag[j]
            ))),
            None => Ok(()),
        }
    }

    /// `Q x` for the full orthogonal factor, in place.
    pub fn apply_q(&self, x: &mut DMatrix<f64>, policy: &ExecPolicy) {
        let m = self.nrows();
        assert_eq!(x.nrows(), m);
        let mut tail = Vec::with_capacity(m);
        for j in (0..self.ncols()).rev() {
            tail.clear();
            tail.extend_from_slice(&self.packed.as_slice()[j * m + j + 1..(j + 1) * m]);
            reflect_columns(policy, x.as_mut_slice(), m, 0, j, self.taus[j], &tail);
        }
    }

    /// `Qᵀ x` for the full orthogonal factor, in place.
    pub fn apply_qt(&self, x: &mut DMatrix<f64>, policy: &ExecPolicy) {
        let m = self.nrows();
        assert_eq!(x.nrows(), m);
        let mut tail = Vec::with_capacity(m);
        for j in 0..self.ncols() {
            tail.clear();
            tail.extend_from_slice(&self.packed.as_slice()[j * m + j + 1..(j + 1) * m]);
            reflect_columns(policy, x.as_mut_slice(), m, 0, j, self.taus[j], &tail);
        }
    }

    /// Leading `k` orthonormal columns of the full Q.
    pub fn thin_q(&self, policy: &ExecPolicy) -> DMatrix<f64> {
        let (m, k) = (self.nrows(), self.ncols());
        let mut e = DMatrix::<f64>::zeros(m, k);
        for j in 0..k {
            e[(j, j)] = 1.0;
        }
        self.apply_q(&mut e, policy);
        e
    }

    /// Trailing `m − k` columns of the full Q: an orthonormal basis of the
    /// orthogonal complement of the column space.
    pub fn complement(&self, policy: &ExecPolicy) -> DMatrix<f64> {
        let (m, k) = (self.nrows(), self.ncols());
        let mut e = DMatrix::<f64>::zeros(m, m - k);
        for j in 0..m - k {
            e[(k + j, j)] = 1.0;
        }
        self.apply_q(&mut e, policy);
        e
    }
}

/// Orthonormal basis of the null space of `hᵀ` from a full Householder
/// factorization of `h`, sign-normalized.
pub fn orthogonal_complement(h: &DMatrix<f64>, policy: &ExecPolicy) -> Result<DMatrix<f64>> {
    let qr = HouseholderQr::new(h, policy)?;
    qr.check_full_rank()?;
    let mut q = qr.complement(policy);
    normalize_column_signs(&mut q);
    Ok(q)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pseudo_random(m: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(m, k, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn qr_reconstructs_input() {
        let a = pseudo_random(9, 4, 1);
        let qr = HouseholderQr::new(&a, &ExecPolicy::SEQUENTIAL).unwrap();
        let q = qr.thin_q(&ExecPolicy::SEQUENTIAL);
        let back = &q * qr.r();
        assert!(max_abs(&(back - &a)) < 1e-13);
        let qtq = q.transpose() * &q;
        assert!(max_abs(&(qtq - DMatrix::identity(4, 4))) < 1e-14);
    }

    #[test]
    fn complement_of_first_axis() {
        let h = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let q = orthogonal_complement(&h, &ExecPolicy::SEQUENTIAL).unwrap();
        assert_eq!(q, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn complement_rejects_rank_deficiency() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            orthogonal_complement(&h, &ExecPolicy::SEQUENTIAL),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn complement_is_orthogonal_to_columns() {
        let h = pseudo_random(12, 5, 9);
        let q = orthogonal_complement(&h, &ExecPolicy::SEQUENTIAL).unwrap();
        assert_eq!(q.shape(), (12, 7));
        assert!(max_abs(&(h.transpose() * &q)) < 1e-14);
        assert!(max_abs(&(q.transpose() * &q - DMatrix::identity(7, 7))) < 1e-14);
    }

    #[test]
    fn stacked_r_matches_gram() {
        let m = pseudo_random(6, 10, 3) * 5.0;
        let r = stacked_identity_r(2f64.sqrt(), &m, &ExecPolicy::SEQUENTIAL).unwrap();
        let want = DMatrix::<f64>::identity(10, 10) * 2.0 + m.transpose() * &m;
        assert!(max_abs(&(r.transpose() * &r - want)) < 1e-12);
        for j in 0..10 {
            assert!(r[(j, j)] > 0.0);
            for i in j + 1..10 {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn stacked_r_parallel_matches_sequential_bitwise() {
        let m = pseudo_random(40, 300, 5);
        let a = stacked_identity_r(1.0, &m, &ExecPolicy::SEQUENTIAL).unwrap();
        let b = stacked_identity_r(1.0, &m, &ExecPolicy::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn triangular_inverse() {
        let m = pseudo_random(5, 7, 4);
        let r = stacked_identity_r(1.5, &m, &ExecPolicy::SEQUENTIAL).unwrap();
        let inv = upper_triangular_inverse(&r, &ExecPolicy::SEQUENTIAL).unwrap();
        assert!(max_abs(&(&r * &inv - DMatrix::identity(7, 7))) < 1e-14);
        let mut z = r.clone();
        z[(3, 3)] = 0.0;
        assert!(upper_triangular_inverse(&z, &ExecPolicy::SEQUENTIAL).is_err());
    }

    #[test]
    fn sign_normalization() {
        let mut q = DMatrix::from_row_slice(3, 2, &[0.0, -1e-20, -0.6, -0.5, 0.8, 0.5]);
        normalize_column_signs(&mut q);
        assert_relative_eq!(q[(1, 0)], 0.6);
        assert_relative_eq!(q[(1, 1)], 0.5);
    }

    proptest! {
        #[test]
        fn stacked_r_is_cholesky_of_regularized_gram(t in 1usize..8, k in 1usize..8, seed in 0u64..1000, c in 0.1f64..5.0) {
            let m = pseudo_random(t, k, seed);
            let r = stacked_identity_r(c, &m, &ExecPolicy::SEQUENTIAL).unwrap();
            let want = DMatrix::<f64>::identity(k, k) * (c * c) + m.transpose() * &m;
            prop_assert!(max_abs(&(r.transpose() * &r - want)) < 1e-12);
        }
    }
}
