//! Dense numerical kernels shared by the rank-structured modules.
//!
//! Everything here goes through the singular-value decomposition: rank is
//! `#{σ_i > eps·σ_1}`, least squares uses the pseudo-inverse with the same
//! relative cut-off, and low-rank factorizations split `√Σ` onto both sides.

use nalgebra::{DMatrix, DVector};

/// Default relative tolerance for numerical rank and span membership.
pub const DEFAULT_EPS: f64 = 1e-9;

/// Thin SVD with singular values sorted descending and a fixed sign
/// convention: the largest-magnitude entry of every left singular vector is
/// positive (first such entry on ties).
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        if k == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                sigma: Vec::new(),
                v_t: DMatrix::zeros(0, cols),
            };
        }
        // nalgebra's SVD loses orthogonality on some rank-deficient inputs,
        // so the decomposition itself comes from faer.
        let svd = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)])
            .thin_svd()
            .expect("SVD of a finite matrix converges");
        let (u_raw, v_raw) = (svd.U(), svd.V());
        let s_raw = svd.S().column_vector();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s_raw[b].partial_cmp(&s_raw[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));

        let mut u = DMatrix::zeros(rows, k);
        let mut v_t = DMatrix::zeros(k, cols);
        let mut sigma = Vec::with_capacity(k);
        for (dst, &src) in order.iter().enumerate() {
            sigma.push(s_raw[src]);
            let mut pivot = 0;
            for i in 1..rows {
                if u_raw[(i, src)].abs() > u_raw[(pivot, src)].abs() {
                    pivot = i;
                }
            }
            let sign = if u_raw[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..rows {
                u[(i, dst)] = sign * u_raw[(i, src)];
            }
            for j in 0..cols {
                v_t[(dst, j)] = sign * v_raw[(j, src)];
            }
        }
        Self { u, sigma, v_t }
    }

    /// Number of singular values above `eps` times the largest one.
    pub fn rank(&self, eps: f64) -> usize {
        match self.sigma.first() {
            Some(&top) if top > 0.0 => self.sigma.iter().filter(|&&s| s > eps * top).count(),
            _ => 0,
        }
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    SortedSvd::new(m).sigma
}

pub fn numerical_rank(m: &DMatrix<f64>, eps: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > eps * top).count(),
        _ => 0,
    }
}

/// Balanced rank factorization `m ≈ left · right`.
#[derive(Debug, Clone)]
pub struct RankFactors {
    /// `rows × width`; only the leading `rank` columns are nonzero.
    pub left: DMatrix<f64>,
    /// `width × cols`; only the leading `rank` rows are nonzero.
    pub right: DMatrix<f64>,
    /// Kept rank, at most `width`.
    pub rank: usize,
    /// Numerical rank before capping at `width`.
    pub numerical_rank: usize,
}

/// Truncated-SVD factorization padded to `width` columns/rows.
///
/// The kept rank is the numerical rank at `eps`, capped at `width`.
pub fn rank_factorize(m: &DMatrix<f64>, eps: f64, width: usize) -> RankFactors {
    let (rows, cols) = m.shape();
    let svd = SortedSvd::new(m);
    let numerical_rank = svd.rank(eps);
    let rank = numerical_rank.min(width);
    let mut left = DMatrix::zeros(rows, width);
    let mut right = DMatrix::zeros(width, cols);
    for k in 0..rank {
        let root = svd.sigma[k].sqrt();
        left.set_column(k, &(svd.u.column(k) * root));
        right.set_row(k, &(svd.v_t.row(k) * root));
    }
    RankFactors {
        left,
        right,
        rank,
        numerical_rank,
    }
}

/// Moore–Penrose pseudo-inverse with relative singular-value cut-off `eps`.
pub fn pseudo_inverse(m: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let svd = SortedSvd::new(m);
    let rank = svd.rank(eps);
    let mut out = DMatrix::zeros(cols, rows);
    for k in 0..rank {
        let inv = 1.0 / svd.sigma[k];
        out += svd.v_t.row(k).transpose() * svd.u.column(k).transpose() * inv;
    }
    out
}

/// Minimum-norm least-squares coefficients of `rhs` on the columns of
/// `basis`, together with the residual norm `‖basis·γ − rhs‖`.
pub fn least_squares(basis: &DMatrix<f64>, rhs: &DVector<f64>, eps: f64) -> (DVector<f64>, f64) {
    if basis.ncols() == 0 {
        return (DVector::zeros(0), rhs.norm());
    }
    let coeffs = pseudo_inverse(basis, eps) * rhs;
    let residual = (basis * &coeffs - rhs).norm();
    (coeffs, residual)
}

/// `log|det m|` and the determinant sign via partial-pivot LU.
pub fn log_abs_det(m: &DMatrix<f64>) -> (f64, f64) {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut log = 0.0;
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if d < 0.0 {
            sign = -sign;
        }
        log += d.abs().ln();
    }
    (log, sign)
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`; zero when both are zero.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rank_of_outer_product_is_one() {
        let m = DMatrix::from_fn(4, 3, |i, j| (i + 1) as f64 * (j + 2) as f64);
        assert_eq!(numerical_rank(&m, DEFAULT_EPS), 1);
    }

    #[test]
    fn zero_and_empty_have_rank_zero() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), DEFAULT_EPS), 0);
        assert_eq!(numerical_rank(&DMatrix::zeros(0, 3), DEFAULT_EPS), 0);
    }

    #[test]
    fn factorization_reproduces_and_pads() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        let f = rank_factorize(&m, DEFAULT_EPS, 4);
        assert_eq!(f.rank, 2);
        assert_eq!(f.left.shape(), (3, 4));
        assert!(f.left.column(2).iter().all(|&v| v == 0.0));
        assert!(f.right.row(3).iter().all(|&v| v == 0.0));
        assert_relative_eq!(&f.left * &f.right, m, epsilon = 1e-12);
    }

    #[test]
    fn sign_convention_is_applied() {
        let m = DMatrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, -1.0]);
        let svd = SortedSvd::new(&m);
        assert_eq!(svd.sigma, vec![3.0, 1.0]);
        for k in 0..2 {
            let col = svd.u.column(k);
            let max = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn rank_deficient_blocks_reconstruct() {
        // Wide and rank deficient, the shape of most extraction blocks.
        let rows: Vec<f64> = (0..7 * 14).map(|k| ((k * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let left = DMatrix::from_fn(7, 3, |i, j| rows[i * 3 + j]);
        let right = DMatrix::from_fn(3, 14, |i, j| rows[21 + i * 14 + j]);
        let m = left * right;
        let svd = SortedSvd::new(&m);
        let rebuilt = &svd.u * DMatrix::from_diagonal(&DVector::from_vec(svd.sigma.clone())) * &svd.v_t;
        assert!(relative_frobenius(&rebuilt, &m) < 1e-13);
        assert_eq!(svd.rank(DEFAULT_EPS), 3);
    }

    #[test]
    fn least_squares_on_empty_basis_returns_norm() {
        let rhs = DVector::from_vec(vec![3.0, 4.0]);
        let (_, r) = least_squares(&DMatrix::zeros(2, 0), &rhs, DEFAULT_EPS);
        assert_relative_eq!(r, 5.0);
    }

    #[test]
    fn log_det_matches_direct() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 3.0, 1.0]);
        let (log, sign) = log_abs_det(&m);
        assert_relative_eq!(log, 6f64.ln(), epsilon = 1e-14);
        assert_eq!(sign, -1.0);
    }
}
