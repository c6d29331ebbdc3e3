//! Executable counterexamples to extending the duality.
//!
//! * Softmax: `V[i][j] = i·j` has rank one, yet its row-wise softmax is
//!   nonsingular. Its determinant has a closed form: with nodes `x_i = e^i`,
//!   `softmax(V) = diag(1/Z)·[x_i^j]`, so
//!   `det = Π_i x_i / Z_i · Π_{i<j} (x_j − x_i)`, evaluated in log space.
//! * `I_T + E^{T,1}` is 2-semiseparable (so some SSM with two states realizes
//!   it) but its single diagonal block has `T − 1` new columns, so no 1-SS
//!   masked-attention dual of width `N < T − 1` exists.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::duality::{count_block_new_columns, has_one_ss_dual};
use crate::error::{Result, SsdError};
use crate::linalg;
use crate::ss_matrix::{semiseparable_rank, LowerTriangularMatrix};
use crate::sss_extract::{extract_sss, round_trip_error};

pub const SOFTMAX_MAX_T: usize = 8;
/// Largest `T` for the brute-force contiguous-submatrix check.
pub const SUBMATRIX_CHECK_MAX_T: usize = 5;
pub const LOG_DET_AGREEMENT: f64 = 1e-6;
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
pub const EXTRACTION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    pub expected: String,
    pub pass: bool,
}

impl Measurement {
    fn new(name: &str, value: f64, expected: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            expected: expected.into(),
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub name: String,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    pub claim: String,
    pub applicable: bool,
    pub measurements: Vec<Measurement>,
    pub verdict: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CounterexampleReport {
    fn finish(mut self) -> Self {
        self.verdict = self.applicable && self.measurements.iter().all(|m| m.pass);
        self
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{} (T = {}", self.name, self.steps);
        if let Some(n) = self.width {
            out.push_str(&format!(", N = {n}"));
        }
        out.push_str(&format!(")\nclaim: {}\n", self.claim));
        if let Some(note) = &self.note {
            out.push_str(&format!("note: {note}\n"));
        }
        let width = self.measurements.iter().map(|m| m.name.len()).max().unwrap_or(0).max(8);
        out.push_str(&format!("{:<width$}  {:>24}  {:<28}  pass\n", "quantity", "value", "expected"));
        for m in &self.measurements {
            out.push_str(&format!(
                "{:<width$}  {:>24}  {:<28}  {}\n",
                m.name,
                format!("{:.12e}", m.value),
                m.expected,
                if m.pass { "yes" } else { "NO" }
            ));
        }
        out.push_str(&format!("verdict: {}\n", if self.verdict { "PASS" } else { "FAIL" }));
        out
    }
}

/// `V[i][j] = i·j` with one-based `i, j`.
pub fn product_matrix(size: usize) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| ((i + 1) * (j + 1)) as f64)
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - max).exp());
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}

/// Closed-form `log|det softmax(V)|` for `V[i][j] = i·j`.
pub fn softmax_log_det_closed_form(size: usize) -> f64 {
    let mut log = 0.0;
    for i in 1..=size {
        let fi = i as f64;
        // log Z_i by log-sum-exp over j·i.
        let top = fi * size as f64;
        let sum: f64 = (1..=size).map(|j| (fi * j as f64 - top).exp()).sum();
        log += fi - (top + sum.ln());
        for j in i + 1..=size {
            let fj = j as f64;
            log += fj + (-(fi - fj).exp()).ln_1p();
        }
    }
    log
}

/// Exact rank-one test for the integer matrix `i·j`: every 2×2 minor is
/// zero in integer arithmetic.
fn product_matrix_is_rank_one(size: usize) -> bool {
    let v = |i: i64, j: i64| i * j;
    let n = size as i64;
    (1..=n).all(|i| (1..=n).all(|k| (1..=n).all(|j| (1..=n).all(|l| v(i, j) * v(k, l) - v(i, l) * v(k, j) == 0))))
}

fn full_rank_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

pub fn softmax_counterexample(size: usize, eps: f64) -> Result<CounterexampleReport> {
    if !(2..=SOFTMAX_MAX_T).contains(&size) {
        return Err(SsdError::SizeExceeded {
            what: "softmax counterexample (2 <= T)",
            size,
            limit: SOFTMAX_MAX_T,
        });
    }
    let v = product_matrix(size);
    let s = row_softmax(&v);
    let mut measurements = Vec::new();

    let exact = product_matrix_is_rank_one(size);
    measurements.push(Measurement::new(
        "rank(V) exact",
        if exact { 1.0 } else { f64::NAN },
        "1",
        exact,
    ));
    let rank_v = linalg::numerical_rank(&v, eps);
    measurements.push(Measurement::new("rank(V) numerical", rank_v as f64, "1", rank_v == 1));

    let row_dev = s
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0f64, f64::max);
    measurements.push(Measurement::new(
        "max |row sum - 1|",
        row_dev,
        format!("<= {ROW_SUM_TOLERANCE:e}"),
        row_dev <= ROW_SUM_TOLERANCE,
    ));

    let rank_s = linalg::numerical_rank(&s, full_rank_tolerance(size, size));
    measurements.push(Measurement::new(
        "rank(softmax V)",
        rank_s as f64,
        size.to_string(),
        rank_s == size,
    ));

    let (direct, sign) = linalg::log_abs_det(&s);
    let closed = softmax_log_det_closed_form(size);
    measurements.push(Measurement::new(
        "log|det| direct (LU)",
        direct,
        "finite, det > 0",
        direct.is_finite() && sign > 0.0,
    ));
    measurements.push(Measurement::new(
        "log|det| closed form",
        closed,
        "finite",
        closed.is_finite(),
    ));
    let agreement = (direct - closed).abs() / closed.abs().max(f64::MIN_POSITIVE);
    measurements.push(Measurement::new(
        "log|det| relative gap",
        agreement,
        format!("<= {LOG_DET_AGREEMENT:e}"),
        agreement <= LOG_DET_AGREEMENT,
    ));

    if size <= SUBMATRIX_CHECK_MAX_T {
        let mut deficient = 0usize;
        for k in 1..=size {
            for i in 0..=size - k {
                for j in 0..=size - k {
                    let sub = s.view((i, j), (k, k)).into_owned();
                    if linalg::numerical_rank(&sub, full_rank_tolerance(k, k)) < k {
                        deficient += 1;
                    }
                }
            }
        }
        measurements.push(Measurement::new(
            "rank-deficient contiguous square submatrices",
            deficient as f64,
            "0",
            deficient == 0,
        ));
    }

    Ok(CounterexampleReport {
        name: "softmax rank explosion".into(),
        steps: size,
        width: None,
        claim: "V = (i*j) has rank 1 while softmax(V) is nonsingular".into(),
        applicable: true,
        measurements,
        verdict: false,
        note: (size > SUBMATRIX_CHECK_MAX_T)
            .then(|| format!("submatrix check runs only for T <= {SUBMATRIX_CHECK_MAX_T}")),
    }
    .finish())
}

/// `I_T + E^{T,1}`: the identity with an extra one in the bottom-left corner.
pub fn non_dualizable_matrix(size: usize) -> Result<LowerTriangularMatrix> {
    if size < 3 {
        return Err(SsdError::InvalidArgument(format!("need T >= 3, got {size}")));
    }
    Ok(LowerTriangularMatrix::from_fn(size, |i, j| {
        if i == j || (i == size - 1 && j == 0) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Checks that `I_T + E^{T,1}` has no 1-SS masked-attention dual of width
/// `width` while still admitting a two-state representation.
pub fn verify_non_dualizable(size: usize, width: usize, eps: f64) -> CounterexampleReport {
    let mut report = CounterexampleReport {
        name: "2-SS matrix without a 1-SS attention dual".into(),
        steps: size,
        width: Some(width),
        claim: "I + E^{T,1} is 2-semiseparable but has no width-N 1-SS masked attention dual".into(),
        applicable: true,
        measurements: Vec::new(),
        verdict: false,
        note: None,
    };
    if size < 3 || width == 0 || size < width + 2 {
        report.applicable = false;
        report.note = Some(format!("inapplicable: requires T >= max(3, N + 2), got T = {size}, N = {width}"));
        return report.finish();
    }
    let m = non_dualizable_matrix(size).expect("size checked above");

    let rank = semiseparable_rank(&m, eps);
    report
        .measurements
        .push(Measurement::new("semiseparable rank", rank as f64, "2", rank == 2));

    let blocks = count_block_new_columns(&m, eps);
    let most = blocks.iter().map(|b| b.new_columns).max().unwrap_or(0);
    report.measurements.push(Measurement::new(
        "max new columns per block",
        most as f64,
        format!("{} (> N)", size - 1),
        most == size - 1 && most > width,
    ));

    let dual = has_one_ss_dual(&m, width, eps);
    report.measurements.push(Measurement::new(
        "has 1-SS dual",
        if dual { 1.0 } else { 0.0 },
        "0 (false)",
        !dual,
    ));

    let (residual, extracted) = match extract_sss(&m, 2, eps) {
        Ok(rep) => (round_trip_error(&m, &rep), true),
        Err(e) => {
            report.note = Some(format!("two-state extraction failed: {e}"));
            (f64::INFINITY, false)
        }
    };
    report.measurements.push(Measurement::new(
        "2-state extraction residual",
        residual,
        format!("<= {EXTRACTION_TOLERANCE:e}"),
        extracted && residual <= EXTRACTION_TOLERANCE,
    ));
    report.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_EPS;
    use crate::ss_matrix::new_columns;

    #[test]
    fn two_by_two_softmax_determinant() {
        // softmax rows of [[1,2],[2,4]]: det = e^{1+2}(e^2 - e) / (Z_1 Z_2).
        let z1 = 1f64.exp() + 2f64.exp();
        let z2 = 2f64.exp() + 4f64.exp();
        let det = 3f64.exp() * (2f64.exp() - 1f64.exp()) / (z1 * z2);
        assert!((softmax_log_det_closed_form(2) - det.ln()).abs() < 1e-14);
        let s = row_softmax(&product_matrix(2));
        let direct = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
        assert!((direct - det).abs() < 1e-15);
    }

    #[test]
    fn softmax_reports_pass_for_small_t() {
        for t in 2..=6 {
            let r = softmax_counterexample(t, DEFAULT_EPS).unwrap();
            assert!(r.verdict, "{}", r.to_table());
        }
        assert!(matches!(softmax_counterexample(1, DEFAULT_EPS), Err(SsdError::SizeExceeded { .. })));
        assert!(matches!(softmax_counterexample(9, DEFAULT_EPS), Err(SsdError::SizeExceeded { .. })));
    }

    #[test]
    fn product_matrix_is_exactly_rank_one() {
        for t in 1..=8 {
            assert!(product_matrix_is_rank_one(t));
        }
    }

    #[test]
    fn non_dualizable_examples() {
        let m = non_dualizable_matrix(3).unwrap();
        assert_eq!(m.to_rows(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]);
        assert!(non_dualizable_matrix(2).is_err());
        for t in 3..8 {
            let m = non_dualizable_matrix(t).unwrap();
            assert_eq!(semiseparable_rank(&m, DEFAULT_EPS), 2);
            assert_eq!(new_columns(&m, DEFAULT_EPS), (0..t - 1).collect::<Vec<_>>());
        }
    }

    #[test]
    fn verification_examples() {
        assert!(verify_non_dualizable(5, 2, DEFAULT_EPS).verdict);
        let wide = verify_non_dualizable(5, 4, DEFAULT_EPS);
        assert!(!wide.applicable && !wide.verdict);
        assert!(has_one_ss_dual(&non_dualizable_matrix(5).unwrap(), 4, DEFAULT_EPS));
        let edge = verify_non_dualizable(3, 2, DEFAULT_EPS);
        assert!(!edge.applicable);
    }

    #[test]
    fn table_lists_every_measurement() {
        let r = verify_non_dualizable(6, 3, DEFAULT_EPS);
        let table = r.to_table();
        assert_eq!(table.lines().filter(|l| l.ends_with("yes")).count(), r.measurements.len());
    }
}
