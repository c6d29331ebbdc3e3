//! Masked-attention duals of state-space kernels.
//!
//! Orientation: every kernel here is `M[t][s] = c_tᵀ(A^t···A^{s+1})b_s`, so
//! the output weights play the role of queries (`Q = C`) and the input
//! weights the role of keys (`K = B`).
//!
//! Covered constructions:
//! * scalar-identity SSMs: `M = 1SS(a) ⊙ (C·Bᵀ)`;
//! * any diagonal SSM: `M = Σ_n 1SS(aⁿ) ⊙ (cⁿ·bⁿᵀ)`;
//! * diagonal SSMs with nonzero gains: `M = 1SS(1,…,1) ⊙ (Q·Kᵀ)` after
//!   rescaling by cumulative gain products;
//! * arbitrary lower-triangular `M`: a dual of width `N` exists iff the
//!   finest diagonal-block partition has at most `N` new columns per block,
//!   and [`construct_one_ss_dual`] builds one when it does.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdError};
use crate::io::{matrix_to_rows, rows_to_matrix};
use crate::linalg;
use crate::ss_matrix::{column_verdicts, diagonal_block_partition, one_ss, LowerTriangularMatrix, MaskVector};
use crate::ssm::{DiagonalSsm, SequenceData};

/// Largest allowed spread `max|Pⁿ_t| / min|Pⁿ_t|` of cumulative gains in
/// [`full_rank_one_ss_dual`].
pub const MAX_SCALING_RATIO: f64 = 1e12;

/// One mode of the attention-like decomposition, `1SS(aⁿ) ⊙ (cⁿ·bⁿᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneMaskedTerm {
    pub mode: usize,
    pub gains: Vec<f64>,
    pub output: Vec<f64>,
    pub input: Vec<f64>,
}

/// `one_ss(p) ⊙ (Q·Kᵀ)` with `Q, K ∈ ℝ^{T×N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorsFile", into = "FactorsFile")]
pub struct MaskedAttentionFactors {
    mask: MaskVector,
    queries: DMatrix<f64>,
    keys: DMatrix<f64>,
}

impl MaskedAttentionFactors {
    pub fn new(mask: MaskVector, queries: DMatrix<f64>, keys: DMatrix<f64>) -> Result<Self> {
        let steps = mask.len();
        if queries.nrows() != steps || keys.shape() != queries.shape() {
            return Err(SsdError::ShapeMismatch {
                what: "attention factors",
                expected: format!("Q and K both {steps}x{}", queries.ncols()),
                got: format!(
                    "Q {}x{}, K {}x{}",
                    queries.nrows(),
                    queries.ncols(),
                    keys.nrows(),
                    keys.ncols()
                ),
            });
        }
        if queries.iter().chain(keys.iter()).any(|v| !v.is_finite()) {
            return Err(SsdError::NonFinite { what: "attention factors" });
        }
        Ok(Self { mask, queries, keys })
    }

    pub fn steps(&self) -> usize {
        self.mask.len()
    }

    pub fn width(&self) -> usize {
        self.queries.ncols()
    }

    pub fn mask(&self) -> &MaskVector {
        &self.mask
    }

    pub fn queries(&self) -> &DMatrix<f64> {
        &self.queries
    }

    pub fn keys(&self) -> &DMatrix<f64> {
        &self.keys
    }

    /// The lower-triangular matrix `one_ss(p) ⊙ (Q·Kᵀ)`.
    pub fn materialize(&self) -> LowerTriangularMatrix {
        let scores = &self.queries * self.keys.transpose();
        let mask = one_ss(&self.mask);
        LowerTriangularMatrix::from_fn(self.steps(), |t, s| mask.get(t, s) * scores[(t, s)])
    }
}

/// `{"p":[...], "Q":[[...]], "K":[[...]]}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorsFile {
    pub p: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
}

impl TryFrom<FactorsFile> for MaskedAttentionFactors {
    type Error = SsdError;
    fn try_from(f: FactorsFile) -> Result<Self> {
        let width = f.q.first().map_or(0, Vec::len);
        let shape = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            if rows.is_empty() {
                Ok(DMatrix::zeros(0, width))
            } else {
                rows_to_matrix("attention factor", rows)
            }
        };
        MaskedAttentionFactors::new(MaskVector::new(f.p)?, shape(&f.q)?, shape(&f.k)?)
    }
}

impl From<MaskedAttentionFactors> for FactorsFile {
    fn from(f: MaskedAttentionFactors) -> Self {
        Self {
            p: f.mask.as_slice().to_vec(),
            q: matrix_to_rows(&f.queries),
            k: matrix_to_rows(&f.keys),
        }
    }
}

/// Dual of a scalar-identity SSM: `p = (a_1,…,a_T)`, `Q = C`, `K = B`.
pub fn scalar_identity_dual(ssm: &DiagonalSsm) -> Result<MaskedAttentionFactors> {
    if let Some(step) = ssm.scalar_identity_violation() {
        return Err(SsdError::NotScalarIdentity { step });
    }
    let mask = MaskVector::new(ssm.gains().column(0).iter().copied().collect())?;
    MaskedAttentionFactors::new(mask, ssm.output_weights().clone(), ssm.input_weights().clone())
}

pub fn attention_like_decomposition(ssm: &DiagonalSsm) -> Vec<RankOneMaskedTerm> {
    (0..ssm.state_dim())
        .map(|n| RankOneMaskedTerm {
            mode: n,
            gains: ssm.gains().column(n).iter().copied().collect(),
            output: ssm.output_weights().column(n).iter().copied().collect(),
            input: ssm.input_weights().column(n).iter().copied().collect(),
        })
        .collect()
}

/// Entry `(t, s)` is `(a_t···a_{s+1})·c_t·b_s` for `t ≥ s`.
pub fn materialize_term(term: &RankOneMaskedTerm) -> LowerTriangularMatrix {
    let steps = term.gains.len();
    let mut m = DMatrix::zeros(steps, steps);
    for s in 0..steps {
        let mut running = term.input[s];
        m[(s, s)] = term.output[s] * running;
        for t in s + 1..steps {
            running *= term.gains[t];
            m[(t, s)] = term.output[t] * running;
        }
    }
    LowerTriangularMatrix::new(m).expect("term is lower triangular by construction")
}

/// Dual with an all-ones mask for a diagonal SSM with nonzero gains.
///
/// With `Pⁿ_t = aⁿ_2···aⁿ_t` (`Pⁿ_1 = 1`): `Q[t][n] = cⁿ_t·Pⁿ_t` and
/// `K[s][n] = bⁿ_s / Pⁿ_s`, so `Q_t·K_s = Σ_n cⁿ_t (aⁿ_t···aⁿ_{s+1}) bⁿ_s`.
pub fn full_rank_one_ss_dual(ssm: &DiagonalSsm) -> Result<MaskedAttentionFactors> {
    let steps = ssm.steps();
    let modes = ssm.state_dim();
    let gains = ssm.gains();
    for t in 1..steps {
        for n in 0..modes {
            if gains[(t, n)] == 0.0 {
                return Err(SsdError::ZeroGain { step: t, mode: n });
            }
        }
    }
    let mut queries = DMatrix::zeros(steps, modes);
    let mut keys = DMatrix::zeros(steps, modes);
    for n in 0..modes {
        let mut cumulative = Vec::with_capacity(steps);
        let mut running = 1.0f64;
        for t in 0..steps {
            if t > 0 {
                running *= gains[(t, n)];
            }
            cumulative.push(running);
        }
        let (lo, hi) = cumulative
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.abs()), hi.max(p.abs())));
        let ratio = hi / lo;
        if !ratio.is_finite() || ratio > MAX_SCALING_RATIO {
            return Err(SsdError::UnstableScaling {
                mode: n,
                ratio,
                limit: MAX_SCALING_RATIO,
            });
        }
        for (t, &p) in cumulative.iter().enumerate() {
            queries[(t, n)] = ssm.output_weights()[(t, n)] * p;
            keys[(t, n)] = ssm.input_weights()[(t, n)] / p;
        }
    }
    MaskedAttentionFactors::new(MaskVector::ones(steps), queries, keys)
}

/// `Y = (one_ss(p) ⊙ (Q·Kᵀ))·X`, dense `O(T²(N + d))`.
pub fn masked_attention_forward(factors: &MaskedAttentionFactors, x: &SequenceData) -> Result<SequenceData> {
    if x.steps() != factors.steps() {
        return Err(SsdError::ShapeMismatch {
            what: "input sequence length",
            expected: factors.steps().to_string(),
            got: x.steps().to_string(),
        });
    }
    let scores = factors.materialize();
    SequenceData::new(scores.as_matrix() * x.as_matrix())
}

/// New-column count of one diagonal block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCount {
    pub range: Range<usize>,
    pub new_columns: usize,
    /// Block-local columns whose newness verdict was within 10x of the
    /// threshold.
    pub borderline: Vec<usize>,
}

/// Finest diagonal-block partition with the new-column count of each block,
/// taken on the block's own submatrix.
pub fn count_block_new_columns(m: &LowerTriangularMatrix, eps: f64) -> Vec<BlockCount> {
    diagonal_block_partition(m, eps)
        .blocks
        .into_iter()
        .map(|range| {
            let verdicts = column_verdicts(&m.diagonal_block(range.clone()), eps);
            let borderline: Vec<usize> = verdicts
                .iter()
                .filter(|v| v.is_borderline(eps))
                .map(|v| v.index)
                .collect();
            for &col in &borderline {
                log::warn!(
                    "column {} is borderline for newness at eps {eps:e}",
                    range.start + col
                );
            }
            BlockCount {
                new_columns: verdicts.iter().filter(|v| v.is_new).count(),
                range,
                borderline,
            }
        })
        .collect()
}

pub fn has_one_ss_dual(m: &LowerTriangularMatrix, width: usize, eps: f64) -> bool {
    count_block_new_columns(m, eps).iter().all(|b| b.new_columns <= width)
}

/// JSON report: `{"blocks":[{"start":..,"end":..,"new_columns":..}],
/// "representable": bool}`. `start` and `end` are one-based and inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentabilityReport {
    pub blocks: Vec<BlockEntry>,
    pub representable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub start: usize,
    pub end: usize,
    pub new_columns: usize,
}

pub fn representability_report(m: &LowerTriangularMatrix, width: usize, eps: f64) -> RepresentabilityReport {
    let counts = count_block_new_columns(m, eps);
    let warnings = counts
        .iter()
        .flat_map(|b| {
            b.borderline.iter().map(move |&col| {
                format!("column {} is within 10x of the newness threshold", b.range.start + col + 1)
            })
        })
        .collect();
    RepresentabilityReport {
        representable: counts.iter().all(|b| b.new_columns <= width),
        blocks: counts
            .iter()
            .map(|b| BlockEntry {
                start: b.range.start + 1,
                end: b.range.end,
                new_columns: b.new_columns,
            })
            .collect(),
        warnings,
    }
}

/// Rewrites the strictly-upper part of a block so that its rank equals its
/// new-column count: a new column keeps zeros above the diagonal; any other
/// column `t` takes `Σ_s γ_s·(modified column s)` there, with `γ` the
/// least-squares coefficients of `M[t.., t]` on `M[t.., ..t]`.
pub fn low_rank_completion(block: &LowerTriangularMatrix, eps: f64) -> DMatrix<f64> {
    let size = block.size();
    let lower = block.as_matrix();
    let mut completed = lower.clone();
    for verdict in column_verdicts(block, eps) {
        let t = verdict.index;
        if verdict.is_new || t == 0 {
            continue;
        }
        let column: DVector<f64> = lower.view((t, t), (size - t, 1)).column(0).into_owned();
        let basis = lower.view((t, 0), (size - t, t)).into_owned();
        let (coeffs, _) = linalg::least_squares(&basis, &column, eps);
        for row in 0..t {
            let mut value = 0.0;
            for (s, &g) in coeffs.iter().enumerate() {
                value += g * completed[(row, s)];
            }
            completed[(row, t)] = value;
        }
    }
    completed
}

/// Builds `(p, Q, K)` of width `width` with `one_ss(p) ⊙ (Q·Kᵀ) = M`.
///
/// `p` is zero at every block start and one elsewhere; each block's factors
/// come from a truncated SVD of its [`low_rank_completion`], zero-padded to
/// `width` columns.
pub fn construct_one_ss_dual(m: &LowerTriangularMatrix, width: usize, eps: f64) -> Result<MaskedAttentionFactors> {
    let counts = count_block_new_columns(m, eps);
    if let Some(bad) = counts.iter().find(|b| b.new_columns > width) {
        return Err(SsdError::NotRepresentable {
            n: width,
            start: bad.range.start,
            end: bad.range.end - 1,
            new_columns: bad.new_columns,
        });
    }
    let steps = m.size();
    let mut mask = vec![1.0; steps];
    let mut queries = DMatrix::zeros(steps, width);
    let mut keys = DMatrix::zeros(steps, width);
    for block in &counts {
        let range = block.range.clone();
        mask[range.start] = 0.0;
        let completed = low_rank_completion(&m.diagonal_block(range.clone()), eps);
        let factors = linalg::rank_factorize(&completed, eps, width);
        let len = range.len();
        queries.view_mut((range.start, 0), (len, width)).copy_from(&factors.left);
        keys.view_mut((range.start, 0), (len, width)).copy_from(&factors.right.transpose());
    }
    let factors = MaskedAttentionFactors::new(MaskVector::new(mask)?, queries, keys)?;
    let residual = (factors.materialize().as_matrix() - m.as_matrix()).norm();
    let tolerance = eps * m.frobenius_norm();
    if residual > tolerance {
        return Err(SsdError::ReconstructionFailure { residual, tolerance });
    }
    Ok(factors)
}
