//! Extraction of a general sequentially-semiseparable representation
//! `M[j][i] = c_jᵀ·A^j···A^{i+1}·b_i` from an `N`-semiseparable matrix.
//!
//! For every step `t` the block `M[t.., ..=t]` is factored as `W_t·U_t`
//! (rank `r_t ≤ N`, zero-padded to width `N`). Consecutive factors overlap
//! on `M[t+1.., ..=t]`, so `W_t` without its first row equals
//! `W_{t+1}·A^{t+1}`, which defines the transitions. Then `c_t` is the first
//! row of `W_t` and `b_t` the last column of `U_t`.
//!
//! Cost is `O(T)` SVDs of `O(T)`-sized blocks, well above the `O(NTd)` of
//! the diagonal kernels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdError};
use crate::io::{matrix_to_rows, rows_to_matrix};
use crate::linalg;
use crate::ss_matrix::{lower_block, LowerTriangularMatrix};

/// General representation with dense `N × N` transitions.
///
/// `transitions[0]` is the identity by convention and never read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RepresentationFile", into = "RepresentationFile")]
pub struct GeneralSssRepresentation {
    transitions: Vec<DMatrix<f64>>,
    input_weights: DMatrix<f64>,
    output_weights: DMatrix<f64>,
    ranks: Vec<usize>,
}

impl GeneralSssRepresentation {
    pub fn new(
        transitions: Vec<DMatrix<f64>>,
        input_weights: DMatrix<f64>,
        output_weights: DMatrix<f64>,
        ranks: Vec<usize>,
    ) -> Result<Self> {
        let steps = transitions.len();
        if steps == 0 {
            return Err(SsdError::EmptyDimension { what: "T" });
        }
        let width = input_weights.ncols();
        if width == 0 {
            return Err(SsdError::EmptyDimension { what: "N" });
        }
        let expect = |what: &'static str, ok: bool, expected: String, got: String| {
            if ok {
                Ok(())
            } else {
                Err(SsdError::ShapeMismatch { what, expected, got })
            }
        };
        expect(
            "b",
            input_weights.nrows() == steps,
            format!("{steps}x{width}"),
            format!("{}x{}", input_weights.nrows(), width),
        )?;
        expect(
            "c",
            output_weights.shape() == (steps, width),
            format!("{steps}x{width}"),
            format!("{}x{}", output_weights.nrows(), output_weights.ncols()),
        )?;
        expect("r", ranks.len() == steps, steps.to_string(), ranks.len().to_string())?;
        for (t, a) in transitions.iter().enumerate() {
            expect(
                "transition",
                a.shape() == (width, width),
                format!("{width}x{width}"),
                format!("{}x{} at step {t}", a.nrows(), a.ncols()),
            )?;
        }
        for (t, &r) in ranks.iter().enumerate() {
            let cap = width.min(steps - t).min(t + 1);
            if r > cap {
                return Err(SsdError::InvalidArgument(format!(
                    "rank {r} at step {t} exceeds min(N, T - t, t + 1) = {cap}"
                )));
            }
        }
        let all_finite = transitions
            .iter()
            .chain([&input_weights, &output_weights])
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(SsdError::NonFinite { what: "representation" });
        }
        Ok(Self {
            transitions,
            input_weights,
            output_weights,
            ranks,
        })
    }

    pub fn steps(&self) -> usize {
        self.transitions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.input_weights
    }

    pub fn output_weights(&self) -> &DMatrix<f64> {
        &self.output_weights
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Steps `t ≥ 1` where `A^t` has a nonzero entry outside its leading
    /// `r_t × r_{t-1}` block.
    pub fn padding_violations(&self) -> Vec<usize> {
        (1..self.steps())
            .filter(|&t| {
                let a = &self.transitions[t];
                let (rows, cols) = (self.ranks[t], self.ranks[t - 1]);
                a.iter().enumerate().any(|(idx, &v)| {
                    let (i, j) = (idx % a.nrows(), idx / a.nrows());
                    v != 0.0 && (i >= rows || j >= cols)
                })
            })
            .collect()
    }
}

/// `{"T":..,"N":..,"A":[[[...]]],"b":[[...]],"c":[[...]],"r":[...]}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepresentationFile {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub width: usize,
    #[serde(rename = "A")]
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub r: Vec<usize>,
}

impl TryFrom<RepresentationFile> for GeneralSssRepresentation {
    type Error = SsdError;
    fn try_from(f: RepresentationFile) -> Result<Self> {
        if f.transitions.len() != f.steps {
            return Err(SsdError::ShapeMismatch {
                what: "A",
                expected: f.steps.to_string(),
                got: f.transitions.len().to_string(),
            });
        }
        let transitions = f
            .transitions
            .iter()
            .map(|a| rows_to_matrix("A", a))
            .collect::<Result<Vec<_>>>()?;
        let b = rows_to_matrix("b", &f.b)?;
        if b.ncols() != f.width {
            return Err(SsdError::ShapeMismatch {
                what: "b",
                expected: format!("{} columns", f.width),
                got: format!("{} columns", b.ncols()),
            });
        }
        GeneralSssRepresentation::new(transitions, b, rows_to_matrix("c", &f.c)?, f.r)
    }
}

impl From<GeneralSssRepresentation> for RepresentationFile {
    fn from(rep: GeneralSssRepresentation) -> Self {
        Self {
            steps: rep.steps(),
            width: rep.state_dim(),
            transitions: rep.transitions.iter().map(matrix_to_rows).collect(),
            b: matrix_to_rows(&rep.input_weights),
            c: matrix_to_rows(&rep.output_weights),
            r: rep.ranks,
        }
    }
}

/// Column-by-column evaluation with a running state vector, `O(T²N²)`.
pub fn materialize_sss(rep: &GeneralSssRepresentation) -> LowerTriangularMatrix {
    let steps = rep.steps();
    let mut m = DMatrix::zeros(steps, steps);
    for i in 0..steps {
        let mut state = rep.input_weights.row(i).transpose();
        m[(i, i)] = rep.output_weights.row(i).dot(&state.transpose());
        for j in i + 1..steps {
            state = &rep.transitions[j] * state;
            m[(j, i)] = rep.output_weights.row(j).dot(&state.transpose());
        }
    }
    LowerTriangularMatrix::new(m).expect("lower triangular by construction")
}

/// Balanced factorization of `M[t.., ..=t]`.
#[derive(Debug, Clone)]
pub struct RankFactorStep {
    /// `(T - t) × N`, nonzero only in the leading `rank` columns.
    pub w: DMatrix<f64>,
    /// `N × (t + 1)`, nonzero only in the leading `rank` rows.
    pub u: DMatrix<f64>,
    pub rank: usize,
}

pub fn rank_factor_step(m: &LowerTriangularMatrix, t: usize, width: usize, eps: f64) -> Result<RankFactorStep> {
    if t >= m.size() {
        return Err(SsdError::InvalidArgument(format!("step {t} outside 0..{}", m.size())));
    }
    let f = linalg::rank_factorize(&lower_block(m, t), eps, width);
    if f.numerical_rank > width {
        return Err(SsdError::RankExceedsN {
            step: t,
            rank: f.numerical_rank,
            n: width,
        });
    }
    Ok(RankFactorStep {
        w: f.left,
        u: f.right,
        rank: f.rank,
    })
}

fn zero_outside_leading(a: &mut DMatrix<f64>, rows: usize, cols: usize) {
    let (h, w) = a.shape();
    for j in 0..w {
        for i in 0..h {
            if i >= rows || j >= cols {
                a[(i, j)] = 0.0;
            }
        }
    }
}

/// Solves `W_next · A = W_trunc` by pseudo-inverse and keeps only the
/// leading `next_rank × cur_rank` block of `A`.
///
/// `step` only labels the error.
pub fn solve_transition(
    w_next: &DMatrix<f64>,
    w_trunc: &DMatrix<f64>,
    next_rank: usize,
    cur_rank: usize,
    eps: f64,
    step: usize,
) -> Result<DMatrix<f64>> {
    let mut a = linalg::pseudo_inverse(w_next, eps) * w_trunc;
    zero_outside_leading(&mut a, next_rank, cur_rank);
    let residual = relative_residual(&(w_next * &a), w_trunc);
    if residual > eps {
        return Err(SsdError::InconsistentTransition {
            step,
            side: "column",
            residual,
        });
    }
    Ok(a)
}

fn relative_residual(approx: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    let diff = (approx - target).norm();
    let scale = target.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Extracts a representation of state width `width` from `M`.
///
/// Fails with [`SsdError::RankExceedsN`] when some block needs more than
/// `width` ranks, and with [`SsdError::InconsistentTransition`] when a
/// transition leaves a residual above `eps` on either overlap condition.
pub fn extract_sss(m: &LowerTriangularMatrix, width: usize, eps: f64) -> Result<GeneralSssRepresentation> {
    if width == 0 {
        return Err(SsdError::EmptyDimension { what: "N" });
    }
    let steps = m.size();
    let factors = (0..steps)
        .map(|t| rank_factor_step(m, t, width, eps))
        .collect::<Result<Vec<_>>>()?;

    let mut transitions = Vec::with_capacity(steps);
    transitions.push(DMatrix::identity(width, width));
    for t in 0..steps - 1 {
        let (cur, next) = (&factors[t], &factors[t + 1]);
        let w_trunc = cur.w.rows(1, steps - t - 1).into_owned();
        let a = solve_transition(&next.w, &w_trunc, next.rank, cur.rank, eps, t + 1)?;
        let u_trunc = next.u.columns(0, t + 1).into_owned();
        let residual = relative_residual(&(&a * &cur.u), &u_trunc);
        if residual > eps {
            return Err(SsdError::InconsistentTransition {
                step: t + 1,
                side: "row",
                residual,
            });
        }
        transitions.push(a);
    }

    let mut input_weights = DMatrix::zeros(steps, width);
    let mut output_weights = DMatrix::zeros(steps, width);
    for (t, f) in factors.iter().enumerate() {
        output_weights.set_row(t, &f.w.row(0));
        input_weights.set_row(t, &f.u.column(t).transpose());
    }
    let ranks = factors.iter().map(|f| f.rank).collect();
    GeneralSssRepresentation::new(transitions, input_weights, output_weights, ranks)
}

/// `‖materialize_sss(rep) − M‖_F / ‖M‖_F`.
pub fn round_trip_error(m: &LowerTriangularMatrix, rep: &GeneralSssRepresentation) -> f64 {
    linalg::relative_frobenius(materialize_sss(rep).as_matrix(), m.as_matrix())
}
