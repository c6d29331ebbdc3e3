//! Diagonal state-space model execution.
//!
//! Three routes compute the same map `Y = M·X`:
//!
//! * [`forward_recurrence`]: `h_t = A^t h_{t-1} + b_t x_t`, `y_t = c_tᵀ h_t`
//!   with `h_0 = 0`, one left-to-right pass;
//! * [`forward_ssd`]: per mode `n`, scale rows by `bⁿ`, scan with gains
//!   `aⁿ`, scale rows by `cⁿ`, then sum the modes in ascending order;
//! * [`forward_materialized`]: build the kernel
//!   `M[t][s] = Σ_n c_t[n]·(a_t[n]···a_{s+1}[n])·b_s[n]` and multiply.
//!
//! The gain row of step 0 (`A¹`) is stored but never read.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdError};
use crate::io::{SequenceFile, SsmFile};
use crate::ss_matrix::LowerTriangularMatrix;

/// Time-varying diagonal SSM parameters, each stored `T × N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SsmFile", into = "SsmFile")]
pub struct DiagonalSsm {
    gains: DMatrix<f64>,
    input_weights: DMatrix<f64>,
    output_weights: DMatrix<f64>,
}

impl DiagonalSsm {
    /// `gains[t][n]` is `A^t_{n,n}`; `input_weights` holds rows `b_tᵀ` and
    /// `output_weights` rows `c_tᵀ`.
    pub fn new(gains: DMatrix<f64>, input_weights: DMatrix<f64>, output_weights: DMatrix<f64>) -> Result<Self> {
        let shape = gains.shape();
        if shape.0 == 0 {
            return Err(SsdError::EmptyDimension { what: "T" });
        }
        if shape.1 == 0 {
            return Err(SsdError::EmptyDimension { what: "N" });
        }
        for (what, m) in [("b", &input_weights), ("c", &output_weights)] {
            if m.shape() != shape {
                return Err(SsdError::ShapeMismatch {
                    what,
                    expected: format!("{}x{}", shape.0, shape.1),
                    got: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
        }
        if [&gains, &input_weights, &output_weights]
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(SsdError::NonFinite { what: "ssm parameters" });
        }
        Ok(Self {
            gains,
            input_weights,
            output_weights,
        })
    }

    pub fn steps(&self) -> usize {
        self.gains.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.gains.ncols()
    }

    pub fn gains(&self) -> &DMatrix<f64> {
        &self.gains
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.input_weights
    }

    pub fn output_weights(&self) -> &DMatrix<f64> {
        &self.output_weights
    }

    /// First step `t ≥ 1` whose diagonal entries differ, if any.
    pub fn scalar_identity_violation(&self) -> Option<usize> {
        (1..self.steps()).find(|&t| {
            let row = self.gains.row(t);
            row.iter().any(|&v| v != row[0])
        })
    }

    pub(crate) fn params(&self) -> kernels::Params<'_, f64> {
        kernels::Params {
            steps: self.steps(),
            modes: self.state_dim(),
            gains: self.gains.as_slice(),
            input: self.input_weights.as_slice(),
            output: self.output_weights.as_slice(),
        }
    }

    fn check_input(&self, x: &SequenceData) -> Result<()> {
        if x.steps() != self.steps() {
            return Err(SsdError::ShapeMismatch {
                what: "input sequence length",
                expected: self.steps().to_string(),
                got: x.steps().to_string(),
            });
        }
        Ok(())
    }
}

/// `T × d` sequence; row `t` is token `x_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceFile", into = "SequenceFile")]
pub struct SequenceData {
    values: DMatrix<f64>,
}

impl SequenceData {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(SsdError::EmptyDimension { what: "T" });
        }
        if values.ncols() == 0 {
            return Err(SsdError::EmptyDimension { what: "d" });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SsdError::NonFinite { what: "sequence" });
        }
        Ok(Self { values })
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn from_column_major(steps: usize, channels: usize, data: Vec<f64>) -> Self {
        Self {
            values: DMatrix::from_vec(steps, channels, data),
        }
    }
}

/// Latent state `h ∈ ℝ^{N×d}` for step-by-step execution.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    state: DMatrix<f64>,
    step: usize,
}

impl HiddenState {
    pub fn zeros(modes: usize, channels: usize) -> Self {
        Self {
            state: DMatrix::zeros(modes, channels),
            step: 0,
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.state
    }

    /// Consumes `x_t` for the next step and returns `y_t`. Uses the same
    /// operation order as [`forward_recurrence`], so results agree bitwise.
    pub fn advance(&mut self, ssm: &DiagonalSsm, token: &[f64]) -> Result<Vec<f64>> {
        let t = self.step;
        if t >= ssm.steps() {
            return Err(SsdError::InvalidArgument(format!("sequence already consumed {t} steps")));
        }
        if token.len() != self.state.ncols() || ssm.state_dim() != self.state.nrows() {
            return Err(SsdError::ShapeMismatch {
                what: "token",
                expected: format!("{} channels, {} modes", self.state.ncols(), self.state.nrows()),
                got: format!("{} channels, {} modes", token.len(), ssm.state_dim()),
            });
        }
        let mut out = vec![0.0; token.len()];
        for n in 0..ssm.state_dim() {
            let b = ssm.input_weights[(t, n)];
            let c = ssm.output_weights[(t, n)];
            for (ch, &x) in token.iter().enumerate() {
                let drive = b * x;
                let h = if t == 0 {
                    drive
                } else {
                    ssm.gains[(t, n)] * self.state[(n, ch)] + drive
                };
                self.state[(n, ch)] = h;
                out[ch] += c * h;
            }
        }
        self.step += 1;
        Ok(out)
    }
}

pub fn forward_recurrence(ssm: &DiagonalSsm, x: &SequenceData) -> Result<SequenceData> {
    ssm.check_input(x)?;
    let y = kernels::recurrence(&ssm.params(), x.values.as_slice(), x.channels());
    Ok(SequenceData::from_column_major(x.steps(), x.channels(), y.into_vec()))
}

pub fn materialize_kernel(ssm: &DiagonalSsm) -> LowerTriangularMatrix {
    let steps = ssm.steps();
    let kernel = kernels::materialize(&ssm.params());
    LowerTriangularMatrix::new(DMatrix::from_vec(steps, steps, kernel.into_vec()))
        .expect("kernel is lower triangular by construction")
}

pub fn forward_materialized(ssm: &DiagonalSsm, x: &SequenceData) -> Result<SequenceData> {
    ssm.check_input(x)?;
    let y = kernels::materialized_forward(&ssm.params(), x.values.as_slice(), x.channels());
    Ok(SequenceData::from_column_major(x.steps(), x.channels(), y.into_vec()))
}

fn check_rows(what: &'static str, len: usize, y: &DMatrix<f64>) -> Result<()> {
    if len != y.nrows() {
        return Err(SsdError::ShapeMismatch {
            what,
            expected: y.nrows().to_string(),
            got: len.to_string(),
        });
    }
    Ok(())
}

/// Row `t` of the result is `weights[t] · Y[t, :]`.
pub fn scale_rows(weights: &[f64], y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows("scale vector length", weights.len(), y)?;
    let out = kernels::scale_rows(weights, y.as_slice(), y.ncols());
    Ok(DMatrix::from_vec(y.nrows(), y.ncols(), out.into_vec()))
}

/// Gated prefix scan: row 0 copies `Y[0, :]`, row `t` is
/// `gains[t] · out[t-1, :] + Y[t, :]`. `gains[0]` is never read.
pub fn scan(gains: &[f64], y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows("scan gain length", gains.len(), y)?;
    let out = kernels::scan(gains, y.as_slice(), y.ncols());
    Ok(DMatrix::from_vec(y.nrows(), y.ncols(), out.into_vec()))
}

/// Diagonal SSD: `N` independent scale–scan–scale pipelines summed in
/// ascending mode order. `Θ(NTd)` work.
pub fn forward_ssd(ssm: &DiagonalSsm, x: &SequenceData) -> Result<SequenceData> {
    ssm.check_input(x)?;
    let y = kernels::ssd(&ssm.params(), x.values.as_slice(), x.channels());
    Ok(SequenceData::from_column_major(x.steps(), x.channels(), y.into_vec()))
}

/// [`forward_ssd`] with the `N·d` per-mode, per-channel pipelines spread over
/// `workers` threads. The mode reduction still runs in ascending order, so
/// the output is bitwise identical to the sequential path.
pub fn forward_ssd_parallel(ssm: &DiagonalSsm, x: &SequenceData, workers: usize) -> Result<SequenceData> {
    ssm.check_input(x)?;
    if workers == 0 {
        return Err(SsdError::InvalidArgument("workers must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SsdError::InvalidArgument(format!("thread pool: {e}")))?;
    let steps = ssm.steps();
    let modes = ssm.state_dim();
    let channels = x.channels();
    let params = ssm.params();
    let xs = x.values.as_slice();

    let columns: Vec<Vec<f64>> = pool.install(|| {
        (0..modes * channels)
            .into_par_iter()
            .map(|job| {
                let (n, ch) = (job / channels, job % channels);
                kernels::mode_channel(&params, n, &xs[ch * steps..(ch + 1) * steps]).into_vec()
            })
            .collect()
    });

    let mut y = vec![0.0; steps * channels];
    for n in 0..modes {
        for ch in 0..channels {
            let part = &columns[n * channels + ch];
            for (dst, &src) in y[ch * steps..(ch + 1) * steps].iter_mut().zip(part) {
                *dst += src;
            }
        }
    }
    Ok(SequenceData::from_column_major(steps, channels, y))
}

/// Scalar-generic kernels on column-major slices. Instantiated with `f64`
/// for normal use and with [`crate::numeric::Counted`] for FLOP counting.
pub mod kernels {
    use crate::numeric::{Buf, Real};

    /// Column-major `T × N` parameter views.
    #[derive(Debug, Clone, Copy)]
    pub struct Params<'a, T> {
        pub steps: usize,
        pub modes: usize,
        pub gains: &'a [T],
        pub input: &'a [T],
        pub output: &'a [T],
    }

    impl<'a, T: Real> Params<'a, T> {
        #[inline]
        fn column(data: &'a [T], steps: usize, n: usize) -> &'a [T] {
            &data[n * steps..(n + 1) * steps]
        }

        pub fn gain_column(&self, n: usize) -> &'a [T] {
            Self::column(self.gains, self.steps, n)
        }

        pub fn input_column(&self, n: usize) -> &'a [T] {
            Self::column(self.input, self.steps, n)
        }

        pub fn output_column(&self, n: usize) -> &'a [T] {
            Self::column(self.output, self.steps, n)
        }
    }

    pub fn recurrence<T: Real>(p: &Params<T>, x: &[T], channels: usize) -> Buf<T> {
        let steps = p.steps;
        let mut state = Buf::<T>::zeros(p.modes * channels);
        let mut y = Buf::<T>::zeros(steps * channels);
        for t in 0..steps {
            for n in 0..p.modes {
                let a = p.gains[n * steps + t];
                let b = p.input[n * steps + t];
                let c = p.output[n * steps + t];
                for ch in 0..channels {
                    let drive = b.mul(x[ch * steps + t]);
                    let slot = n * channels + ch;
                    let h = if t == 0 {
                        T::note_copies(1);
                        drive
                    } else {
                        a.madd(state[slot], drive)
                    };
                    state[slot] = h;
                    let out = &mut y[ch * steps + t];
                    *out = out.add(c.mul(h));
                }
            }
        }
        y
    }

    pub fn scale_rows<T: Real>(weights: &[T], y: &[T], channels: usize) -> Buf<T> {
        let steps = weights.len();
        let mut out = Buf::<T>::zeros(steps * channels);
        for ch in 0..channels {
            for t in 0..steps {
                out[ch * steps + t] = weights[t].mul(y[ch * steps + t]);
            }
        }
        out
    }

    pub fn scan<T: Real>(gains: &[T], y: &[T], channels: usize) -> Buf<T> {
        let steps = gains.len();
        let mut out = Buf::<T>::zeros(steps * channels);
        for ch in 0..channels {
            let base = ch * steps;
            out[base] = y[base];
            T::note_copies(1);
            for t in 1..steps {
                out[base + t] = gains[t].madd(out[base + t - 1], y[base + t]);
            }
        }
        out
    }

    pub fn ssd<T: Real>(p: &Params<T>, x: &[T], channels: usize) -> Buf<T> {
        let mut y = Buf::<T>::zeros(p.steps * channels);
        for n in 0..p.modes {
            let z = scale_rows(p.input_column(n), x, channels);
            let h = scan(p.gain_column(n), &z, channels);
            drop(z);
            let part = scale_rows(p.output_column(n), &h, channels);
            drop(h);
            for (dst, &src) in y.iter_mut().zip(part.iter()) {
                *dst = dst.add(src);
            }
        }
        y
    }

    /// One mode applied to one input channel: `cⁿ ⊙ g(aⁿ, bⁿ ⊙ x)`.
    pub fn mode_channel<T: Real>(p: &Params<T>, n: usize, x: &[T]) -> Buf<T> {
        let z = scale_rows(p.input_column(n), x, 1);
        let h = scan(p.gain_column(n), &z, 1);
        scale_rows(p.output_column(n), &h, 1)
    }

    /// Column-major `T × T` kernel, built column by column with a running
    /// product vector `v = (a_t···a_{s+1}) ⊙ b_s`.
    pub fn materialize<T: Real>(p: &Params<T>) -> Buf<T> {
        let steps = p.steps;
        let mut kernel = Buf::<T>::zeros(steps * steps);
        let mut running = Buf::<T>::zeros(p.modes);
        for s in 0..steps {
            for n in 0..p.modes {
                running[n] = p.input[n * steps + s];
            }
            T::note_copies(p.modes);
            for t in s..steps {
                let mut acc = T::ZERO;
                for n in 0..p.modes {
                    if t > s {
                        running[n] = p.gains[n * steps + t].mul(running[n]);
                    }
                    acc = p.output[n * steps + t].madd(running[n], acc);
                }
                kernel[s * steps + t] = acc;
            }
        }
        kernel
    }

    /// Lower-triangular product `M · X` for a column-major kernel.
    pub fn lower_matmul<T: Real>(kernel: &[T], steps: usize, x: &[T], channels: usize) -> Buf<T> {
        let mut y = Buf::<T>::zeros(steps * channels);
        for ch in 0..channels {
            for t in 0..steps {
                let mut acc = T::ZERO;
                for s in 0..=t {
                    acc = kernel[s * steps + t].madd(x[ch * steps + s], acc);
                }
                y[ch * steps + t] = acc;
            }
        }
        y
    }

    pub fn materialized_forward<T: Real>(p: &Params<T>, x: &[T], channels: usize) -> Buf<T> {
        let kernel = materialize(p);
        lower_matmul(&kernel, p.steps, x, channels)
    }
}
