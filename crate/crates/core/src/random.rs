//! Deterministic random instances keyed by a `u64` seed.
//!
//! ChaCha8 keeps streams identical across platforms, so generated files are
//! reproducible byte for byte.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::duality::MaskedAttentionFactors;
use crate::ss_matrix::{LowerTriangularMatrix, MaskVector};
use crate::ssm::{DiagonalSsm, SequenceData};
use crate::sss_extract::GeneralSssRepresentation;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Magnitude interval `[lo, hi]` for generated gains, optionally with a
/// random sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainRange {
    pub lo: f64,
    pub hi: f64,
    pub signed: bool,
}

impl GainRange {
    pub fn signed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, signed: true }
    }

    pub fn positive(lo: f64, hi: f64) -> Self {
        Self { lo, hi, signed: false }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let magnitude = if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        };
        if self.signed && rng.gen_bool(0.5) {
            -magnitude
        } else {
            magnitude
        }
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row by row so the stream order matches the printed layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.gen_range(-1.0..=1.0);
        }
    }
    m
}

/// Diagonal SSM with independent gains per mode; step 0 gains are ones.
pub fn diagonal_ssm(seed: u64, steps: usize, modes: usize, range: GainRange) -> DiagonalSsm {
    let mut rng = rng(seed);
    let mut gains = DMatrix::from_element(steps, modes, 1.0);
    for t in 1..steps {
        for n in 0..modes {
            gains[(t, n)] = range.sample(&mut rng);
        }
    }
    let b = uniform(&mut rng, steps, modes);
    let c = uniform(&mut rng, steps, modes);
    DiagonalSsm::new(gains, b, c).expect("generated shapes agree")
}

/// Diagonal SSM whose gains are shared across modes at every step.
pub fn scalar_identity_ssm(seed: u64, steps: usize, modes: usize, range: GainRange) -> DiagonalSsm {
    let mut rng = rng(seed);
    let mut gains = DMatrix::from_element(steps, modes, 1.0);
    for t in 1..steps {
        let a = range.sample(&mut rng);
        gains.row_mut(t).fill(a);
    }
    let b = uniform(&mut rng, steps, modes);
    let c = uniform(&mut rng, steps, modes);
    DiagonalSsm::new(gains, b, c).expect("generated shapes agree")
}

pub fn sequence(seed: u64, steps: usize, channels: usize) -> SequenceData {
    let mut rng = rng(seed);
    SequenceData::new(uniform(&mut rng, steps, channels)).expect("positive dims")
}

/// Dense random lower-triangular matrix with entries in `[-1, 1]`.
pub fn lower_triangular(seed: u64, size: usize) -> LowerTriangularMatrix {
    let mut rng = rng(seed);
    let m = uniform(&mut rng, size, size);
    LowerTriangularMatrix::lower_part_of(&m).expect("square")
}

/// General (dense `A^t`) representation with state width `modes`.
///
/// Each `A^t` for `t ≥ 1` is a random orthogonal matrix scaled by a factor in
/// `[0.9, 1.1]`, which keeps long products well conditioned.
pub fn general_sss(seed: u64, steps: usize, modes: usize) -> GeneralSssRepresentation {
    let mut rng = rng(seed);
    let mut transitions = vec![DMatrix::identity(modes, modes)];
    for _ in 1..steps {
        let q = uniform(&mut rng, modes, modes).qr().q();
        let scale = rng.gen_range(0.9..=1.1);
        transitions.push(q * scale);
    }
    let b = uniform(&mut rng, steps, modes);
    let c = uniform(&mut rng, steps, modes);
    GeneralSssRepresentation::new(transitions, b, c, (0..steps).map(|t| modes.min(steps - t).min(t + 1)).collect())
        .expect("generated representation is consistent")
}

/// Mask gains with magnitude in `[0.5, 1.5]` and random sign; each gain after
/// the first is zero with probability `zero_prob`.
pub fn mask(seed: u64, steps: usize, zero_prob: f64) -> MaskVector {
    let mut rng = rng(seed);
    let range = GainRange::signed(0.5, 1.5);
    let a = (0..steps)
        .map(|t| {
            if t > 0 && rng.gen_bool(zero_prob) {
                0.0
            } else {
                range.sample(&mut rng)
            }
        })
        .collect();
    MaskVector::new(a).expect("finite gains")
}

/// Random masked-attention factors `(p, Q, K)` of width `modes`.
pub fn masked_attention(seed: u64, steps: usize, modes: usize, zero_prob: f64) -> MaskedAttentionFactors {
    let p = mask(seed, steps, zero_prob);
    let mut rng = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let q = uniform(&mut rng, steps, modes);
    let k = uniform(&mut rng, steps, modes);
    MaskedAttentionFactors::new(p, q, k).expect("generated shapes agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_instance() {
        let range = GainRange::signed(0.0, 2.0);
        assert_eq!(diagonal_ssm(3, 5, 2, range), diagonal_ssm(3, 5, 2, range));
        assert_ne!(diagonal_ssm(3, 5, 2, range), diagonal_ssm(4, 5, 2, range));
    }

    #[test]
    fn gains_respect_range() {
        let ssm = diagonal_ssm(1, 50, 3, GainRange::positive(0.5, 2.0));
        assert!(ssm.gains().row(0).iter().all(|&v| v == 1.0));
        assert!(ssm.gains().iter().all(|&v| (0.5..=2.0).contains(&v)));
    }

    #[test]
    fn scalar_identity_shares_gains() {
        let ssm = scalar_identity_ssm(2, 10, 4, GainRange::signed(0.1, 1.0));
        assert_eq!(ssm.scalar_identity_violation(), None);
    }
}
