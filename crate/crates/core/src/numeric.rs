//! Scalar abstraction used by the sequence kernels.
//!
//! The kernels in [`crate::ssm`] are generic over [`Real`] so the same code
//! runs in plain `f64` and in the instrumented [`Counted`] mode, where every
//! arithmetic call bumps a thread-local tally and every [`Buf`] reports its
//! element count on allocation and drop.
//!
//! Counting model: a multiply or a multiply-accumulate is one multiply-add; a
//! bare addition is one addition; a moved element is one copy.

use std::cell::Cell;
use std::fmt;
use std::ops::{Deref, DerefMut};

pub trait Real: Copy + Send + Sync + PartialEq + fmt::Debug + 'static {
    const ZERO: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn mul(self, rhs: Self) -> Self;

    /// `self * rhs + acc`, rounded after the multiply and after the add
    /// (never fused, so all kernels agree bitwise).
    fn madd(self, rhs: Self, acc: Self) -> Self;

    fn add(self, rhs: Self) -> Self;

    fn note_copies(_n: usize) {}
    fn note_alloc(_elems: usize) {}
    fn note_free(_elems: usize) {}
}

impl Real for f64 {
    const ZERO: Self = 0.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    #[inline(always)]
    fn madd(self, rhs: Self, acc: Self) -> Self {
        self * rhs + acc
    }
    #[inline(always)]
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
}

/// Exact operation and memory tallies for one counting run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub mul_adds: u64,
    pub additions: u64,
    pub copies: u64,
    pub live: u64,
    pub peak_live: u64,
}

thread_local! {
    static TALLY: Cell<Tally> = const { Cell::new(Tally {
        mul_adds: 0,
        additions: 0,
        copies: 0,
        live: 0,
        peak_live: 0,
    }) };
}

fn bump(f: impl FnOnce(&mut Tally)) {
    TALLY.with(|cell| {
        let mut t = cell.get();
        f(&mut t);
        cell.set(t);
    });
}

/// Runs `f` with a fresh thread-local tally and returns what it recorded.
///
/// Allocations made by `f` are tracked; anything still alive at return is
/// part of `live`.
pub fn with_counting<R>(f: impl FnOnce() -> R) -> (R, Tally) {
    let saved = TALLY.with(|cell| cell.replace(Tally::default()));
    let out = f();
    let tally = TALLY.with(|cell| cell.replace(saved));
    (out, tally)
}

/// `f64` wrapper whose arithmetic is counted.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Counted(pub f64);

impl fmt::Debug for Counted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl Real for Counted {
    const ZERO: Self = Counted(0.0);

    fn from_f64(v: f64) -> Self {
        Counted(v)
    }
    fn to_f64(self) -> f64 {
        self.0
    }
    fn mul(self, rhs: Self) -> Self {
        bump(|t| t.mul_adds += 1);
        Counted(self.0 * rhs.0)
    }
    fn madd(self, rhs: Self, acc: Self) -> Self {
        bump(|t| t.mul_adds += 1);
        Counted(self.0 * rhs.0 + acc.0)
    }
    fn add(self, rhs: Self) -> Self {
        bump(|t| t.additions += 1);
        Counted(self.0 + rhs.0)
    }
    fn note_copies(n: usize) {
        bump(|t| t.copies += n as u64);
    }
    fn note_alloc(elems: usize) {
        bump(|t| {
            t.live += elems as u64;
            t.peak_live = t.peak_live.max(t.live);
        });
    }
    fn note_free(elems: usize) {
        bump(|t| t.live = t.live.saturating_sub(elems as u64));
    }
}

/// Heap buffer that reports its size to the scalar's memory tracker.
pub struct Buf<T: Real> {
    data: Vec<T>,
}

impl<T: Real> Buf<T> {
    pub fn zeros(len: usize) -> Self {
        T::note_alloc(len);
        Self {
            data: vec![T::ZERO; len],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        T::note_alloc(data.len());
        Self { data }
    }

    pub fn into_vec(mut self) -> Vec<T> {
        T::note_free(self.data.len());
        std::mem::take(&mut self.data)
    }
}

impl<T: Real> Drop for Buf<T> {
    fn drop(&mut self) {
        if !self.data.is_empty() {
            T::note_free(self.data.len());
        }
    }
}

impl<T: Real> Deref for Buf<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T: Real> DerefMut for Buf<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Real> fmt::Debug for Buf<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_each_operation_kind() {
        let (v, tally) = with_counting(|| {
            let a = Counted(2.0);
            let b = Counted(3.0);
            let p = a.mul(b);
            let q = p.madd(a, b);
            q.add(a)
        });
        assert_eq!(v.0, 17.0);
        assert_eq!(tally.mul_adds, 2);
        assert_eq!(tally.additions, 1);
    }

    #[test]
    fn tracks_peak_live_elements() {
        let (_, tally) = with_counting(|| {
            let a = Buf::<Counted>::zeros(10);
            {
                let _b = Buf::<Counted>::zeros(5);
            }
            let _c = Buf::<Counted>::zeros(3);
            drop(a);
        });
        assert_eq!(tally.peak_live, 15);
        assert_eq!(tally.live, 0);
    }

    #[test]
    fn plain_f64_does_not_touch_tally() {
        let (_, tally) = with_counting(|| {
            let _b = Buf::<f64>::zeros(8);
            2.0f64.madd(3.0, 1.0)
        });
        assert_eq!(tally, Tally::default());
    }
}
