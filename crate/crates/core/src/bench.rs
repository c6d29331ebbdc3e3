//! Operation counting and scaling fits for the three forward paths.
//!
//! Counting runs execute the generic kernels with [`Counted`] scalars on one
//! thread; timing runs use plain `f64` and are kept separate so the
//! instrumentation never shows up in wall times.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdError};
use crate::linalg;
use crate::numeric::{with_counting, Buf, Counted, Real, Tally};
use crate::random::{self, GainRange};
use crate::ssm::{forward_ssd, forward_ssd_parallel, kernels, DiagonalSsm, SequenceData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Path {
    Recurrence,
    Ssd,
    Materialized,
}

impl Path {
    pub const ALL: [Path; 3] = [Path::Recurrence, Path::Ssd, Path::Materialized];

    pub fn name(self) -> &'static str {
        match self {
            Path::Recurrence => "recurrence",
            Path::Ssd => "ssd",
            Path::Materialized => "materialized",
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Path {
    type Err = SsdError;

    fn from_str(s: &str) -> Result<Self> {
        Path::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SsdError::Parse(format!("unknown path {s:?} (recurrence, ssd, materialized)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub modes: usize,
    pub d: usize,
}

impl Dims {
    pub fn new(steps: usize, modes: usize, d: usize) -> Result<Self> {
        for (what, v) in [("T", steps), ("N", modes), ("d", d)] {
            if v == 0 {
                return Err(SsdError::EmptyDimension { what });
            }
        }
        Ok(Self { steps, modes, d })
    }

    /// `N·T·d`.
    pub fn volume(&self) -> u64 {
        (self.steps * self.modes * self.d) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub path: Path,
    pub dims: Dims,
    pub mul_adds: u64,
    pub additions: u64,
    pub copies: u64,
    /// `mul_adds + additions`.
    pub arithmetic: u64,
    /// Peak tracked elements: parameters plus intermediates, excluding `X`.
    pub peak_live: u64,
    /// Memory if all `N` per-mode intermediates were live at once:
    /// `3NTd + Td + 3NT`.
    pub all_modes_live: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl FlopReport {
    /// Whether `arithmetic` lies in `[3NTd, 5NTd]`.
    pub fn within_linear_band(&self) -> bool {
        let v = self.dims.volume();
        (3 * v..=5 * v).contains(&self.arithmetic)
    }

    /// Whether `peak_live ≤ 4·NTd + 3·NT`.
    pub fn within_memory_bound(&self) -> bool {
        let nt = (self.dims.steps * self.dims.modes) as u64;
        self.peak_live <= 4 * self.dims.volume() + 3 * nt
    }
}

fn instance(dims: Dims, seed: u64) -> (DiagonalSsm, SequenceData) {
    let ssm = random::diagonal_ssm(seed, dims.steps, dims.modes, GainRange::signed(0.0, 2.0));
    let x = random::sequence(seed.wrapping_add(1), dims.steps, dims.d);
    (ssm, x)
}

fn run_counted(path: Path, ssm: &DiagonalSsm, x: &SequenceData) -> Tally {
    let lift = |m: &DMatrix<f64>| m.iter().map(|&v| Counted(v)).collect::<Vec<_>>();
    let xs = lift(x.as_matrix());
    let (gains, input, output) = (lift(ssm.gains()), lift(ssm.input_weights()), lift(ssm.output_weights()));
    let channels = x.channels();
    let (_, tally) = with_counting(|| {
        let gains = Buf::from_vec(gains);
        let input = Buf::from_vec(input);
        let output = Buf::from_vec(output);
        let p = kernels::Params {
            steps: ssm.steps(),
            modes: ssm.state_dim(),
            gains: &gains,
            input: &input,
            output: &output,
        };
        let y = match path {
            Path::Recurrence => kernels::recurrence(&p, &xs, channels),
            Path::Ssd => kernels::ssd(&p, &xs, channels),
            Path::Materialized => kernels::materialized_forward(&p, &xs, channels),
        };
        std::hint::black_box(y.first().map(|v| v.to_f64()));
    });
    tally
}

fn run_plain(path: Path, ssm: &DiagonalSsm, x: &SequenceData) -> Result<SequenceData> {
    match path {
        Path::Recurrence => crate::ssm::forward_recurrence(ssm, x),
        Path::Ssd => forward_ssd(ssm, x),
        Path::Materialized => crate::ssm::forward_materialized(ssm, x),
    }
}

/// Exact counts for one path on a seeded instance. With `timed`, a second,
/// uninstrumented run supplies the wall time.
pub fn count_flops(path: Path, dims: Dims, seed: u64, timed: bool) -> Result<FlopReport> {
    let (ssm, x) = instance(dims, seed);
    let t = run_counted(path, &ssm, &x);
    let wall_time_s = if timed {
        let start = Instant::now();
        std::hint::black_box(run_plain(path, &ssm, &x)?);
        Some(start.elapsed().as_secs_f64())
    } else {
        None
    };
    let (steps, modes, d) = (dims.steps as u64, dims.modes as u64, dims.d as u64);
    Ok(FlopReport {
        path,
        dims,
        mul_adds: t.mul_adds,
        additions: t.additions,
        copies: t.copies,
        arithmetic: t.mul_adds + t.additions,
        peak_live: t.peak_live,
        all_modes_live: 3 * modes * steps * d + steps * d + 3 * modes * steps,
        wall_time_s,
    })
}

/// Cartesian grid over `T`, `N` and `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "T")]
    pub steps: Vec<usize>,
    #[serde(rename = "N")]
    pub modes: Vec<usize>,
    pub d: Vec<usize>,
}

impl Grid {
    /// Parses `T=64,128,256;N=1,2;d=2`. Missing axes default to one value.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = Grid {
            steps: vec![64],
            modes: vec![4],
            d: vec![2],
        };
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| SsdError::Parse(format!("grid axis {part:?} lacks '='")))?;
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| SsdError::Parse(format!("grid value {v:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match key.trim() {
                "T" => grid.steps = values,
                "N" => grid.modes = values,
                "d" => grid.d = values,
                other => return Err(SsdError::Parse(format!("unknown grid axis {other:?}"))),
            }
        }
        Ok(grid)
    }

    fn axes(&self) -> [(&'static str, &[usize]); 3] {
        [("T", &self.steps), ("N", &self.modes), ("d", &self.d)]
    }

    pub fn points(&self) -> Result<Vec<Dims>> {
        let mut out = Vec::new();
        for &t in &self.steps {
            for &n in &self.modes {
                for &d in &self.d {
                    out.push(Dims::new(t, n, d)?);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub axis: String,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub path: Path,
    pub seed: u64,
    pub grid: Grid,
    pub rows: Vec<FlopReport>,
    pub slopes: Vec<Slope>,
}

impl ScalingReport {
    pub fn slope(&self, axis: &str) -> Option<f64> {
        self.slopes.iter().find(|s| s.axis == axis).map(|s| s.slope)
    }

    /// One row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,T,N,d,mul_adds,additions,copies,arithmetic,peak_live,all_modes_live\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.path, r.dims.steps, r.dims.modes, r.dims.d, r.mul_adds, r.additions, r.copies, r.arithmetic,
                r.peak_live, r.all_modes_live
            ));
        }
        out
    }
}

/// Counts every grid point and fits `log(arithmetic)` against the logs of
/// the varied axes jointly by least squares.
pub fn scaling_experiment(grid: &Grid, path: Path, seed: u64) -> Result<ScalingReport> {
    let mut varied = Vec::new();
    for (axis, values) in grid.axes() {
        let mut distinct = values.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        match distinct.len() {
            0 => return Err(SsdError::DegenerateGrid(format!("axis {axis} is empty"))),
            1 => {}
            2 => {
                return Err(SsdError::DegenerateGrid(format!(
                    "axis {axis} has 2 distinct values; at least 3 are needed"
                )))
            }
            _ => varied.push(axis),
        }
    }
    if varied.is_empty() {
        return Err(SsdError::DegenerateGrid("no axis varies".into()));
    }

    let points = grid.points()?;
    let rows = points
        .iter()
        .map(|&dims| count_flops(path, dims, seed, false))
        .collect::<Result<Vec<_>>>()?;

    let design = DMatrix::from_fn(rows.len(), varied.len() + 1, |i, j| {
        if j == 0 {
            return 1.0;
        }
        let dims = rows[i].dims;
        let v = match varied[j - 1] {
            "T" => dims.steps,
            "N" => dims.modes,
            _ => dims.d,
        };
        (v as f64).ln()
    });
    let target = DVector::from_iterator(rows.len(), rows.iter().map(|r| (r.arithmetic as f64).ln()));
    let (coeffs, _) = linalg::least_squares(&design, &target, 1e-12);
    let slopes = varied
        .iter()
        .enumerate()
        .map(|(k, axis)| Slope {
            axis: axis.to_string(),
            slope: coeffs[k + 1],
        })
        .collect();
    Ok(ScalingReport {
        path,
        seed,
        grid: grid.clone(),
        rows,
        slopes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub dims: Dims,
    pub workers: usize,
    pub max_abs_diff: f64,
    pub relative_error: f64,
    pub equivalent: bool,
    pub bitwise_equal: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequential_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

/// Compares the parallel SSD path against the sequential one. Times are
/// only recorded with `timed`.
pub fn parallel_speedup_probe(dims: Dims, workers: usize, seed: u64, timed: bool) -> Result<SpeedupReport> {
    let jobs = dims.modes * dims.d;
    if workers == 0 || workers > jobs {
        return Err(SsdError::InvalidArgument(format!(
            "workers must be in 1..={jobs} (N·d), got {workers}"
        )));
    }
    let (ssm, x) = instance(dims, seed);
    let start = Instant::now();
    let sequential = forward_ssd(&ssm, &x)?;
    let sequential_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let parallel = forward_ssd_parallel(&ssm, &x, workers)?;
    let parallel_s = start.elapsed().as_secs_f64();

    let (a, b) = (parallel.as_matrix(), sequential.as_matrix());
    let max_abs_diff = (a - b).abs().max();
    let relative_error = linalg::relative_frobenius(a, b);
    Ok(SpeedupReport {
        dims,
        workers,
        max_abs_diff,
        relative_error,
        equivalent: relative_error <= 1e-12,
        bitwise_equal: a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()),
        sequential_s: timed.then_some(sequential_s),
        parallel_s: timed.then_some(parallel_s),
        speedup: timed.then(|| sequential_s / parallel_s.max(f64::MIN_POSITIVE)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(t: usize, n: usize, d: usize) -> Dims {
        Dims::new(t, n, d).unwrap()
    }

    #[test]
    fn ssd_counts_fall_in_band() {
        let r = count_flops(Path::Ssd, dims(64, 4, 2), 0, false).unwrap();
        let v = 64 * 4 * 2;
        assert!((3 * v..=5 * v).contains(&r.arithmetic), "{r:?}");
        assert!(r.within_linear_band());
        assert!(r.within_memory_bound(), "{r:?}");
        assert_eq!(r.arithmetic, 4 * v - 4 * 2);
        assert_eq!(r.copies, 4 * 2);
    }

    #[test]
    fn ssd_and_recurrence_agree_for_one_mode() {
        let a = count_flops(Path::Ssd, dims(32, 1, 3), 5, false).unwrap();
        let b = count_flops(Path::Recurrence, dims(32, 1, 3), 5, false).unwrap();
        assert_eq!(a.mul_adds, b.mul_adds);
        assert_eq!(a.additions, b.additions);
    }

    #[test]
    fn materialized_is_quadratic() {
        let a = count_flops(Path::Materialized, dims(64, 2, 2), 1, false).unwrap();
        let b = count_flops(Path::Materialized, dims(128, 2, 2), 1, false).unwrap();
        let ratio = b.arithmetic as f64 / a.arithmetic as f64;
        assert!((3.6..=4.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn counts_ignore_seed() {
        let a = count_flops(Path::Ssd, dims(16, 3, 2), 1, false).unwrap();
        let b = count_flops(Path::Ssd, dims(16, 3, 2), 99, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slopes_match_examples() {
        let grid = Grid::parse("T=64,128,256,512").unwrap();
        let r = scaling_experiment(&grid, Path::Ssd, 0).unwrap();
        assert!((r.slope("T").unwrap() - 1.0).abs() <= 0.05);
        let grid = Grid::parse("N=1,2,4,8").unwrap();
        let r = scaling_experiment(&grid, Path::Ssd, 0).unwrap();
        assert!((r.slope("N").unwrap() - 1.0).abs() <= 0.05);
        let grid = Grid::parse("T=64,128,256;N=2;d=1").unwrap();
        let r = scaling_experiment(&grid, Path::Materialized, 0).unwrap();
        assert!((r.slope("T").unwrap() - 2.0).abs() <= 0.1);
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        for text in ["T=64,128", "T=64", "T=1,1,1"] {
            let grid = Grid::parse(text).unwrap();
            assert!(matches!(scaling_experiment(&grid, Path::Ssd, 0), Err(SsdError::DegenerateGrid(_))), "{text}");
        }
        assert!(Grid::parse("Q=1").is_err());
        assert!(Grid::parse("T=a").is_err());
    }

    #[test]
    fn probe_checks_equivalence() {
        for workers in [1, 4, 8] {
            let r = parallel_speedup_probe(dims(64, 4, 2), workers, 3, false).unwrap();
            assert!(r.equivalent && r.bitwise_equal);
            assert!(r.speedup.is_none());
        }
        assert!(parallel_speedup_probe(dims(64, 4, 2), 9, 3, false).is_err());
    }

    #[test]
    fn path_round_trips_through_strings() {
        for p in Path::ALL {
            assert_eq!(p.name().parse::<Path>().unwrap(), p);
        }
        assert!("fast".parse::<Path>().is_err());
    }
}
