use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use ssd_core::bench::{self, Dims, Grid, Path as BenchPath, ScalingReport};
use ssd_core::duality::{self, MaskedAttentionFactors, RepresentabilityReport};
use ssd_core::io::{MaskFile, MatrixFile};
use ssd_core::limits::{self, CounterexampleReport};
use ssd_core::linalg::relative_frobenius;
use ssd_core::random::{self, GainRange};
use ssd_core::sss_extract::{self, GeneralSssRepresentation};
use ssd_core::ssm::{self, DiagonalSsm, SequenceData};
use ssd_core::LowerTriangularMatrix;

use crate::output::{self, csv_rows, emit, json, pretty_rows, unsupported, Format};
use crate::{Cli, Command, Counterexample, DualMode, Failure, ForwardPath, GenKind, Global};

const THREADS_VAR: &str = "SSD_LAB_THREADS";

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if !(g.eps > 0.0 && g.eps < 1.0) {
        return Err(Failure::input(format!("--eps must lie in (0, 1), got {}", g.eps)));
    }
    match &cli.command {
        Command::Forward { ssm, x, path } => forward(g, ssm, x, *path),
        Command::CheckDual {
            mode,
            ssm,
            matrix,
            width,
            tol,
            factors_out,
        } => check_dual(g, *mode, ssm.as_ref(), matrix.as_ref(), *width, *tol, factors_out.as_ref()),
        Command::Extract { matrix, ssm, width, tol } => extract(g, matrix.as_ref(), ssm.as_ref(), *width, *tol),
        Command::Counterexample { which, steps, width } => counterexample(g, *which, *steps, *width),
        Command::Bench {
            path,
            grid,
            table,
            probe_workers,
            steps,
            modes,
            channels,
            timing,
        } => match probe_workers {
            Some(workers) => probe(g, Dims::new(*steps, *modes, *channels)?, *workers, *timing),
            None => scaling(g, *path, grid, table.as_ref()),
        },
        Command::Gen {
            kind,
            steps,
            modes,
            channels,
            gain_lo,
            gain_hi,
            positive,
            zero_prob,
        } => {
            if !(0.0..=*gain_hi).contains(gain_lo) || !gain_hi.is_finite() {
                return Err(Failure::input("gain range must satisfy 0 <= gain-lo <= gain-hi"));
            }
            if !(0.0..=1.0).contains(zero_prob) {
                return Err(Failure::input("--zero-prob must lie in [0, 1]"));
            }
            let range = if *positive {
                GainRange::positive(*gain_lo, *gain_hi)
            } else {
                GainRange::signed(*gain_lo, *gain_hi)
            };
            generate(g, *kind, *steps, *modes, *channels, range, *zero_prob)
        }
    }
}

fn require_seed(g: &Global) -> Result<u64, Failure> {
    g.seed.ok_or_else(|| Failure::input("--seed is required for randomized commands"))
}

fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::input(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Serialize)]
struct YFile {
    #[serde(rename = "Y")]
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct AllPaths {
    recurrence: Vec<Vec<f64>>,
    ssd: Vec<Vec<f64>>,
    materialized: Vec<Vec<f64>>,
    max_pairwise_error: f64,
    tolerance: f64,
    pass: bool,
}

fn run_ssd(model: &DiagonalSsm, x: &SequenceData) -> Result<SequenceData, Failure> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = thread_cap()?.unwrap_or(available).min(model.state_dim() * x.channels());
    Ok(if workers > 1 {
        ssm::forward_ssd_parallel(model, x, workers)?
    } else {
        ssm::forward_ssd(model, x)?
    })
}

fn forward(g: &Global, ssm_path: &PathBuf, x_path: &PathBuf, path: ForwardPath) -> Result<(), Failure> {
    let model = output::load_ssm(ssm_path)?;
    let x = output::load_sequence(x_path)?;
    let single = match path {
        ForwardPath::Recurrence => Some(ssm::forward_recurrence(&model, &x)?),
        ForwardPath::Ssd => Some(run_ssd(&model, &x)?),
        ForwardPath::Materialized => Some(ssm::forward_materialized(&model, &x)?),
        ForwardPath::All => None,
    };
    if let Some(y) = single {
        let rows = y.to_rows();
        let text = match g.format {
            Format::Json => json(&YFile { rows }),
            Format::Csv => csv_rows(&rows)?,
            Format::Pretty => pretty_rows(&rows),
        };
        return emit(g.out.as_ref(), &text);
    }

    let ys = [
        ("recurrence", ssm::forward_recurrence(&model, &x)?),
        ("ssd", run_ssd(&model, &x)?),
        ("materialized", ssm::forward_materialized(&model, &x)?),
    ];
    let mut error = 0.0f64;
    for i in 0..ys.len() {
        for j in 0..ys.len() {
            if i != j {
                error = error.max(relative_frobenius(ys[i].1.as_matrix(), ys[j].1.as_matrix()));
            }
        }
    }
    let pass = error <= g.eps;
    let text = match g.format {
        Format::Json => json(&AllPaths {
            recurrence: ys[0].1.to_rows(),
            ssd: ys[1].1.to_rows(),
            materialized: ys[2].1.to_rows(),
            max_pairwise_error: error,
            tolerance: g.eps,
            pass,
        }),
        Format::Csv => {
            let mut out = String::from("path,t,channel,value\n");
            for (name, y) in &ys {
                for (t, row) in y.to_rows().iter().enumerate() {
                    for (ch, v) in row.iter().enumerate() {
                        writeln!(out, "{name},{},{},{v:?}", t + 1, ch + 1).unwrap();
                    }
                }
            }
            out
        }
        Format::Pretty => {
            let mut out = String::new();
            for (name, y) in &ys {
                writeln!(out, "{name}:").unwrap();
                out.push_str(&pretty_rows(&y.to_rows()));
            }
            writeln!(out, "max pairwise relative error: {error:e} (tolerance {:e})", g.eps).unwrap();
            out
        }
    };
    emit(g.out.as_ref(), &text)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::property(format!(
            "paths disagree: max pairwise relative error {error:e} exceeds {:e}",
            g.eps
        )))
    }
}

fn load_target(matrix: Option<&PathBuf>, ssm_path: Option<&PathBuf>) -> Result<LowerTriangularMatrix, Failure> {
    match (matrix, ssm_path) {
        (Some(m), None) => output::load_matrix(m),
        (None, Some(s)) => Ok(ssm::materialize_kernel(&output::load_ssm(s)?)),
        (Some(_), Some(_)) => Err(Failure::input("give either --matrix or --ssm, not both")),
        (None, None) => Err(Failure::input("one of --matrix or --ssm is required")),
    }
}

#[derive(Serialize)]
struct DualOutcome {
    mode: &'static str,
    residual: f64,
    tolerance: f64,
    pass: bool,
    factors: MaskedAttentionFactors,
}

fn factors_csv(f: &MaskedAttentionFactors) -> String {
    let width = f.width();
    let mut out = String::from("t,p");
    for prefix in ["Q", "K"] {
        for n in 1..=width {
            write!(out, ",{prefix}{n}").unwrap();
        }
    }
    out.push('\n');
    for t in 0..f.steps() {
        write!(out, "{},{:?}", t + 1, f.mask().as_slice()[t]).unwrap();
        for m in [f.queries(), f.keys()] {
            for n in 0..width {
                write!(out, ",{:?}", m[(t, n)]).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

fn report_text(r: &RepresentabilityReport, format: Format) -> String {
    match format {
        Format::Json => json(r),
        Format::Csv => {
            let mut out = String::from("start,end,new_columns\n");
            for b in &r.blocks {
                writeln!(out, "{},{},{}", b.start, b.end, b.new_columns).unwrap();
            }
            out
        }
        Format::Pretty => {
            let mut out = format!("{:>6} {:>6} {:>12}\n", "start", "end", "new columns");
            for b in &r.blocks {
                writeln!(out, "{:>6} {:>6} {:>12}", b.start, b.end, b.new_columns).unwrap();
            }
            for w in &r.warnings {
                writeln!(out, "warning: {w}").unwrap();
            }
            writeln!(out, "representable: {}", r.representable).unwrap();
            out
        }
    }
}

fn check_dual(
    g: &Global,
    mode: DualMode,
    ssm_path: Option<&PathBuf>,
    matrix: Option<&PathBuf>,
    width: Option<usize>,
    tol: f64,
    factors_out: Option<&PathBuf>,
) -> Result<(), Failure> {
    let need_width = || width.filter(|&n| n > 0).ok_or_else(|| Failure::input("--n (positive) is required"));
    let (name, target, factors) = match mode {
        DualMode::ScalarIdentity | DualMode::FullRank => {
            let path = ssm_path.ok_or_else(|| Failure::input("--ssm is required for this mode"))?;
            let model = output::load_ssm(path)?;
            let (name, factors) = if mode == DualMode::ScalarIdentity {
                ("scalar-identity", duality::scalar_identity_dual(&model)?)
            } else {
                ("full-rank", duality::full_rank_one_ss_dual(&model)?)
            };
            (name, ssm::materialize_kernel(&model), factors)
        }
        DualMode::Representability | DualMode::Construct => {
            let target = load_target(matrix, ssm_path)?;
            let width = need_width()?;
            let report = duality::representability_report(&target, width, g.eps);
            if mode == DualMode::Representability || !report.representable {
                emit(g.out.as_ref(), &report_text(&report, g.format))?;
                return if report.representable {
                    Ok(())
                } else {
                    Err(Failure::property(format!("no 1-SS masked attention dual of width {width}")))
                };
            }
            ("construct", target.clone(), duality::construct_one_ss_dual(&target, width, g.eps)?)
        }
    };

    let residual = relative_frobenius(factors.materialize().as_matrix(), target.as_matrix());
    let pass = residual <= tol;
    if let Some(path) = factors_out {
        output::write_atomic(path, &json(&factors))?;
    }
    let text = match g.format {
        Format::Json => json(&DualOutcome {
            mode: name,
            residual,
            tolerance: tol,
            pass,
            factors: factors.clone(),
        }),
        Format::Csv => factors_csv(&factors),
        Format::Pretty => format!(
            "mode: {name}\nwidth: {}\nresidual: {residual:e} (tolerance {tol:e})\npass: {pass}\n",
            factors.width()
        ),
    };
    emit(g.out.as_ref(), &text)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::property(format!("re-materialization residual {residual:e} exceeds {tol:e}")))
    }
}

#[derive(Serialize)]
struct ExtractOutcome {
    residual: f64,
    tolerance: f64,
    padding_exact: bool,
    pass: bool,
    representation: GeneralSssRepresentation,
}

fn extract(
    g: &Global,
    matrix: Option<&PathBuf>,
    ssm_path: Option<&PathBuf>,
    width: usize,
    tol: f64,
) -> Result<(), Failure> {
    if width == 0 {
        return Err(Failure::input("--n must be positive"));
    }
    let target = load_target(matrix, ssm_path)?;
    let rep = sss_extract::extract_sss(&target, width, g.eps)?;
    let residual = sss_extract::round_trip_error(&target, &rep);
    let padding_exact = rep.padding_violations().is_empty();
    let pass = residual <= tol && padding_exact;
    let text = match g.format {
        Format::Json => json(&ExtractOutcome {
            residual,
            tolerance: tol,
            padding_exact,
            pass,
            representation: rep,
        }),
        Format::Csv => return Err(unsupported(g.format, "extract")),
        Format::Pretty => format!(
            "T: {}\nN: {}\nranks: {:?}\nround-trip residual: {residual:e} (tolerance {tol:e})\npadding exact: {padding_exact}\npass: {pass}\n",
            rep.steps(),
            rep.state_dim(),
            rep.ranks()
        ),
    };
    emit(g.out.as_ref(), &text)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::property(format!(
            "round trip residual {residual:e} (tolerance {tol:e}), padding exact: {padding_exact}"
        )))
    }
}

fn counterexample(g: &Global, which: Counterexample, steps: usize, width: usize) -> Result<(), Failure> {
    let report = match which {
        Counterexample::Softmax => limits::softmax_counterexample(steps, g.eps)?,
        Counterexample::NonDualizable => limits::verify_non_dualizable(steps, width, g.eps),
    };
    let text = match g.format {
        Format::Json => json(&report),
        Format::Csv => measurements_csv(&report)?,
        Format::Pretty => report.to_table(),
    };
    emit(g.out.as_ref(), &text)?;
    if !report.applicable {
        Err(Failure::precondition(report.note.unwrap_or_default()))
    } else if report.verdict {
        Ok(())
    } else {
        Err(Failure::property(format!("{}: verdict false", report.name)))
    }
}

fn measurements_csv(report: &CounterexampleReport) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::input(e.to_string());
    w.write_record(["name", "value", "expected", "pass"]).map_err(fail)?;
    for m in &report.measurements {
        w.write_record([m.name.clone(), format!("{:?}", m.value), m.expected.clone(), m.pass.to_string()])
            .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Serialize)]
struct Check {
    name: String,
    pass: bool,
}

#[derive(Serialize)]
struct ScalingOutcome<'a> {
    #[serde(flatten)]
    report: &'a ScalingReport,
    checks: Vec<Check>,
    pass: bool,
}

fn scaling_checks(r: &ScalingReport) -> Vec<Check> {
    let mut checks = Vec::new();
    let linear = matches!(r.path, BenchPath::Ssd | BenchPath::Recurrence);
    if linear {
        for row in &r.rows {
            let d = row.dims;
            checks.push(Check {
                name: format!("T={} N={} d={}: arithmetic in [3NTd, 5NTd]", d.steps, d.modes, d.d),
                pass: row.within_linear_band(),
            });
            checks.push(Check {
                name: format!("T={} N={} d={}: peak live <= 4NTd + 3NT", d.steps, d.modes, d.d),
                pass: row.within_memory_bound(),
            });
        }
    }
    for s in &r.slopes {
        let (target, band) = match (linear, s.axis.as_str()) {
            (true, _) => (1.0, 0.05),
            (false, "T") => (2.0, 0.1),
            _ => continue,
        };
        checks.push(Check {
            name: format!("slope in {} = {target} +/- {band}", s.axis),
            pass: (s.slope - target).abs() <= band,
        });
    }
    checks
}

fn scaling(g: &Global, path: BenchPath, grid: &str, table: Option<&PathBuf>) -> Result<(), Failure> {
    let seed = require_seed(g)?;
    let report = bench::scaling_experiment(&Grid::parse(grid)?, path, seed)?;
    let checks = scaling_checks(&report);
    let pass = checks.iter().all(|c| c.pass);
    if let Some(table) = table {
        output::write_atomic(table, &report.to_csv())?;
    }
    let text = match g.format {
        Format::Json => json(&ScalingOutcome {
            report: &report,
            checks,
            pass,
        }),
        Format::Csv => report.to_csv(),
        Format::Pretty => {
            let mut out = format!(
                "{:>6} {:>4} {:>4} {:>14} {:>12} {:>12} {:>12}\n",
                "T", "N", "d", "arithmetic", "mul_adds", "additions", "peak_live"
            );
            for r in &report.rows {
                writeln!(
                    out,
                    "{:>6} {:>4} {:>4} {:>14} {:>12} {:>12} {:>12}",
                    r.dims.steps, r.dims.modes, r.dims.d, r.arithmetic, r.mul_adds, r.additions, r.peak_live
                )
                .unwrap();
            }
            for s in &report.slopes {
                writeln!(out, "slope {}: {:.4}", s.axis, s.slope).unwrap();
            }
            for c in checks.iter().filter(|c| !c.pass) {
                writeln!(out, "FAILED: {}", c.name).unwrap();
            }
            writeln!(out, "pass: {pass}").unwrap();
            out
        }
    };
    emit(g.out.as_ref(), &text)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::property(format!("{path} counts miss their complexity bounds")))
    }
}

fn probe(g: &Global, dims: Dims, workers: usize, timing: bool) -> Result<(), Failure> {
    let seed = require_seed(g)?;
    let capped = workers.min(thread_cap()?.unwrap_or(workers));
    if capped < workers {
        log::warn!("{THREADS_VAR} caps workers at {capped}");
    }
    let report = bench::parallel_speedup_probe(dims, capped, seed, timing)?;
    let text = match g.format {
        Format::Json => json(&report),
        Format::Csv => return Err(unsupported(g.format, "the parallel probe")),
        Format::Pretty => {
            let mut out = format!(
                "T={} N={} d={} workers={}\nrelative error: {:e}\nbitwise equal: {}\n",
                dims.steps, dims.modes, dims.d, report.workers, report.relative_error, report.bitwise_equal
            );
            if let Some(s) = report.speedup {
                writeln!(out, "speedup: {s:.2}x").unwrap();
            }
            out
        }
    };
    emit(g.out.as_ref(), &text)?;
    if report.equivalent {
        Ok(())
    } else {
        Err(Failure::property("parallel output differs from sequential beyond 1e-12"))
    }
}

fn generate(
    g: &Global,
    kind: GenKind,
    steps: usize,
    modes: usize,
    channels: usize,
    range: GainRange,
    zero_prob: f64,
) -> Result<(), Failure> {
    for (what, v) in [("--t", steps), ("--n", modes), ("--d", channels)] {
        if v == 0 {
            return Err(Failure::input(format!("{what} must be positive")));
        }
    }
    let seed = if kind == GenKind::Corner { 0 } else { require_seed(g)? };
    let matrix_text = |m: &LowerTriangularMatrix| -> Result<String, Failure> {
        Ok(match g.format {
            Format::Json => json(&MatrixFile::from(m)),
            Format::Csv => csv_rows(&m.to_rows())?,
            Format::Pretty => pretty_rows(&m.to_rows()),
        })
    };
    let json_only = |text: String| -> Result<String, Failure> {
        match g.format {
            Format::Csv => Err(unsupported(g.format, "this instance kind")),
            _ => Ok(text),
        }
    };
    let text = match kind {
        GenKind::Ssm => json_only(json(&random::diagonal_ssm(seed, steps, modes, range)))?,
        GenKind::ScalarSsm => json_only(json(&random::scalar_identity_ssm(seed, steps, modes, range)))?,
        GenKind::Sequence => {
            let x = random::sequence(seed, steps, channels);
            match g.format {
                Format::Json => json(&x),
                Format::Csv => csv_rows(&x.to_rows())?,
                Format::Pretty => pretty_rows(&x.to_rows()),
            }
        }
        GenKind::Matrix => matrix_text(&random::lower_triangular(seed, steps))?,
        GenKind::Sss => json_only(json(&random::general_sss(seed, steps, modes)))?,
        GenKind::SssMatrix => matrix_text(&sss_extract::materialize_sss(&random::general_sss(seed, steps, modes)))?,
        GenKind::Mask => json_only(json(&MaskFile::from(&random::mask(seed, steps, zero_prob))))?,
        GenKind::Factors => json_only(json(&random::masked_attention(seed, steps, modes, zero_prob)))?,
        GenKind::Corner => matrix_text(&limits::non_dualizable_matrix(steps)?)?,
    };
    emit(g.out.as_ref(), &text)
}
