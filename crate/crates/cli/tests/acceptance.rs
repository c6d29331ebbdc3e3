//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use ssd_core::bench::{count_flops, scaling_experiment, Dims, Grid, Path as BenchPath};
use ssd_core::duality::{
    attention_like_decomposition, construct_one_ss_dual, full_rank_one_ss_dual, has_one_ss_dual,
    masked_attention_forward, materialize_term, scalar_identity_dual,
};
use ssd_core::limits::{non_dualizable_matrix, softmax_counterexample};
use ssd_core::linalg::relative_frobenius;
use ssd_core::random::{self, GainRange};
use ssd_core::ss_matrix::{semiseparable_rank, submatrix_rank_oracle};
use ssd_core::ssm::{forward_materialized, forward_recurrence, forward_ssd, materialize_kernel};
use ssd_core::sss_extract::{extract_sss, materialize_sss, round_trip_error};
use ssd_core::{DiagonalSsm, SsdError, DEFAULT_EPS};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let combos: Vec<(usize, usize, usize)> = [8, 32, 64, 256]
        .into_iter()
        .flat_map(|t| [1, 4, 8].into_iter().flat_map(move |n| [1, 3].into_iter().map(move |d| (t, n, d))))
        .collect();
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let (t, n, d) = combos[i as usize % combos.len()];
        let ssm = random::diagonal_ssm(1000 + i, t, n, GainRange::signed(0.0, 2.0));
        let x = random::sequence(5000 + i, t, d);
        let ys = [
            forward_recurrence(&ssm, &x).unwrap(),
            forward_ssd(&ssm, &x).unwrap(),
            forward_materialized(&ssm, &x).unwrap(),
        ];
        for a in &ys {
            for b in &ys {
                worst = worst.max(relative_frobenius(a.as_matrix(), b.as_matrix()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-10 && secs <= 60.0,
        format!("200 instances, max pairwise error {worst:.2e}, {secs:.2} s"),
    )
}

fn criterion_2() -> Verdict {
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let (t, n, d) = ([4, 16, 33, 64][i as usize % 4], 1 + i as usize % 5, 1 + i as usize % 3);
        let ssm = random::scalar_identity_ssm(2000 + i, t, n, GainRange::signed(0.0, 2.0));
        let x = random::sequence(6000 + i, t, d);
        let dual = masked_attention_forward(&scalar_identity_dual(&ssm).unwrap(), &x).unwrap();
        let y = forward_recurrence(&ssm, &x).unwrap();
        worst = worst.max(relative_frobenius(dual.as_matrix(), y.as_matrix()));
    }
    verdict(worst <= 1e-10, format!("100 instances, max relative error {worst:.2e}"))
}

fn criterion_3() -> Verdict {
    let mut worst = 0.0f64;
    let mut errors = Vec::new();
    for i in 0..100u64 {
        let (t, n) = (2 + (i as usize * 7) % 63, 1 + i as usize % 4);
        let ssm = random::diagonal_ssm(3000 + i, t, n, GainRange::signed(0.5, 2.0));
        match full_rank_one_ss_dual(&ssm) {
            Ok(f) => {
                let err = relative_frobenius(f.materialize().as_matrix(), materialize_kernel(&ssm).as_matrix());
                worst = worst.max(err);
            }
            Err(e) => errors.push(format!("seed {}: {e}", 3000 + i)),
        }
    }
    let base = random::diagonal_ssm(7, 6, 2, GainRange::signed(0.5, 2.0));
    let mut gains = base.gains().clone();
    gains[(3, 1)] = 0.0;
    let zeroed = DiagonalSsm::new(gains, base.input_weights().clone(), base.output_weights().clone()).unwrap();
    let rejected = matches!(full_rank_one_ss_dual(&zeroed), Err(SsdError::ZeroGain { step: 3, mode: 1 }));
    verdict(
        worst <= 1e-8 && errors.is_empty() && rejected,
        format!(
            "100 instances, max residual {worst:.2e}, construction errors {}, zero gain rejected: {rejected}",
            errors.len()
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let (t, n) = (1 + (i as usize * 5) % 64, 1 + i as usize % 8);
        let ssm = random::diagonal_ssm(4000 + i, t, n, GainRange::signed(0.0, 2.0));
        let mut total = DMatrix::zeros(t, t);
        for term in attention_like_decomposition(&ssm) {
            total += materialize_term(&term).as_matrix();
        }
        worst = worst.max(relative_frobenius(&total, materialize_kernel(&ssm).as_matrix()));
    }
    verdict(worst <= 1e-12, format!("100 instances, max relative error {worst:.2e}"))
}

fn criterion_5() -> Verdict {
    let mut worst = 0.0f64;
    let mut bad_padding = 0;
    let mut failures = Vec::new();
    for i in 0..50u64 {
        let (t, n) = (1 + (i as usize * 11) % 48, 1 + i as usize % 4);
        let m = materialize_sss(&random::general_sss(5000 + i, t, n));
        match extract_sss(&m, n, DEFAULT_EPS) {
            Ok(rep) => {
                worst = worst.max(round_trip_error(&m, &rep));
                if !rep.padding_violations().is_empty() {
                    bad_padding += 1;
                }
            }
            Err(e) => failures.push(format!("seed {}: {e}", 5000 + i)),
        }
    }
    verdict(
        worst <= 1e-6 && bad_padding == 0 && failures.is_empty(),
        format!(
            "50 matrices, max round-trip error {worst:.2e}, padding violations {bad_padding}, failures {}{}",
            failures.len(),
            failures.first().map(|f| format!(" ({f})")).unwrap_or_default()
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut mismatches = 0;
    for i in 0..100u64 {
        let t = 1 + i as usize % 10;
        let m = if i % 2 == 0 {
            random::lower_triangular(6000 + i, t)
        } else {
            materialize_sss(&random::general_sss(6000 + i, t, 1 + i as usize % 3))
        };
        if semiseparable_rank(&m, DEFAULT_EPS) != submatrix_rank_oracle(&m, DEFAULT_EPS).unwrap() {
            mismatches += 1;
        }
    }
    let corner = semiseparable_rank(&non_dualizable_matrix(5).unwrap(), DEFAULT_EPS);
    verdict(
        mismatches == 0 && corner == 2,
        format!("100 matrices, oracle mismatches {mismatches}, rank(I5 + E51) = {corner}"),
    )
}

fn criterion_7() -> Verdict {
    let mut wrongly_dual = Vec::new();
    for t in 3..=16 {
        let m = non_dualizable_matrix(t).unwrap();
        for n in 2..=t - 2 {
            if has_one_ss_dual(&m, n, DEFAULT_EPS) {
                wrongly_dual.push((t, n));
            }
        }
    }
    let (mut tested, mut rejected, mut worst) = (0, 0, 0.0f64);
    for i in 0..100u64 {
        let (t, n) = (2 + i as usize % 15, 1 + i as usize % 4);
        let zero_prob = [0.0, 0.2, 0.5][i as usize % 3];
        let m = random::masked_attention(7000 + i, t, n, zero_prob).materialize();
        if !has_one_ss_dual(&m, n, DEFAULT_EPS) {
            rejected += 1;
            continue;
        }
        tested += 1;
        match construct_one_ss_dual(&m, n, DEFAULT_EPS) {
            Ok(f) => worst = worst.max(relative_frobenius(f.materialize().as_matrix(), m.as_matrix())),
            Err(_) => worst = f64::INFINITY,
        }
    }
    verdict(
        wrongly_dual.is_empty() && tested == 100 && worst <= 1e-8,
        format!(
            "corner matrix dual found at {} (T, N) pairs; {tested} representable instances, {rejected} misjudged, max residual {worst:.2e}",
            wrongly_dual.len()
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for t in 2..=5 {
        let r = softmax_counterexample(t, DEFAULT_EPS).unwrap();
        let get = |name: &str| r.measurements.iter().find(|m| m.name == name).expect("measured");
        let ok = get("rank(V) exact").pass
            && get("rank(softmax V)").value == t as f64
            && get("log|det| direct (LU)").pass
            && get("log|det| closed form").pass
            && get("log|det| relative gap").pass;
        pass &= ok;
        notes.push(format!("T={t} gap {:.1e}", get("log|det| relative gap").value));
    }
    verdict(pass, notes.join(", "))
}

fn criterion_9() -> Verdict {
    let start = Instant::now();
    let grid = Grid::parse("T=64,128,256,512;N=1,2,4,8;d=1,2,4").unwrap();
    let ssd = scaling_experiment(&grid, BenchPath::Ssd, 0).unwrap();
    let in_band = ssd.rows.iter().all(|r| r.within_linear_band());
    let slopes_ok = ["T", "N", "d"]
        .iter()
        .all(|axis| ssd.slope(axis).is_some_and(|s| (s - 1.0).abs() <= 0.05));
    let mat = scaling_experiment(&Grid::parse("T=64,128,256;N=2;d=1").unwrap(), BenchPath::Materialized, 0).unwrap();
    let mat_slope = mat.slope("T").unwrap();
    let example = count_flops(BenchPath::Ssd, Dims::new(64, 4, 2).unwrap(), 0, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = in_band && slopes_ok && (mat_slope - 2.0).abs() <= 0.1 && example.within_linear_band() && secs <= 120.0;
    verdict(
        pass,
        format!(
            "{} ssd points in band: {in_band}; slopes T {:.4} N {:.4} d {:.4}; materialized T {mat_slope:.4}; {secs:.2} s",
            ssd.rows.len(),
            ssd.slope("T").unwrap(),
            ssd.slope("N").unwrap(),
            ssd.slope("d").unwrap()
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> (Option<i32>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_ssd-lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("SSD_LAB_THREADS")
        .output()
        .expect("binary runs");
    (out.status.code(), out.stdout)
}

fn criterion_10() -> Verdict {
    let runs: Vec<PathBuf> = (0..2).map(|_| tempfile::tempdir().unwrap().keep()).collect();
    let setup: &[&[&str]] = &[
        &["--seed", "3", "gen", "ssm", "--t", "24", "--n", "3", "--gain-lo", "0.5", "--out", "ssm.json"],
        &["--seed", "4", "gen", "sequence", "--t", "24", "--d", "2", "--out", "x.json"],
        &["--seed", "5", "gen", "scalar-ssm", "--t", "24", "--n", "2", "--out", "scalar.json"],
        &["--seed", "6", "gen", "factors", "--t", "12", "--n", "2", "--zero-prob", "0.3", "--out", "factors.json"],
        &["--seed", "7", "gen", "sss-matrix", "--t", "16", "--n", "3", "--out", "sss.json"],
        &["gen", "corner", "--t", "6", "--out", "corner.json"],
    ];
    let commands: &[&[&str]] = &[
        &["--seed", "1", "gen", "matrix", "--t", "6", "--format", "csv"],
        &["--seed", "1", "gen", "sss", "--t", "6", "--n", "2"],
        &["--seed", "1", "gen", "mask", "--t", "6", "--zero-prob", "0.4"],
        &["forward", "--ssm", "ssm.json", "--x", "x.json", "--path", "ssd"],
        &["forward", "--ssm", "ssm.json", "--x", "x.json", "--path", "all", "--format", "csv"],
        &["forward", "--ssm", "ssm.json", "--x", "x.json", "--path", "materialized", "--out", "y.json"],
        &["check-dual", "--mode", "scalar-identity", "--ssm", "scalar.json"],
        &["check-dual", "--mode", "full-rank", "--ssm", "ssm.json", "--format", "csv"],
        &["check-dual", "--mode", "representability", "--matrix", "corner.json", "--n", "2"],
        &["check-dual", "--mode", "construct", "--ssm", "ssm.json", "--n", "3", "--factors-out", "dual.json"],
        &["extract", "--matrix", "sss.json", "--n", "3"],
        &["extract", "--ssm", "scalar.json", "--n", "2", "--format", "pretty"],
        &["counterexample", "softmax", "--t", "5"],
        &["counterexample", "non-dualizable", "--t", "7", "--n", "3", "--format", "csv"],
        &["--seed", "2", "bench", "--path", "ssd", "--grid", "T=16,32,64;N=1,2,4", "--table", "table.csv"],
        &["--seed", "2", "bench", "--path", "materialized", "--grid", "T=8,16,32", "--format", "csv"],
        &["--seed", "2", "bench", "--probe-workers", "4", "--t", "64"],
    ];
    let mut differing = Vec::new();
    let mut outputs = Vec::new();
    for dir in &runs {
        let mut run = Vec::new();
        for args in setup {
            assert_eq!(cli(dir, args).0, Some(0), "setup {args:?}");
        }
        for args in commands {
            run.push(cli(dir, args));
        }
        outputs.push(run);
    }
    for (k, args) in commands.iter().enumerate() {
        if outputs[0][k] != outputs[1][k] {
            differing.push(args.join(" "));
        }
    }
    for file in ["ssm.json", "x.json", "scalar.json", "factors.json", "sss.json", "corner.json", "y.json", "dual.json", "table.csv"] {
        let read = |d: &PathBuf| std::fs::read(d.join(file)).unwrap_or_default();
        if read(&runs[0]).is_empty() || read(&runs[0]) != read(&runs[1]) {
            differing.push(file.to_string());
        }
    }
    for dir in &runs {
        let _ = std::fs::remove_dir_all(dir);
    }
    verdict(
        differing.is_empty(),
        format!(
            "{} commands and 9 files compared across two runs; differing: {}",
            commands.len(),
            if differing.is_empty() { "none".to_string() } else { differing.join("; ") }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("three-path equivalence", criterion_1),
        ("scalar-identity duality", criterion_2),
        ("full-rank 1-SS dual", criterion_3),
        ("attention-like decomposition", criterion_4),
        ("extraction round trip", criterion_5),
        ("semiseparable rank vs oracle", criterion_6),
        ("representability theorem", criterion_7),
        ("softmax rank explosion", criterion_8),
        ("complexity counts", criterion_9),
        ("CLI determinism", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {}  {}",
            k + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
