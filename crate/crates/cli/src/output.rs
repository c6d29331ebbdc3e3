use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use ssd_core::io::{self, MatrixFile};
use ssd_core::{DiagonalSsm, LowerTriangularMatrix, SequenceData, SsdError};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Pretty,
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn load_ssm(path: &Path) -> Result<DiagonalSsm, Failure> {
    load_json(path)
}

/// JSON (`{"X": ...}`) or headerless CSV, chosen by extension.
pub fn load_sequence(path: &Path) -> Result<SequenceData, Failure> {
    if is_csv(path) {
        Ok(io::sequence_from_csv(read(path)?.as_bytes())?)
    } else {
        load_json(path)
    }
}

pub fn load_matrix(path: &Path) -> Result<LowerTriangularMatrix, Failure> {
    if is_csv(path) {
        Ok(io::matrix_from_csv(read(path)?.as_bytes())?)
    } else {
        let file: MatrixFile = load_json(path)?;
        Ok(file.try_into()?)
    }
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    text
}

pub fn csv_rows(rows: &[Vec<f64>]) -> Result<String, Failure> {
    let mut out = Vec::new();
    io::write_csv_rows(&mut out, rows)?;
    Ok(String::from_utf8(out).expect("csv is utf-8"))
}

pub fn pretty_rows(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>14.6e}")).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

pub fn unsupported(format: Format, what: &str) -> Failure {
    Failure::input(format!("--format {format:?} is not available for {what}").to_lowercase())
}

/// Writes `text` to `out`, or stdout when `out` is `None`. Files are written
/// to a temporary sibling and renamed into place.
pub fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::input(format!("stdout: {e}")))
        }
        Some(path) => write_atomic(path, text),
    }
}

pub fn write_atomic(path: &Path, text: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::input(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(text.as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

impl From<SsdError> for Failure {
    fn from(e: SsdError) -> Self {
        use SsdError::*;
        let code = match &e {
            NotScalarIdentity { .. } | ZeroGain { .. } | UnstableScaling { .. } => 3,
            NotRepresentable { .. }
            | ReconstructionFailure { .. }
            | RankExceedsN { .. }
            | InconsistentTransition { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}
