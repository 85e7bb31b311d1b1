//! Phase-2 resolution: ground truth computed from the generated artifacts.

use std::fs;
use std::path::Path;

use rusqlite::types::ValueRef;
use rusqlite::OpenFlags;
use thiserror::Error;

use crate::numeric::{render_mean, Decimal};
use crate::sandbox::SandboxManifest;
use crate::template::{OracleKind, PartialRender, PendingOracle, Segment};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("TARGET_FILE[{0}] is not in the sandbox manifest")]
    MissingArtifact(String),
    #[error("invalid index `{0}` (expected a positive integer)")]
    BadIndex(String),
    #[error("line {n} requested but the file has {lines} lines")]
    LineOutOfRange { n: u64, lines: u64 },
    #[error("word {n} requested but the file has {words} words")]
    WordOutOfRange { n: u64, words: u64 },
    #[error("CSV file is empty")]
    EmptyCsv,
    #[error("CSV row {row} has {got} cells, header has {want}")]
    RaggedCsv { row: usize, got: usize, want: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unsupported comparison `{0}` (expected ==, > or <)")]
    UnsupportedOp(String),
    #[error("column `{column}` row {row}: `{value}` is not numeric")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("arithmetic overflow")]
    Overflow,
    #[error("oracle `{kind}` expects {want} arguments, got {got}")]
    Arity { kind: &'static str, want: usize, got: usize },
    #[error("sql: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("query must return one row and one column, got {rows} row(s) x {cols} column(s)")]
    Shape { rows: usize, cols: usize },
    #[error("query returned an unrenderable value: {0}")]
    Unrenderable(String),
}

fn read(path: &Path) -> Result<String, OracleError> {
    fs::read_to_string(path).map_err(|source| OracleError::Io { path: path.display().to_string(), source })
}

fn parse_index(s: &str) -> Result<u64, OracleError> {
    match s.trim().parse::<u64>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(OracleError::BadIndex(s.to_string())),
    }
}

/// Line `n` (1-based) without its terminator.
pub fn file_line(text: &str, n: u64) -> Result<String, OracleError> {
    let mut count = 0u64;
    for line in text.lines() {
        count += 1;
        if count == n {
            return Ok(line.to_string());
        }
    }
    Err(OracleError::LineOutOfRange { n, lines: count })
}

/// The `n`-th (1-based) whitespace-delimited token of the whole text.
pub fn file_word(text: &str, n: u64) -> Result<String, OracleError> {
    let mut count = 0u64;
    for w in text.split_whitespace() {
        count += 1;
        if count == n {
            return Ok(w.to_string());
        }
    }
    Err(OracleError::WordOutOfRange { n, words: count })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Gt,
    Lt,
}

impl CmpOp {
    pub fn parse(s: &str) -> Result<CmpOp, OracleError> {
        match s {
            "==" => Ok(CmpOp::Eq),
            ">" => Ok(CmpOp::Gt),
            "<" => Ok(CmpOp::Lt),
            _ => Err(OracleError::UnsupportedOp(s.to_string())),
        }
    }

    /// Numeric comparison when both sides parse as numbers, otherwise exact
    /// (byte-wise) string comparison.
    pub fn holds(self, cell: &str, value: &str) -> bool {
        let ord = match (Decimal::parse(cell), Decimal::parse(value)) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => cell.cmp(value),
        };
        match self {
            CmpOp::Eq => ord.is_eq(),
            CmpOp::Gt => ord.is_gt(),
            CmpOp::Lt => ord.is_lt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvAgg {
    Count,
    Avg,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvFilter {
    pub column: String,
    pub op: CmpOp,
    pub value: String,
}

/// Naive CSV table: header plus rows, split on commas.
pub struct CsvTable<'a> {
    pub headers: Vec<&'a str>,
    pub rows: Vec<Vec<&'a str>>,
}

impl<'a> CsvTable<'a> {
    pub fn parse(text: &'a str) -> Result<CsvTable<'a>, OracleError> {
        let mut lines = text.lines();
        let headers: Vec<&str> = match lines.next() {
            Some(h) if !h.is_empty() => h.split(',').collect(),
            _ => return Err(OracleError::EmptyCsv),
        };
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != headers.len() {
                return Err(OracleError::RaggedCsv { row: i + 1, got: cells.len(), want: headers.len() });
            }
            rows.push(cells);
        }
        Ok(CsvTable { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, OracleError> {
        self.headers
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| OracleError::UnknownColumn(name.to_string()))
    }
}

/// Aggregate `column` over the rows passing `filter`.
///
/// Count renders as an integer, avg as the exact mean (see
/// [`crate::numeric::render_mean`]; no matching rows gives `0.0`), sum with at
/// least one decimal digit.
pub fn csv_aggregate(text: &str, agg: CsvAgg, column: &str, filter: Option<&CsvFilter>) -> Result<String, OracleError> {
    let table = CsvTable::parse(text)?;
    let col = table.column(column)?;
    let filt = match filter {
        Some(f) => Some((table.column(&f.column)?, f)),
        None => None,
    };
    let mut count = 0u64;
    let mut sum = Decimal::ZERO;
    for (i, row) in table.rows.iter().enumerate() {
        if let Some((fc, f)) = filt {
            if !f.op.holds(row[fc], &f.value) {
                continue;
            }
        }
        count += 1;
        if agg != CsvAgg::Count {
            let v = Decimal::parse(row[col]).ok_or_else(|| OracleError::NonNumeric {
                column: column.to_string(),
                row: i + 1,
                value: row[col].to_string(),
            })?;
            sum = sum.checked_add(v).ok_or(OracleError::Overflow)?;
        }
    }
    Ok(match agg {
        CsvAgg::Count => count.to_string(),
        CsvAgg::Avg if count == 0 => "0.0".to_string(),
        CsvAgg::Avg => render_mean(sum, count),
        CsvAgg::Sum => sum.render_min_one_decimal(),
    })
}

/// Run a scalar query on a read-only connection.
pub fn sqlite_query(path: &Path, sql: &str) -> Result<String, OracleError> {
    let conn = rusqlite::Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    let mut stmt = conn.prepare(sql)?;
    let cols = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut rendered = None;
    let mut n = 0usize;
    while let Some(row) = rows.next()? {
        n += 1;
        if n == 1 && cols == 1 {
            rendered = Some(render_scalar(row.get_ref(0)?)?);
        }
    }
    match (n, cols, rendered) {
        (1, 1, Some(s)) => Ok(s),
        _ => Err(OracleError::Shape { rows: n, cols }),
    }
}

/// Integers plain, reals in shortest round-trip form (always with a decimal
/// point or exponent), text verbatim, NULL as `null`.
pub fn render_scalar(v: ValueRef<'_>) -> Result<String, OracleError> {
    match v {
        ValueRef::Null => Ok("null".into()),
        ValueRef::Integer(i) => Ok(i.to_string()),
        ValueRef::Real(f) if f.is_finite() => Ok(format!("{f:?}")),
        ValueRef::Real(f) => Err(OracleError::Unrenderable(f.to_string())),
        ValueRef::Text(t) => Ok(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(_) => Err(OracleError::Unrenderable("blob".into())),
    }
}

fn want(p: &PendingOracle, n: usize) -> Result<(), OracleError> {
    if p.args.len() != n {
        return Err(OracleError::Arity { kind: p.kind.as_str(), want: n, got: p.args.len() });
    }
    Ok(())
}

/// Evaluate one pending oracle against the artifact at `path`.
pub fn evaluate_at(p: &PendingOracle, path: &Path) -> Result<String, OracleError> {
    want(p, p.kind.arity())?;
    let a = &p.args;
    let filter = || -> Result<CsvFilter, OracleError> {
        Ok(CsvFilter { column: a[1].clone(), op: CmpOp::parse(&a[2])?, value: a[3].clone() })
    };
    match p.kind {
        OracleKind::FileLine => file_line(&read(path)?, parse_index(&a[0])?),
        OracleKind::FileWord => file_word(&read(path)?, parse_index(&a[0])?),
        OracleKind::CsvCount => csv_aggregate(&read(path)?, CsvAgg::Count, &a[0], None),
        OracleKind::CsvAvg => csv_aggregate(&read(path)?, CsvAgg::Avg, &a[0], None),
        OracleKind::CsvCountWhere => csv_aggregate(&read(path)?, CsvAgg::Count, &a[0], Some(&filter()?)),
        OracleKind::CsvAvgWhere => csv_aggregate(&read(path)?, CsvAgg::Avg, &a[0], Some(&filter()?)),
        OracleKind::CsvSumWhere => csv_aggregate(&read(path)?, CsvAgg::Sum, &a[0], Some(&filter()?)),
        OracleKind::SqliteQuery => sqlite_query(path, &a[0]),
    }
}

pub fn evaluate(p: &PendingOracle, manifest: &SandboxManifest) -> Result<String, OracleError> {
    let rec = manifest.get(&p.target).ok_or_else(|| OracleError::MissingArtifact(p.target.clone()))?;
    evaluate_at(p, &rec.path)
}

/// Replace every pending oracle in `render` with its computed value.
pub fn resolve_phase2(render: &PartialRender, manifest: &SandboxManifest) -> Result<String, OracleError> {
    let mut out = String::new();
    for seg in &render.segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Oracle(p) => out.push_str(&evaluate(p, manifest)?),
        }
    }
    Ok(out)
}
