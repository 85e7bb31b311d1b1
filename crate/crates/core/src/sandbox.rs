//! Deterministic materialization of sandbox components.
//!
//! Every component draws from its own RNG stream, keyed by the sample seed
//! and the component name, so adding or reordering components never shifts
//! another component's bytes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::types::Value;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::jail::{Jail, JailError};
use crate::pools::{CellValue, DataPools};
use crate::suite::{ColumnSpec, ColumnType, DataKind, FileContent, QuestionTemplate, RowCount, SandboxComponent};
use crate::template::{self, sub_seed, OracleKind, SubstitutionMap, TemplateError};

pub const LOREM_MIN_WORDS: u32 = 5;
pub const LOREM_MAX_WORDS: u32 = 12;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Jail(#[from] JailError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("component `{name}`: {message}")]
    Component { name: String, message: String },
    #[error("two components resolve to the same path {0}")]
    DuplicatePath(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SandboxError + '_ {
    move |source| SandboxError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    LoremFile,
    Csv,
    Sqlite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub path: PathBuf,
    pub kind: ArtifactKind,
    pub bytes: u64,
    /// Hex SHA-256 of the file contents.
    pub digest: String,
    /// Line count for lorem files, data-row count for CSVs, per-table row
    /// counts for databases.
    pub rows: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub artifacts: Vec<ArtifactRecord>,
}

impl SandboxManifest {
    pub fn get(&self, name: &str) -> Option<&ArtifactRecord> {
        self.artifacts.iter().find(|a| a.name == name)
    }

    /// Names of the given artifacts whose current digest differs from the
    /// recorded one (a missing file counts as changed).
    pub fn changed<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut out = Vec::new();
        for name in names {
            let Some(rec) = self.get(name) else { continue };
            match file_digest(&rec.path) {
                Ok((_, d)) if d == rec.digest => {}
                _ => out.push(name.to_string()),
            }
        }
        out
    }
}

pub fn file_digest(path: &Path) -> io::Result<(u64, String)> {
    let bytes = fs::read(path)?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

fn record(name: &str, path: &Path, kind: ArtifactKind, rows: BTreeMap<String, u64>) -> Result<ArtifactRecord, SandboxError> {
    let (bytes, digest) = file_digest(path).map_err(io_err(path))?;
    Ok(ArtifactRecord { name: name.to_string(), path: path.to_path_buf(), kind, bytes, digest, rows })
}

/// Write `line_count` lines of `min_words..=max_words` lorem words each.
pub fn generate_lorem_file<R: Rng>(
    path: &Path,
    line_count: u64,
    words_per_line: (u32, u32),
    pools: &DataPools,
    rng: &mut R,
) -> Result<u64, SandboxError> {
    let (lo, hi) = words_per_line;
    assert!(line_count >= 1 && lo >= 1 && lo <= hi);
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut words = 0u64;
    for _ in 0..line_count {
        let n = rng.random_range(lo..=hi);
        for i in 0..n {
            if i > 0 {
                w.write_all(b" ").map_err(io_err(path))?;
            }
            w.write_all(pools.lorem_word(rng).as_bytes()).map_err(io_err(path))?;
        }
        w.write_all(b"\n").map_err(io_err(path))?;
        words += u64::from(n);
    }
    w.flush().map_err(io_err(path))?;
    Ok(words)
}

/// Write a header row plus `rows` comma-separated data rows, unquoted.
pub fn generate_csv<R: Rng>(
    path: &Path,
    headers: &[String],
    header_types: &[DataKind],
    rows: u64,
    pools: &DataPools,
    rng: &mut R,
) -> Result<(), SandboxError> {
    assert_eq!(headers.len(), header_types.len());
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{}", headers.join(",")).map_err(io_err(path))?;
    let mut cells = Vec::with_capacity(headers.len());
    for id in 1..=rows {
        cells.clear();
        for kind in header_types {
            cells.push(match kind {
                DataKind::Id => id.to_string(),
                k => pools.draw(*k, rng).render(),
            });
        }
        writeln!(w, "{}", cells.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// A table spec with its row count resolved.
#[derive(Debug, Clone)]
pub struct ResolvedTable {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    pub rows: u64,
}

fn quote_ident(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Create a database with the given tables. Each table gets its own RNG
/// stream from `table_seed(name)`.
pub fn generate_sqlite(
    path: &Path,
    tables: &[ResolvedTable],
    pools: &DataPools,
    table_seed: impl Fn(&str) -> u64,
) -> Result<(), SandboxError> {
    if path.exists() {
        fs::remove_file(path).map_err(io_err(path))?;
    }
    let mut conn = rusqlite::Connection::open(path)?;
    let tx = conn.transaction()?;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for table in tables {
        let mut defs = Vec::new();
        for col in &table.columns {
            let mut def = format!("{} {}", quote_ident(&col.name), col.column_type.sql());
            if let Some(fk) = &col.foreign_key {
                let (parent, pcol) = fk.split_once('.').ok_or_else(|| SandboxError::Component {
                    name: table.name.clone(),
                    message: format!("bad foreign key `{fk}`"),
                })?;
                def.push_str(&format!(" REFERENCES {}({})", quote_ident(parent), quote_ident(pcol)));
            }
            defs.push(def);
        }
        tx.execute_batch(&format!("CREATE TABLE {} ({});", quote_ident(&table.name), defs.join(", ")))?;

        let placeholders = vec!["?"; table.columns.len()].join(", ");
        let sql = format!("INSERT INTO {} VALUES ({placeholders})", quote_ident(&table.name));
        let mut stmt = tx.prepare(&sql)?;
        let mut rng = ChaCha8Rng::seed_from_u64(table_seed(&table.name));
        let mut row: Vec<Value> = Vec::with_capacity(table.columns.len());
        for id in 1..=table.rows {
            row.clear();
            for col in &table.columns {
                let v = if col.column_type == ColumnType::AutoId {
                    Value::Integer(id as i64)
                } else if let Some(fk) = &col.foreign_key {
                    let parent = fk.split_once('.').map(|p| p.0).unwrap_or_default();
                    let n = *counts.get(parent).ok_or_else(|| SandboxError::Component {
                        name: table.name.clone(),
                        message: format!("foreign key `{fk}` targets a table not generated yet"),
                    })?;
                    Value::Integer(rng.random_range(1..=n) as i64)
                } else {
                    let kind = col.data_type.ok_or_else(|| SandboxError::Component {
                        name: table.name.clone(),
                        message: format!("column `{}` has no data_type", col.name),
                    })?;
                    match (pools.draw(kind, &mut rng), col.column_type) {
                        (CellValue::Int(i), ColumnType::Real) => Value::Real(i as f64),
                        (CellValue::Int(i), _) => Value::Integer(i),
                        (CellValue::Text(s), _) => Value::Text(s),
                    }
                };
                row.push(v);
            }
            stmt.execute(rusqlite::params_from_iter(row.iter()))?;
        }
        counts.insert(&table.name, table.rows);
    }
    tx.commit()?;
    conn.close().map_err(|(_, e)| e)?;
    Ok(())
}

/// Highest word index any file_word oracle may request, per component.
pub fn word_demand(question: &QuestionTemplate) -> HashMap<String, i64> {
    let mut out: HashMap<String, i64> = HashMap::new();
    for (_, text) in question.template_fields() {
        let Ok(tokens) = template::tokenize(text) else { continue };
        for call in template::oracle_calls(&tokens) {
            if call.kind != OracleKind::FileWord {
                continue;
            }
            if let Some(upper) = call.args.first().and_then(|a| template::index_upper_bound(a)) {
                let e = out.entry(call.target.clone()).or_insert(upper);
                *e = (*e).max(upper);
            }
        }
    }
    out
}

fn resolve_count(
    count: &RowCount,
    map: &mut SubstitutionMap,
    pools: &DataPools,
    name: &str,
) -> Result<u64, SandboxError> {
    let n = match count {
        RowCount::Fixed(n) => *n,
        RowCount::Template(t) => {
            let s = template::render_plain(t, map, pools)?;
            s.trim().parse::<u64>().map_err(|_| SandboxError::Component {
                name: name.to_string(),
                message: format!("row count `{t}` resolved to non-integer `{s}`"),
            })?
        }
    };
    if n == 0 {
        return Err(SandboxError::Component { name: name.to_string(), message: "count must be ≥ 1".into() });
    }
    Ok(n)
}

/// Materialize every component of `question` under `root`, which is wiped
/// and recreated first.
pub fn build_sandbox(
    question: &QuestionTemplate,
    map: &mut SubstitutionMap,
    pools: &DataPools,
    root: &Path,
) -> Result<SandboxManifest, SandboxError> {
    if root.symlink_metadata().is_ok() {
        fs::remove_dir_all(root).map_err(io_err(root))?;
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    let jail = Jail::new(root).map_err(io_err(root))?;
    let demand = word_demand(question);
    let mut manifest = SandboxManifest { root: jail.root().to_path_buf(), seed: map.seed, artifacts: Vec::new() };
    let mut seen_paths = HashMap::new();

    for comp in question.components() {
        let name = comp.name();
        let raw_path = template::render_plain(comp.target_file(), map, pools)?;
        let path = jail.resolve(&raw_path)?;
        if path == jail.root() {
            return Err(SandboxError::Component { name: name.into(), message: "target_file is the sandbox root".into() });
        }
        if seen_paths.insert(path.clone(), name).is_some() {
            return Err(SandboxError::DuplicatePath(path.display().to_string()));
        }
        if let Some(parent) = path.parent() {
            jail.create_dir_all(&parent.display().to_string())?;
        }
        let comp_seed = sub_seed(map.seed, &format!("component:{name}"), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(comp_seed);
        let rec = match comp {
            SandboxComponent::CreateFiles { content: FileContent::LoremLines { count }, .. } => {
                let lines = resolve_count(count, map, pools, name)?;
                let need = demand.get(name).copied().unwrap_or(0).max(0) as u64;
                let min_words = (need.div_ceil(lines) as u32).max(LOREM_MIN_WORDS);
                let max_words = LOREM_MAX_WORDS.max(min_words);
                let words = generate_lorem_file(&path, lines, (min_words, max_words), pools, &mut rng)?;
                if words < need {
                    return Err(SandboxError::Component {
                        name: name.into(),
                        message: format!("generated {words} words but an oracle may request word {need}"),
                    });
                }
                record(name, &path, ArtifactKind::LoremFile, BTreeMap::from([(String::new(), lines)]))?
            }
            SandboxComponent::CreateCsv { content, .. } => {
                let rows = resolve_count(&content.rows, map, pools, name)?;
                if content.headers.len() != content.header_types.len() {
                    return Err(SandboxError::Component { name: name.into(), message: "headers/header_types length mismatch".into() });
                }
                generate_csv(&path, &content.headers, &content.header_types, rows, pools, &mut rng)?;
                record(name, &path, ArtifactKind::Csv, BTreeMap::from([(String::new(), rows)]))?
            }
            SandboxComponent::CreateSqlite { content, .. } => {
                let mut tables = Vec::new();
                let mut rows = BTreeMap::new();
                for t in &content.tables {
                    let n = resolve_count(&t.rows, map, pools, &format!("{name}.{}", t.name))?;
                    rows.insert(t.name.clone(), n);
                    tables.push(ResolvedTable { name: t.name.clone(), columns: t.columns.clone(), rows: n });
                }
                generate_sqlite(&path, &tables, pools, |t| sub_seed(comp_seed, &format!("table:{t}"), 0))?;
                record(name, &path, ArtifactKind::Sqlite, rows)?
            }
        };
        manifest.artifacts.push(rec);
    }
    Ok(manifest)
}
