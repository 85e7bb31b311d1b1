//! Placeholder grammar and phase-1 (pre-sandbox) resolution.
//!
//! Grammar, all inside `{{ … }}`:
//!
//! | placeholder                         | meaning                                   |
//! |-------------------------------------|-------------------------------------------|
//! | `entityN`                           | N-th random entity word of the sample     |
//! | `numberN:MIN:MAX[:currency]`        | uniform integer in `[MIN, MAX]`           |
//! | `semanticN:POOL`                    | random value from a semantic pool         |
//! | `qs_id`                             | `q{question}_s{sample:02}`                |
//! | `artifacts`                         | absolute artifacts root                   |
//! | `expected_structure`                | the question's structure list, one/line   |
//! | `KIND:ARG…:TARGET_FILE[name]`       | oracle evaluated after the sandbox exists |
//!
//! Oracle arguments may nest placeholders (`{{file_line:{{number1:1:40}}:…}}`).
//! For `sqlite_query` everything between the first `:` and the final
//! `:TARGET_FILE[` is SQL text.
//!
//! Values are a pure function of the sample seed and the placeholder
//! identity, so resolution order never matters and identical placeholders
//! unify across every field of a sample.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pools::DataPools;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unbalanced braces at byte {0}")]
    Unbalanced(usize),
    #[error("unknown placeholder kind `{0}`")]
    UnknownKind(String),
    #[error("placeholder `{name}` expects {expected} argument(s), got {got}")]
    Arity { name: String, expected: &'static str, got: usize },
    #[error("placeholder index must be ≥ 1 in `{0}`")]
    ZeroIndex(String),
    #[error("invalid integer `{0}` in number placeholder")]
    BadInteger(String),
    #[error("number range inverted: {min} > {max}")]
    InvertedRange { min: i64, max: i64 },
    #[error("unknown number format `{0}`")]
    UnknownFormat(String),
    #[error("oracle `{0}` must end with TARGET_FILE[name]")]
    MissingTarget(String),
    #[error("pool `{0}` is missing or empty")]
    EmptyPool(String),
    #[error("entity{index} requested but the entity pool only has {size} values")]
    PoolExhausted { index: u32, size: usize },
    #[error("{{{{expected_structure}}}} used without a bound structure list")]
    UnboundExpectedStructure,
    #[error("oracle placeholder not allowed here")]
    UnexpectedOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    FileLine,
    FileWord,
    CsvCount,
    CsvAvg,
    CsvCountWhere,
    CsvAvgWhere,
    CsvSumWhere,
    SqliteQuery,
}

impl OracleKind {
    pub fn parse(name: &str) -> Option<OracleKind> {
        Some(match name {
            "file_line" => OracleKind::FileLine,
            "file_word" => OracleKind::FileWord,
            "csv_count" => OracleKind::CsvCount,
            "csv_avg" => OracleKind::CsvAvg,
            "csv_count_where" => OracleKind::CsvCountWhere,
            "csv_avg_where" => OracleKind::CsvAvgWhere,
            "csv_sum_where" => OracleKind::CsvSumWhere,
            "sqlite_query" => OracleKind::SqliteQuery,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::FileLine => "file_line",
            OracleKind::FileWord => "file_word",
            OracleKind::CsvCount => "csv_count",
            OracleKind::CsvAvg => "csv_avg",
            OracleKind::CsvCountWhere => "csv_count_where",
            OracleKind::CsvAvgWhere => "csv_avg_where",
            OracleKind::CsvSumWhere => "csv_sum_where",
            OracleKind::SqliteQuery => "sqlite_query",
        }
    }

    /// Number of arguments between the kind name and the TARGET_FILE anchor.
    pub fn arity(self) -> usize {
        match self {
            OracleKind::FileLine
            | OracleKind::FileWord
            | OracleKind::CsvCount
            | OracleKind::CsvAvg
            | OracleKind::SqliteQuery => 1,
            OracleKind::CsvCountWhere | OracleKind::CsvAvgWhere | OracleKind::CsvSumWhere => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberFormat {
    Currency,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCall {
    pub kind: OracleKind,
    /// Each argument is itself a token list (arguments may nest placeholders).
    pub args: Vec<Vec<TemplateToken>>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Literal(String),
    Entity(u32),
    Number { index: u32, min: i64, max: i64, format: Option<NumberFormat> },
    Semantic { index: u32, pool: String },
    QsId,
    Artifacts,
    ExpectedStructure,
    Oracle(OracleCall),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateToken {
    pub kind: TokenKind,
    /// Byte range in the source the token was parsed from.
    pub span: Range<usize>,
}

impl fmt::Display for TemplateToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TokenKind::Literal(s) => f.write_str(s),
            TokenKind::Entity(n) => write!(f, "{{{{entity{n}}}}}"),
            TokenKind::Number { index, min, max, format } => {
                write!(f, "{{{{number{index}:{min}:{max}")?;
                if let Some(NumberFormat::Currency) = format {
                    f.write_str(":currency")?;
                }
                f.write_str("}}")
            }
            TokenKind::Semantic { index, pool } => write!(f, "{{{{semantic{index}:{pool}}}}}"),
            TokenKind::QsId => f.write_str("{{qs_id}}"),
            TokenKind::Artifacts => f.write_str("{{artifacts}}"),
            TokenKind::ExpectedStructure => f.write_str("{{expected_structure}}"),
            TokenKind::Oracle(call) => {
                write!(f, "{{{{{}", call.kind.as_str())?;
                for arg in &call.args {
                    f.write_str(":")?;
                    for t in arg {
                        write!(f, "{t}")?;
                    }
                }
                write!(f, ":TARGET_FILE[{}]}}}}", call.target)
            }
        }
    }
}

/// Re-render a token list back to template source.
pub fn render_source(tokens: &[TemplateToken]) -> String {
    tokens.iter().map(|t| t.to_string()).collect()
}

/// Tokenize a template string.
pub fn tokenize(template: &str) -> Result<Vec<TemplateToken>, TemplateError> {
    tokenize_at(template, 0)
}

fn tokenize_at(src: &str, base: usize) -> Result<Vec<TemplateToken>, TemplateError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"{{") {
            if literal_start < i {
                tokens.push(TemplateToken {
                    kind: TokenKind::Literal(src[literal_start..i].to_string()),
                    span: base + literal_start..base + i,
                });
            }
            let end = matching_close(bytes, i).ok_or(TemplateError::Unbalanced(base + i))?;
            let inner = &src[i + 2..end];
            let kind = parse_placeholder(inner, base + i + 2)?;
            tokens.push(TemplateToken { kind, span: base + i..base + end + 2 });
            i = end + 2;
            literal_start = i;
        } else if bytes[i..].starts_with(b"}}") {
            return Err(TemplateError::Unbalanced(base + i));
        } else {
            i += 1;
        }
    }
    if literal_start < bytes.len() {
        tokens.push(TemplateToken {
            kind: TokenKind::Literal(src[literal_start..].to_string()),
            span: base + literal_start..base + bytes.len(),
        });
    }
    Ok(tokens)
}

/// Index of the `}}` closing the `{{` at `open`.
fn matching_close(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 1usize;
    let mut j = open + 2;
    while j + 1 < bytes.len() + 1 && j < bytes.len() {
        if bytes[j..].starts_with(b"{{") {
            depth += 1;
            j += 2;
        } else if bytes[j..].starts_with(b"}}") {
            depth -= 1;
            if depth == 0 {
                return Some(j);
            }
            j += 2;
        } else {
            j += 1;
        }
    }
    None
}

/// Split on `:` at nesting depth zero, returning (offset, part) pairs.
fn split_top_level(s: &str) -> Vec<(usize, &str)> {
    let bytes = s.as_bytes();
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut j = 0;
    while j < bytes.len() {
        if bytes[j..].starts_with(b"{{") {
            depth += 1;
            j += 2;
        } else if bytes[j..].starts_with(b"}}") {
            depth = depth.saturating_sub(1);
            j += 2;
        } else {
            if bytes[j] == b':' && depth == 0 {
                parts.push((start, &s[start..j]));
                start = j + 1;
            }
            j += 1;
        }
    }
    parts.push((start, &s[start..]));
    parts
}

fn indexed(name: &str, prefix: &str) -> Result<Option<u32>, TemplateError> {
    let Some(digits) = name.strip_prefix(prefix) else { return Ok(None) };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Ok(None);
    }
    let n: u32 = digits.parse().map_err(|_| TemplateError::BadInteger(digits.to_string()))?;
    if n == 0 {
        return Err(TemplateError::ZeroIndex(name.to_string()));
    }
    Ok(Some(n))
}

fn arity(name: &str, expected: &'static str, got: usize) -> TemplateError {
    TemplateError::Arity { name: name.to_string(), expected, got }
}

fn parse_placeholder(inner: &str, base: usize) -> Result<TokenKind, TemplateError> {
    let parts = split_top_level(inner);
    let name = parts[0].1;
    let nargs = parts.len() - 1;

    if let Some(kind) = OracleKind::parse(name) {
        return parse_oracle(kind, inner, &parts, base).map(TokenKind::Oracle);
    }
    match name {
        "qs_id" | "artifacts" | "expected_structure" => {
            if nargs != 0 {
                return Err(arity(name, "0", nargs));
            }
            return Ok(match name {
                "qs_id" => TokenKind::QsId,
                "artifacts" => TokenKind::Artifacts,
                _ => TokenKind::ExpectedStructure,
            });
        }
        _ => {}
    }
    if let Some(n) = indexed(name, "entity")? {
        if nargs != 0 {
            return Err(arity(name, "0", nargs));
        }
        return Ok(TokenKind::Entity(n));
    }
    if let Some(n) = indexed(name, "number")? {
        if !(2..=3).contains(&nargs) {
            return Err(arity(name, "2 or 3", nargs));
        }
        let int = |s: &str| s.trim().parse::<i64>().map_err(|_| TemplateError::BadInteger(s.to_string()));
        let min = int(parts[1].1)?;
        let max = int(parts[2].1)?;
        if min > max {
            return Err(TemplateError::InvertedRange { min, max });
        }
        let format = match parts.get(3).map(|p| p.1) {
            None => None,
            Some("currency") => Some(NumberFormat::Currency),
            Some(other) => return Err(TemplateError::UnknownFormat(other.to_string())),
        };
        return Ok(TokenKind::Number { index: n, min, max, format });
    }
    if let Some(n) = indexed(name, "semantic")? {
        if nargs != 1 {
            return Err(arity(name, "1", nargs));
        }
        return Ok(TokenKind::Semantic { index: n, pool: parts[1].1.to_string() });
    }
    Err(TemplateError::UnknownKind(name.to_string()))
}

fn parse_target(s: &str) -> Option<&str> {
    s.strip_prefix("TARGET_FILE[")?.strip_suffix(']')
}

fn parse_oracle(
    kind: OracleKind,
    inner: &str,
    parts: &[(usize, &str)],
    base: usize,
) -> Result<OracleCall, TemplateError> {
    if kind == OracleKind::SqliteQuery {
        let first = inner.find(':').ok_or(TemplateError::MissingTarget(kind.as_str().into()))?;
        let anchor = inner.rfind(":TARGET_FILE[").ok_or(TemplateError::MissingTarget(kind.as_str().into()))?;
        if anchor < first {
            return Err(TemplateError::MissingTarget(kind.as_str().into()));
        }
        let target = parse_target(&inner[anchor + 1..]).ok_or(TemplateError::MissingTarget(kind.as_str().into()))?;
        let sql = &inner[first + 1..anchor];
        let args = vec![tokenize_at(sql, base + first + 1)?];
        return Ok(OracleCall { kind, args, target: target.to_string() });
    }
    let last = parts.last().map(|p| p.1).unwrap_or_default();
    let target = match parse_target(last) {
        Some(t) if parts.len() >= 2 => t,
        _ => return Err(TemplateError::MissingTarget(kind.as_str().into())),
    };
    let args_parts = &parts[1..parts.len() - 1];
    if args_parts.len() != kind.arity() {
        let expected = if kind.arity() == 1 { "1" } else { "4" };
        return Err(arity(kind.as_str(), expected, args_parts.len()));
    }
    let args = args_parts
        .iter()
        .map(|(off, text)| tokenize_at(text, base + off))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OracleCall { kind, args, target: target.to_string() })
}

/// Largest value an index argument can take: a literal integer or the upper
/// bound of a number placeholder.
pub fn index_upper_bound(arg: &[TemplateToken]) -> Option<i64> {
    match arg {
        [TemplateToken { kind: TokenKind::Literal(s), .. }] => s.trim().parse().ok(),
        [TemplateToken { kind: TokenKind::Number { max, .. }, .. }] => Some(*max),
        _ => None,
    }
}

/// Visit every oracle call in a token list (not descending into oracle args).
pub fn oracle_calls(tokens: &[TemplateToken]) -> impl Iterator<Item = &OracleCall> {
    tokens.iter().filter_map(|t| match &t.kind {
        TokenKind::Oracle(call) => Some(call),
        _ => None,
    })
}

// ---------------------------------------------------------------------------
// Seeds

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed: SplitMix64 avalanche applied field by field over
/// `(master_seed, question_id, sample_index)`. Each step is a bijection, so
/// for a fixed prefix distinct trailing fields never collide.
pub fn derive_seed(master_seed: u64, question_id: u32, sample_index: u32) -> u64 {
    let h = splitmix64(master_seed);
    let h = splitmix64(h ^ u64::from(question_id));
    splitmix64(h ^ (u64::from(sample_index) << 32 | 0x5A5A))
}

/// Master seed for a run when per-run reseeding is enabled.
pub fn run_master_seed(master_seed: u64, run_id: u32) -> u64 {
    splitmix64(master_seed ^ splitmix64(0x52_55_4E ^ u64::from(run_id)))
}

/// FNV-1a, used to fold strings (pool names, component names) into seeds.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a sub-seed for a labelled stream within a sample.
pub fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a64(label)) ^ index)
}

// ---------------------------------------------------------------------------
// Substitution

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleKey {
    pub question_id: u32,
    /// 1-based.
    pub sample_index: u32,
    pub run_id: u32,
}

impl SampleKey {
    pub fn qs_id(&self) -> String {
        qs_id(self.question_id, self.sample_index)
    }
}

pub fn qs_id(question_id: u32, sample_index: u32) -> String {
    format!("q{question_id}_s{sample_index:02}")
}

/// Identity under which a random placeholder is unified within a sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Identity {
    Entity(u32),
    Number(u32),
    Semantic(u32, String),
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identity::Entity(n) => write!(f, "entity{n}"),
            Identity::Number(n) => write!(f, "number{n}"),
            Identity::Semantic(n, pool) => write!(f, "semantic{n}:{pool}"),
        }
    }
}

/// Shared, seeded bindings for one sample.
#[derive(Debug, Clone)]
pub struct SubstitutionMap {
    pub key: SampleKey,
    pub seed: u64,
    pub artifacts: String,
    expected_structure: Option<String>,
    bindings: BTreeMap<Identity, String>,
    entity_order: Option<Vec<usize>>,
}

impl SubstitutionMap {
    pub fn new(key: SampleKey, seed: u64, artifacts: impl Into<String>) -> Self {
        SubstitutionMap {
            key,
            seed,
            artifacts: artifacts.into(),
            expected_structure: None,
            bindings: BTreeMap::new(),
            entity_order: None,
        }
    }

    pub fn bindings(&self) -> &BTreeMap<Identity, String> {
        &self.bindings
    }

    pub fn get(&self, id: &Identity) -> Option<&str> {
        self.bindings.get(id).map(String::as_str)
    }

    /// Bind the rendered `{{expected_structure}}` block (one entry per line).
    pub fn set_expected_structure(&mut self, entries: &[String]) {
        self.expected_structure = Some(entries.join("\n"));
    }

    fn entity(&mut self, index: u32, pools: &DataPools) -> Result<String, TemplateError> {
        let size = pools.entities.len();
        if size == 0 {
            return Err(TemplateError::EmptyPool("entities".into()));
        }
        if index as usize > size {
            return Err(TemplateError::PoolExhausted { index, size });
        }
        // A per-sample permutation keeps entity1..entityN pairwise distinct.
        let seed = self.seed;
        let order = self.entity_order.get_or_insert_with(|| {
            let mut order: Vec<usize> = (0..size).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "entity", 0));
            order.shuffle(&mut rng);
            order
        });
        Ok(pools.entities[order[index as usize - 1]].clone())
    }

    fn bind(&mut self, kind: &TokenKind, pools: &DataPools) -> Result<String, TemplateError> {
        let id = match kind {
            TokenKind::Entity(n) => Identity::Entity(*n),
            TokenKind::Number { index, .. } => Identity::Number(*index),
            TokenKind::Semantic { index, pool } => Identity::Semantic(*index, pool.clone()),
            _ => unreachable!("bind called on a non-random token"),
        };
        if let Some(v) = self.bindings.get(&id) {
            return Ok(v.clone());
        }
        let value = match kind {
            TokenKind::Entity(n) => self.entity(*n, pools)?,
            TokenKind::Number { index, min, max, .. } => {
                if min > max {
                    return Err(TemplateError::InvertedRange { min: *min, max: *max });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, "number", u64::from(*index)));
                // Currency renders as the bare integer in both prose and SQL.
                rng.random_range(*min..=*max).to_string()
            }
            TokenKind::Semantic { index, pool } => {
                let label = format!("semantic:{pool}");
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, &label, u64::from(*index)));
                pools.draw_semantic(pool, &mut rng).ok_or_else(|| TemplateError::EmptyPool(pool.clone()))?
            }
            _ => unreachable!(),
        };
        self.bindings.insert(id, value.clone());
        Ok(value)
    }
}

/// A pending oracle whose arguments are fully resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingOracle {
    pub kind: OracleKind,
    pub args: Vec<String>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Text(String),
    Oracle(PendingOracle),
}

/// Output of phase 1: concrete text interleaved with pending oracles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialRender {
    pub segments: Vec<Segment>,
}

impl PartialRender {
    pub fn pending(&self) -> impl Iterator<Item = &PendingOracle> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Oracle(o) => Some(o),
            Segment::Text(_) => None,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.pending().next().is_none()
    }

    /// The rendered text, if no oracle is pending.
    pub fn text(&self) -> Option<String> {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => out.push_str(t),
                Segment::Oracle(_) => return None,
            }
        }
        Some(out)
    }

    fn push_text(&mut self, s: &str) {
        if let Some(Segment::Text(last)) = self.segments.last_mut() {
            last.push_str(s);
        } else {
            self.segments.push(Segment::Text(s.to_string()));
        }
    }
}

/// Replace every non-oracle placeholder; oracle arguments are resolved but
/// the oracles themselves stay pending.
pub fn resolve_phase1(
    tokens: &[TemplateToken],
    map: &mut SubstitutionMap,
    pools: &DataPools,
) -> Result<PartialRender, TemplateError> {
    let mut out = PartialRender::default();
    for tok in tokens {
        match &tok.kind {
            TokenKind::Literal(s) => out.push_text(s),
            TokenKind::Entity(_) | TokenKind::Number { .. } | TokenKind::Semantic { .. } => {
                let v = map.bind(&tok.kind, pools)?;
                out.push_text(&v);
            }
            TokenKind::QsId => out.push_text(&map.key.qs_id()),
            TokenKind::Artifacts => {
                let a = map.artifacts.clone();
                out.push_text(&a);
            }
            TokenKind::ExpectedStructure => {
                let block = map.expected_structure.clone().ok_or(TemplateError::UnboundExpectedStructure)?;
                out.push_text(&block);
            }
            TokenKind::Oracle(call) => {
                let args = call
                    .args
                    .iter()
                    .map(|arg| {
                        let r = resolve_phase1(arg, map, pools)?;
                        r.text().ok_or(TemplateError::UnexpectedOracle)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                out.segments.push(Segment::Oracle(PendingOracle {
                    kind: call.kind,
                    args,
                    target: call.target.clone(),
                }));
            }
        }
    }
    Ok(out)
}

/// Tokenize and resolve a field that must not contain oracles.
pub fn render_plain(src: &str, map: &mut SubstitutionMap, pools: &DataPools) -> Result<String, TemplateError> {
    let tokens = tokenize(src)?;
    resolve_phase1(&tokens, map, pools)?.text().ok_or(TemplateError::UnexpectedOracle)
}
