//! Verdicts for the six scoring types.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::item::ResolvedTestItem;
use crate::suite::ScoringType;

/// Relative tolerance for numeric comparison inside JSON documents.
pub const JSON_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Match,
    StringMismatch,
    JsonMismatch,
    MissingFile,
    MissingPath,
    BadJson,
    SandboxTampered,
    AgentError,
    StepLimit,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Match => "match",
            Reason::StringMismatch => "string_mismatch",
            Reason::JsonMismatch => "json_mismatch",
            Reason::MissingFile => "missing_file",
            Reason::MissingPath => "missing_path",
            Reason::BadJson => "bad_json",
            Reason::SandboxTampered => "sandbox_tampered",
            Reason::AgentError => "agent_error",
            Reason::StepLimit => "step_limit",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub reason: Reason,
    pub detail: String,
}

impl Verdict {
    pub fn correct() -> Verdict {
        Verdict { correct: true, reason: Reason::Match, detail: String::new() }
    }

    pub fn incorrect(reason: Reason, detail: impl Into<String>) -> Verdict {
        debug_assert!(reason != Reason::Match);
        Verdict { correct: false, reason, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Disable code-fence stripping for JSON answers.
    pub strict_json: bool,
}

fn clip(s: &str) -> String {
    const MAX: usize = 120;
    if s.chars().count() <= MAX {
        s.to_string()
    } else {
        let head: String = s.chars().take(MAX).collect();
        format!("{head}…")
    }
}

pub fn score_stringmatch(actual: &str, expected: &str) -> Verdict {
    let (a, e) = (actual.trim(), expected.trim());
    if a == e {
        Verdict::correct()
    } else {
        Verdict::incorrect(Reason::StringMismatch, format!("expected {:?}, got {:?}", clip(e), clip(a)))
    }
}

/// Strip one fenced block wrapping the entire payload.
pub fn strip_code_fence(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else { return s };
    let Some(body) = rest.strip_suffix("```") else { return s };
    // Drop an info string such as `json` on the opening line.
    let body = match body.find('\n') {
        Some(nl) if !body[..nl].trim().contains(char::is_whitespace) => &body[nl + 1..],
        _ => body,
    };
    if body.contains("```") {
        return s;
    }
    body.trim()
}

fn numbers_equal(a: &serde_json::Number, b: &serde_json::Number) -> bool {
    if let (Some(x), Some(y)) = (a.as_i64(), b.as_i64()) {
        return x == y;
    }
    if let (Some(x), Some(y)) = (a.as_u64(), b.as_u64()) {
        return x == y;
    }
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y || (x - y).abs() <= JSON_REL_TOL * x.abs().max(y.abs()),
        _ => false,
    }
}

/// Deep structural comparison; `Err` carries the first differing path.
pub fn json_equal(expected: &Value, actual: &Value) -> Result<(), String> {
    fn walk(e: &Value, a: &Value, path: &mut String) -> Result<(), String> {
        match (e, a) {
            (Value::Number(x), Value::Number(y)) => {
                if numbers_equal(x, y) {
                    Ok(())
                } else {
                    Err(format!("{path}: expected {x}, got {y}"))
                }
            }
            (Value::Object(eo), Value::Object(ao)) => {
                if let Some(k) = eo.keys().find(|k| !ao.contains_key(*k)) {
                    return Err(format!("{path}: missing key {k:?}"));
                }
                if let Some(k) = ao.keys().find(|k| !eo.contains_key(*k)) {
                    return Err(format!("{path}: unexpected key {k:?}"));
                }
                for (k, ev) in eo {
                    let len = path.len();
                    path.push_str(&format!(".{k}"));
                    walk(ev, &ao[k], path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            (Value::Array(ea), Value::Array(aa)) => {
                if ea.len() != aa.len() {
                    return Err(format!("{path}: expected {} elements, got {}", ea.len(), aa.len()));
                }
                for (i, (x, y)) in ea.iter().zip(aa).enumerate() {
                    let len = path.len();
                    path.push_str(&format!("[{i}]"));
                    walk(x, y, path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            (x, y) if x == y => Ok(()),
            (x, y) => Err(format!("{path}: expected {}, got {}", clip(&x.to_string()), clip(&y.to_string()))),
        }
    }
    let mut path = String::from("$");
    walk(expected, actual, &mut path)
}

pub fn score_jsonmatch(actual: &str, expected: &str, opts: ScoreOptions) -> Verdict {
    let expected: Value = match serde_json::from_str(expected) {
        Ok(v) => v,
        Err(e) => return Verdict::incorrect(Reason::BadJson, format!("expected answer is not JSON: {e}")),
    };
    let payload = if opts.strict_json { actual } else { strip_code_fence(actual) };
    let actual: Value = match serde_json::from_str(payload.trim()) {
        Ok(v) => v,
        Err(e) => return Verdict::incorrect(Reason::BadJson, format!("{e}: {:?}", clip(payload))),
    };
    match json_equal(&expected, &actual) {
        Ok(()) => Verdict::correct(),
        Err(d) => Verdict::incorrect(Reason::JsonMismatch, d),
    }
}

pub fn score_files_exist<S: AsRef<str>>(paths: &[S]) -> Verdict {
    let missing: Vec<&str> = paths
        .iter()
        .map(|p| p.as_ref())
        .filter(|p| !fs::metadata(p).map(|m| m.is_file()).unwrap_or(false))
        .collect();
    if missing.is_empty() {
        Verdict::correct()
    } else {
        Verdict::incorrect(Reason::MissingPath, format!("not a regular file: {}", missing.join(", ")))
    }
}

/// Entries ending in `/` must be directories, others regular files. Extra
/// entries on disk are fine.
pub fn score_directory_structure<S: AsRef<str>>(entries: &[S]) -> Verdict {
    let mut bad = Vec::new();
    for e in entries {
        let e = e.as_ref();
        let ok = match e.strip_suffix('/') {
            Some(dir) => fs::metadata(dir).map(|m| m.is_dir()).unwrap_or(false),
            None => fs::metadata(e).map(|m| m.is_file()).unwrap_or(false),
        };
        if !ok {
            bad.push(e);
        }
    }
    if bad.is_empty() {
        Verdict::correct()
    } else {
        Verdict::incorrect(Reason::MissingPath, format!("missing or wrong kind: {}", bad.join(", ")))
    }
}

pub fn score_readfile(json: bool, file: &Path, expected: &str, opts: ScoreOptions) -> Verdict {
    let content = match fs::read(file) {
        Ok(b) => b,
        Err(e) => return Verdict::incorrect(Reason::MissingFile, format!("{}: {e}", file.display())),
    };
    let content = String::from_utf8_lossy(&content);
    if json {
        score_jsonmatch(&content, expected, opts)
    } else {
        score_stringmatch(&content, expected)
    }
}

/// Score a finished conversation against its item. `final_message` is the
/// last assistant message.
pub fn score_item(item: &ResolvedTestItem, final_message: &str, opts: ScoreOptions) -> Verdict {
    let expected = item.expected.as_deref().unwrap_or_default();
    match item.scoring_type {
        ScoringType::Stringmatch => score_stringmatch(final_message, expected),
        ScoringType::Jsonmatch => score_jsonmatch(final_message, expected, opts),
        ScoringType::FilesExist => score_files_exist(&item.files_to_check),
        ScoringType::DirectoryStructure => score_directory_structure(&item.expected_structure),
        ScoringType::ReadfileStringmatch | ScoringType::ReadfileJsonmatch => {
            let file = item.file_to_read.as_deref().unwrap_or_default();
            score_readfile(item.scoring_type.is_json(), Path::new(file), expected, opts)
        }
    }
}
