//! Typed model of the declarative test-suite format.
//!
//! A suite document has a single `tests:` key holding an ordered list of
//! question templates. Template strings are stored verbatim; placeholder
//! expansion happens later in [`crate::template`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::{self, OracleKind, TemplateToken, TokenKind};

pub const DEFAULT_SAMPLES: u32 = 30;

const SCORING_TYPES: &[&str] = &[
    "stringmatch",
    "jsonmatch",
    "files_exist",
    "directory_structure",
    "readfile_stringmatch",
    "readfile_jsonmatch",
];

const COMPONENT_TYPES: &[&str] = &["create_files", "create_csv", "create_sqlite"];

/// Semantic pool names the placeholder grammar may reference.
pub const SEMANTIC_POOLS: &[&str] = &[
    "category",
    "region",
    "status",
    "company",
    "department",
    "person_name",
    "city",
    "product",
    "course",
    "date",
];

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("malformed suite document: {0}")]
    Malformed(String),
    #[error("question {question_id}: unknown scoring_type `{value}`")]
    UnknownScoringType { question_id: i64, value: String },
    #[error("question {question_id}: unknown component type `{value}`")]
    UnknownComponentType { question_id: i64, value: String },
    #[error("suite failed validation:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSuite {
    #[serde(rename = "tests")]
    pub templates: Vec<QuestionTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionTemplate {
    pub question_id: u32,
    #[serde(default = "default_samples")]
    pub samples: u32,
    pub template: String,
    pub scoring_type: ScoringType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_to_read: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files_to_check: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_structure: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandbox_setup: Option<SandboxSetup>,
}

fn default_samples() -> u32 {
    DEFAULT_SAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringType {
    Stringmatch,
    Jsonmatch,
    FilesExist,
    DirectoryStructure,
    ReadfileStringmatch,
    ReadfileJsonmatch,
}

impl ScoringType {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringType::Stringmatch => "stringmatch",
            ScoringType::Jsonmatch => "jsonmatch",
            ScoringType::FilesExist => "files_exist",
            ScoringType::DirectoryStructure => "directory_structure",
            ScoringType::ReadfileStringmatch => "readfile_stringmatch",
            ScoringType::ReadfileJsonmatch => "readfile_jsonmatch",
        }
    }

    /// Whether the expected answer must parse as JSON.
    pub fn is_json(self) -> bool {
        matches!(self, ScoringType::Jsonmatch | ScoringType::ReadfileJsonmatch)
    }
}

impl fmt::Display for ScoringType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxSetup {
    pub components: Vec<SandboxComponent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SandboxComponent {
    CreateFiles {
        name: String,
        target_file: String,
        content: FileContent,
    },
    CreateCsv {
        name: String,
        target_file: String,
        content: CsvContent,
    },
    CreateSqlite {
        name: String,
        target_file: String,
        content: SqliteContent,
    },
}

impl SandboxComponent {
    pub fn name(&self) -> &str {
        match self {
            SandboxComponent::CreateFiles { name, .. }
            | SandboxComponent::CreateCsv { name, .. }
            | SandboxComponent::CreateSqlite { name, .. } => name,
        }
    }

    pub fn target_file(&self) -> &str {
        match self {
            SandboxComponent::CreateFiles { target_file, .. }
            | SandboxComponent::CreateCsv { target_file, .. }
            | SandboxComponent::CreateSqlite { target_file, .. } => target_file,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            SandboxComponent::CreateFiles { .. } => "create_files",
            SandboxComponent::CreateCsv { .. } => "create_csv",
            SandboxComponent::CreateSqlite { .. } => "create_sqlite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FileContent {
    LoremLines { count: RowCount },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvContent {
    pub headers: Vec<String>,
    pub header_types: Vec<DataKind>,
    pub rows: RowCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqliteContent {
    pub tables: Vec<TableSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    pub rows: RowCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_type: Option<DataKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreign_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnType {
    #[serde(rename = "auto_id")]
    AutoId,
    #[serde(rename = "TEXT")]
    Text,
    #[serde(rename = "INTEGER")]
    Integer,
    #[serde(rename = "REAL")]
    Real,
}

impl ColumnType {
    pub fn sql(self) -> &'static str {
        match self {
            ColumnType::AutoId => "INTEGER PRIMARY KEY",
            ColumnType::Text => "TEXT",
            ColumnType::Integer => "INTEGER",
            ColumnType::Real => "REAL",
        }
    }
}

/// What a generated column or CSV field holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Id,
    PersonName,
    Age,
    City,
    Date,
    Company,
    Category,
    Product,
    Price,
    Region,
    Department,
    Currency,
    Score,
    Status,
    Salary,
    EntityPool,
    Course,
}

impl DataKind {
    /// Pool name for kinds drawn from a semantic pool.
    pub fn semantic_pool(self) -> Option<&'static str> {
        Some(match self {
            DataKind::PersonName => "person_name",
            DataKind::City => "city",
            DataKind::Company => "company",
            DataKind::Category => "category",
            DataKind::Product => "product",
            DataKind::Region => "region",
            DataKind::Department => "department",
            DataKind::Status => "status",
            DataKind::Course => "course",
            _ => return None,
        })
    }

    /// Range name for kinds drawn uniformly from a numeric range.
    pub fn numeric_range(self) -> Option<&'static str> {
        Some(match self {
            DataKind::Age => "age",
            DataKind::Price => "price",
            DataKind::Currency => "currency",
            DataKind::Salary => "salary",
            DataKind::Score => "score",
            _ => return None,
        })
    }
}

/// A row or line count: either a literal integer or a template string such
/// as `"{{number5:750:1000}}"` resolved per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RowCount {
    Fixed(u64),
    Template(String),
}

/// Task category, derived from the hundreds digit of the question id. Used
/// for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SanityCheck,
    FilesystemOperations,
    TextSearchExtraction,
    CsvProcessing,
    DatabaseStandard,
    DatabaseGuided,
    ResponseFormat,
    Other,
}

impl Category {
    pub fn of(question_id: u32) -> Category {
        match question_id / 100 {
            1 => Category::SanityCheck,
            2 => Category::FilesystemOperations,
            3 => Category::TextSearchExtraction,
            4 => Category::CsvProcessing,
            5 => Category::DatabaseStandard,
            6 => Category::DatabaseGuided,
            7 => Category::ResponseFormat,
            _ => Category::Other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::SanityCheck => "Sanity Check",
            Category::FilesystemOperations => "Filesystem Operations",
            Category::TextSearchExtraction => "Text Search and Extraction",
            Category::CsvProcessing => "CSV Processing",
            Category::DatabaseStandard => "Database Processing (Standard)",
            Category::DatabaseGuided => "Database Processing (Easy/Guided)",
            Category::ResponseFormat => "Response Format Instruction Following",
            Category::Other => "Other",
        }
    }
}

impl QuestionTemplate {
    pub fn category(&self) -> Category {
        Category::of(self.question_id)
    }

    pub fn components(&self) -> &[SandboxComponent] {
        self.sandbox_setup
            .as_ref()
            .map(|s| s.components.as_slice())
            .unwrap_or(&[])
    }

    pub fn component(&self, name: &str) -> Option<&SandboxComponent> {
        self.components().iter().find(|c| c.name() == name)
    }

    /// The expected-answer template consumed by the scorer.
    pub fn expected_template(&self) -> Option<&str> {
        match self.scoring_type {
            ScoringType::Stringmatch | ScoringType::Jsonmatch => self.expected_response.as_deref(),
            ScoringType::ReadfileStringmatch | ScoringType::ReadfileJsonmatch => {
                self.expected_content.as_deref()
            }
            ScoringType::FilesExist | ScoringType::DirectoryStructure => None,
        }
    }

    /// Every template-bearing field, paired with its field path.
    pub fn template_fields(&self) -> Vec<(String, &str)> {
        let mut out: Vec<(String, &str)> = vec![("template".into(), self.template.as_str())];
        if let Some(s) = &self.expected_response {
            out.push(("expected_response".into(), s));
        }
        if let Some(s) = &self.expected_content {
            out.push(("expected_content".into(), s));
        }
        if let Some(s) = &self.file_to_read {
            out.push(("file_to_read".into(), s));
        }
        for (i, s) in self.files_to_check.iter().flatten().enumerate() {
            out.push((format!("files_to_check[{i}]"), s));
        }
        for (i, s) in self.expected_structure.iter().flatten().enumerate() {
            out.push((format!("expected_structure[{i}]"), s));
        }
        for (i, c) in self.components().iter().enumerate() {
            out.push((format!("sandbox_setup.components[{i}].target_file"), c.target_file()));
            match c {
                SandboxComponent::CreateFiles {
                    content: FileContent::LoremLines { count: RowCount::Template(t) },
                    ..
                } => out.push((format!("sandbox_setup.components[{i}].content.count"), t)),
                SandboxComponent::CreateCsv { content, .. } => {
                    if let RowCount::Template(t) = &content.rows {
                        out.push((format!("sandbox_setup.components[{i}].content.rows"), t));
                    }
                }
                SandboxComponent::CreateSqlite { content, .. } => {
                    for (j, table) in content.tables.iter().enumerate() {
                        if let RowCount::Template(t) = &table.rows {
                            out.push((
                                format!("sandbox_setup.components[{i}].content.tables[{j}].rows"),
                                t,
                            ));
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }
}

impl TestSuite {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, question_id: u32) -> Option<&QuestionTemplate> {
        self.templates.iter().find(|t| t.question_id == question_id)
    }

    /// Σ samples over all templates: the number of items in one run.
    pub fn total_samples(&self) -> u64 {
        self.templates.iter().map(|t| u64::from(t.samples)).sum()
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut out = BTreeMap::new();
        for t in &self.templates {
            *out.entry(t.category()).or_insert(0) += 1;
        }
        out
    }

    pub fn to_yaml(&self) -> Result<String, SuiteError> {
        serde_yaml::to_string(self).map_err(|e| SuiteError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    InvalidValue,
    DuplicateQuestionId,
    MissingScoringField,
    DuplicateComponentName,
    DuplicateTargetFile,
    DanglingTargetFile,
    OracleTargetKind,
    DanglingForeignKey,
    ForeignKeyTarget,
    AutoIdCount,
    HeaderMismatch,
    TemplateSyntax,
    UnknownPool,
    InconsistentNumberRange,
    MisplacedPlaceholder,
    LineIndexOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub question_id: Option<u32>,
    pub field: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.question_id {
            Some(q) => write!(f, "q{q} {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Parse and fully validate a suite document.
pub fn parse_suite(source: &str) -> Result<TestSuite, SuiteError> {
    let suite = parse_suite_unchecked(source)?;
    let diags = validate_suite(&suite);
    if diags.is_empty() {
        Ok(suite)
    } else {
        Err(SuiteError::Invalid(diags))
    }
}

/// Deserialize a suite document without cross-reference validation.
pub fn parse_suite_unchecked(source: &str) -> Result<TestSuite, SuiteError> {
    let value: serde_yaml::Value =
        serde_yaml::from_str(source).map_err(|e| SuiteError::Malformed(e.to_string()))?;
    precheck_enums(&value)?;
    serde_yaml::from_value(value).map_err(|e| SuiteError::Malformed(e.to_string()))
}

// Surfaces unknown scoring/component types as dedicated errors rather than
// generic serde "unknown variant" messages.
fn precheck_enums(doc: &serde_yaml::Value) -> Result<(), SuiteError> {
    let Some(tests) = doc.get("tests").and_then(|t| t.as_sequence()) else {
        return Ok(());
    };
    for entry in tests {
        let qid = entry.get("question_id").and_then(|v| v.as_i64()).unwrap_or(-1);
        if let Some(st) = entry.get("scoring_type").and_then(|v| v.as_str()) {
            if !SCORING_TYPES.contains(&st) {
                return Err(SuiteError::UnknownScoringType { question_id: qid, value: st.to_string() });
            }
        }
        let components = entry
            .get("sandbox_setup")
            .and_then(|s| s.get("components"))
            .and_then(|c| c.as_sequence());
        for comp in components.into_iter().flatten() {
            if let Some(ty) = comp.get("type").and_then(|v| v.as_str()) {
                if !COMPONENT_TYPES.contains(&ty) {
                    return Err(SuiteError::UnknownComponentType { question_id: qid, value: ty.to_string() });
                }
            }
        }
    }
    Ok(())
}

struct Diags {
    out: Vec<Diagnostic>,
}

impl Diags {
    fn push(&mut self, qid: Option<u32>, field: impl Into<String>, kind: DiagnosticKind, message: impl Into<String>) {
        self.out.push(Diagnostic { question_id: qid, field: field.into(), kind, message: message.into() });
    }
}

/// Check every suite invariant. Returns an empty list iff the suite is valid.
pub fn validate_suite(suite: &TestSuite) -> Vec<Diagnostic> {
    let mut d = Diags { out: Vec::new() };
    let mut seen = HashMap::new();
    for (idx, q) in suite.templates.iter().enumerate() {
        if let Some(prev) = seen.insert(q.question_id, idx) {
            d.push(
                Some(q.question_id),
                "question_id",
                DiagnosticKind::DuplicateQuestionId,
                format!("duplicate question_id (first declared at entry {prev})"),
            );
        }
        validate_question(q, &mut d);
    }
    d.out
}

fn validate_question(q: &QuestionTemplate, d: &mut Diags) {
    let qid = Some(q.question_id);
    if q.question_id == 0 {
        d.push(qid, "question_id", DiagnosticKind::InvalidValue, "question_id must be positive");
    }
    if q.samples == 0 {
        d.push(qid, "samples", DiagnosticKind::InvalidValue, "samples must be positive");
    }

    let required: &[(&str, bool)] = match q.scoring_type {
        ScoringType::Stringmatch | ScoringType::Jsonmatch => {
            &[("expected_response", q.expected_response.is_some())]
        }
        ScoringType::ReadfileStringmatch | ScoringType::ReadfileJsonmatch => &[
            ("file_to_read", q.file_to_read.is_some()),
            ("expected_content", q.expected_content.is_some()),
        ],
        ScoringType::FilesExist => &[("files_to_check", q.files_to_check.is_some())],
        ScoringType::DirectoryStructure => &[("expected_structure", q.expected_structure.is_some())],
    };
    for (field, present) in required {
        if !present {
            d.push(
                qid,
                *field,
                DiagnosticKind::MissingScoringField,
                format!("scoring_type {} requires `{field}`", q.scoring_type),
            );
        }
    }

    validate_components(q, d);

    // Tokenize every template-bearing field and check placeholder usage.
    let mut number_ranges: BTreeMap<u32, (i64, i64, String)> = BTreeMap::new();
    let mut line_max: HashMap<String, (i64, String)> = HashMap::new();
    for (field, text) in q.template_fields() {
        let tokens = match template::tokenize(text) {
            Ok(t) => t,
            Err(e) => {
                d.push(qid, field, DiagnosticKind::TemplateSyntax, e.to_string());
                continue;
            }
        };
        let oracle_allowed = field == "expected_response" || field == "expected_content";
        let block_allowed = field == "template";
        check_tokens(
            q,
            &field,
            &tokens,
            oracle_allowed,
            block_allowed,
            &mut number_ranges,
            &mut line_max,
            d,
        );
    }

    for (name, (max, field)) in line_max {
        if let Some(SandboxComponent::CreateFiles {
            content: FileContent::LoremLines { count: RowCount::Fixed(count) },
            ..
        }) = q.component(&name)
        {
            if max > *count as i64 {
                d.push(
                    qid,
                    field,
                    DiagnosticKind::LineIndexOutOfRange,
                    format!("file_line index may reach {max} but `{name}` has {count} lines"),
                );
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_tokens(
    q: &QuestionTemplate,
    field: &str,
    tokens: &[TemplateToken],
    oracle_allowed: bool,
    block_allowed: bool,
    number_ranges: &mut BTreeMap<u32, (i64, i64, String)>,
    line_max: &mut HashMap<String, (i64, String)>,
    d: &mut Diags,
) {
    let qid = Some(q.question_id);
    for tok in tokens {
        match &tok.kind {
            TokenKind::Number { index, min, max, .. } => match number_ranges.get(index) {
                Some((lo, hi, first)) if (lo, hi) != (min, max) => d.push(
                    qid,
                    field,
                    DiagnosticKind::InconsistentNumberRange,
                    format!("number{index} declared as {min}:{max} here but {lo}:{hi} in {first}"),
                ),
                Some(_) => {}
                None => {
                    number_ranges.insert(*index, (*min, *max, field.to_string()));
                }
            },
            TokenKind::Semantic { pool, .. } => {
                if !SEMANTIC_POOLS.contains(&pool.as_str()) {
                    d.push(qid, field, DiagnosticKind::UnknownPool, format!("unknown semantic pool `{pool}`"));
                }
            }
            TokenKind::ExpectedStructure => {
                if !block_allowed {
                    d.push(
                        qid,
                        field,
                        DiagnosticKind::MisplacedPlaceholder,
                        "{{expected_structure}} is only allowed in the template body",
                    );
                } else if q.expected_structure.is_none() {
                    d.push(
                        qid,
                        field,
                        DiagnosticKind::MissingScoringField,
                        "{{expected_structure}} used but no expected_structure list declared",
                    );
                }
            }
            TokenKind::Oracle(call) => {
                if !oracle_allowed {
                    d.push(
                        qid,
                        field,
                        DiagnosticKind::MisplacedPlaceholder,
                        format!("oracle placeholder {} is only allowed in expected fields", call.kind.as_str()),
                    );
                }
                match q.component(&call.target) {
                    None => d.push(
                        qid,
                        field,
                        DiagnosticKind::DanglingTargetFile,
                        format!("TARGET_FILE[{}] does not name a sandbox component", call.target),
                    ),
                    Some(comp) => {
                        let expected = match call.kind {
                            OracleKind::FileLine | OracleKind::FileWord => "create_files",
                            OracleKind::SqliteQuery => "create_sqlite",
                            _ => "create_csv",
                        };
                        if comp.type_name() != expected {
                            d.push(
                                qid,
                                field,
                                DiagnosticKind::OracleTargetKind,
                                format!(
                                    "{} needs a {expected} component but `{}` is {}",
                                    call.kind.as_str(),
                                    call.target,
                                    comp.type_name()
                                ),
                            );
                        }
                    }
                }
                let upper = call.args.first().and_then(|a| template::index_upper_bound(a));
                if let (Some(upper), OracleKind::FileLine) = (upper, call.kind) {
                    let e = line_max.entry(call.target.clone()).or_insert((upper, field.to_string()));
                    if upper > e.0 {
                        *e = (upper, field.to_string());
                    }
                }
                for arg in &call.args {
                    check_tokens(q, field, arg, false, false, number_ranges, line_max, d);
                }
            }
            _ => {}
        }
    }
}

fn validate_components(q: &QuestionTemplate, d: &mut Diags) {
    let qid = Some(q.question_id);
    let mut names = BTreeSet::new();
    let mut targets = BTreeSet::new();
    for (i, comp) in q.components().iter().enumerate() {
        let field = format!("sandbox_setup.components[{i}]");
        if !names.insert(comp.name()) {
            d.push(
                qid,
                format!("{field}.name"),
                DiagnosticKind::DuplicateComponentName,
                format!("component name `{}` declared twice", comp.name()),
            );
        }
        if !targets.insert(comp.target_file()) {
            d.push(
                qid,
                format!("{field}.target_file"),
                DiagnosticKind::DuplicateTargetFile,
                format!("target_file `{}` shared by two components", comp.target_file()),
            );
        }
        match comp {
            SandboxComponent::CreateFiles { content: FileContent::LoremLines { count }, .. } => {
                if *count == RowCount::Fixed(0) {
                    d.push(qid, format!("{field}.content.count"), DiagnosticKind::InvalidValue, "count must be ≥ 1");
                }
            }
            SandboxComponent::CreateCsv { content, .. } => {
                if content.headers.len() != content.header_types.len() {
                    d.push(
                        qid,
                        format!("{field}.content"),
                        DiagnosticKind::HeaderMismatch,
                        format!(
                            "{} headers but {} header_types",
                            content.headers.len(),
                            content.header_types.len()
                        ),
                    );
                }
                if content.rows == RowCount::Fixed(0) {
                    d.push(qid, format!("{field}.content.rows"), DiagnosticKind::InvalidValue, "rows must be ≥ 1");
                }
            }
            SandboxComponent::CreateSqlite { content, .. } => {
                validate_tables(q.question_id, &field, &content.tables, d);
            }
        }
    }
}

fn validate_tables(question_id: u32, field: &str, tables: &[TableSpec], d: &mut Diags) {
    let qid = Some(question_id);
    let mut declared: HashMap<&str, &TableSpec> = HashMap::new();
    let mut fk_targets: BTreeSet<&str> = BTreeSet::new();
    for (ti, table) in tables.iter().enumerate() {
        let tfield = format!("{field}.content.tables[{ti}]");
        for (ci, col) in table.columns.iter().enumerate() {
            let cfield = format!("{tfield}.columns[{ci}]");
            if col.column_type != ColumnType::AutoId && col.data_type.is_none() && col.foreign_key.is_none() {
                d.push(
                    qid,
                    cfield.clone(),
                    DiagnosticKind::InvalidValue,
                    format!("column `{}` needs a data_type or foreign_key", col.name),
                );
            }
            let Some(fk) = &col.foreign_key else { continue };
            let Some((parent, parent_col)) = fk.split_once('.') else {
                d.push(
                    qid,
                    cfield,
                    DiagnosticKind::DanglingForeignKey,
                    format!("foreign_key `{fk}` is not of the form table.column"),
                );
                continue;
            };
            match declared.get(parent) {
                None => d.push(
                    qid,
                    cfield,
                    DiagnosticKind::DanglingForeignKey,
                    format!("foreign_key `{fk}` targets a table not declared earlier"),
                ),
                Some(parent_spec) => {
                    fk_targets.insert(parent);
                    let target = parent_spec.columns.iter().find(|c| c.name == parent_col);
                    match target {
                        Some(c) if c.column_type == ColumnType::AutoId => {}
                        Some(_) => d.push(
                            qid,
                            cfield,
                            DiagnosticKind::ForeignKeyTarget,
                            format!("foreign_key `{fk}` must target the parent's auto_id column"),
                        ),
                        None => d.push(
                            qid,
                            cfield,
                            DiagnosticKind::DanglingForeignKey,
                            format!("foreign_key `{fk}` names a missing column"),
                        ),
                    }
                }
            }
        }
        if table.rows == RowCount::Fixed(0) {
            d.push(qid, format!("{tfield}.rows"), DiagnosticKind::InvalidValue, "rows must be ≥ 1");
        }
        declared.insert(table.name.as_str(), table);
    }
    for name in fk_targets {
        let table = declared[name];
        let autos = table.columns.iter().filter(|c| c.column_type == ColumnType::AutoId).count();
        if autos != 1 {
            d.push(
                qid,
                format!("{field}.content.tables[{name}]"),
                DiagnosticKind::AutoIdCount,
                format!("table `{name}` is a foreign-key target and needs exactly one auto_id column, has {autos}"),
            );
        }
    }
}
