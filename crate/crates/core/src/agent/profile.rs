//! Tool profile: the configurable wording and limits of the tool registry.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOOL_PROFILE: &str = include_str!("../../data/tool_profile.yaml");

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read tool profile {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed tool profile: {0}")]
    Malformed(String),
    #[error("tool name `{0}` used twice")]
    DuplicateName(String),
    #[error("invalid tool profile: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolText {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolTexts {
    pub execute_code: ToolText,
    pub read_file: ToolText,
    pub write_file: ToolText,
    pub list_directory: ToolText,
    pub create_directory: ToolText,
    pub inspect_schema: ToolText,
    pub run_query: ToolText,
}

/// Canned tool messages. `{name}` fields are filled at use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Messages {
    pub empty_output: String,
    pub timeout: String,
    pub nonzero_exit: String,
    pub spawn_failed: String,
    pub code_rejected: String,
    pub output_truncated: String,
    pub path_rejected: String,
    pub not_found: String,
    pub io_error: String,
    pub write_ok: String,
    pub mkdir_ok: String,
    pub empty_directory: String,
    pub sql_error: String,
    pub no_rows: String,
    pub rows_truncated: String,
    pub bad_arguments: String,
    pub unknown_tool: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSettings {
    pub interpreter: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    pub timeout_secs: u64,
    pub output_limit_bytes: usize,
    #[serde(default)]
    pub read_paths: Vec<PathBuf>,
    #[serde(default)]
    pub allow_network: bool,
}

impl CodeSettings {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqlSettings {
    pub row_limit: usize,
    pub query_timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolProfile {
    pub system_prompt: String,
    pub tools: ToolTexts,
    pub messages: Messages,
    pub code: CodeSettings,
    pub sql: SqlSettings,
    pub read_file_limit_bytes: usize,
}

impl Default for ToolProfile {
    fn default() -> Self {
        ToolProfile::from_yaml(DEFAULT_TOOL_PROFILE).expect("embedded tool profile is valid")
    }
}

impl ToolProfile {
    pub fn from_yaml(source: &str) -> Result<ToolProfile, ProfileError> {
        let p: ToolProfile = serde_yaml::from_str(source).map_err(|e| ProfileError::Malformed(e.to_string()))?;
        p.check()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<ToolProfile, ProfileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ProfileError::Io { path: path.display().to_string(), source })?;
        ToolProfile::from_yaml(&text)
    }

    fn check(&self) -> Result<(), ProfileError> {
        let mut names = BTreeSet::new();
        for t in self.tool_texts() {
            if t.name.is_empty() {
                return Err(ProfileError::Invalid("empty tool name".into()));
            }
            if !names.insert(t.name.as_str()) {
                return Err(ProfileError::DuplicateName(t.name.clone()));
            }
        }
        if self.code.timeout_secs == 0 || self.sql.row_limit == 0 || self.code.output_limit_bytes == 0 {
            return Err(ProfileError::Invalid("limits must be positive".into()));
        }
        Ok(())
    }

    pub fn tool_texts(&self) -> [&ToolText; 7] {
        let t = &self.tools;
        [
            &t.execute_code,
            &t.read_file,
            &t.write_file,
            &t.list_directory,
            &t.create_directory,
            &t.inspect_schema,
            &t.run_query,
        ]
    }
}

/// Substitute `{key}` fields in a message template.
pub fn fill(template: &str, fields: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in fields {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
