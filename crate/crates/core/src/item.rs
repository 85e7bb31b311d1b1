//! One fully instantiated (question, sample): rendered prompt, built sandbox,
//! and oracle-computed expected answer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::oracle::{self, OracleError};
use crate::pools::DataPools;
use crate::sandbox::{self, SandboxError, SandboxManifest};
use crate::suite::{QuestionTemplate, ScoringType};
use crate::template::{self, derive_seed, run_master_seed, PendingOracle, SampleKey, SubstitutionMap, TemplateError};

#[derive(Debug, Error)]
pub enum ItemError {
    #[error("q{qid}: {field}: {source}")]
    Template { qid: u32, field: String, source: TemplateError },
    #[error("q{qid}: sandbox: {source}")]
    Sandbox { qid: u32, source: SandboxError },
    #[error("q{qid}: oracle: {source}")]
    Oracle { qid: u32, source: OracleError },
    #[error("q{qid}: expected answer is not valid JSON ({message}): {text}")]
    ExpectedNotJson { qid: u32, message: String, text: String },
    #[error("q{qid}: sample index {sample} out of range 1..={samples}")]
    SampleOutOfRange { qid: u32, sample: u32, samples: u32 },
}

#[derive(Debug, Clone)]
pub struct InstantiateOptions {
    pub master_seed: u64,
    pub run_id: u32,
    /// Mix the run id into the seed so each run sees fresh values.
    pub reseed_per_run: bool,
    /// Directory substituted for `{{artifacts}}`; each sample's sandbox root
    /// is `artifacts_root/{qs_id}`.
    pub artifacts_root: PathBuf,
}

impl InstantiateOptions {
    pub fn new(master_seed: u64, artifacts_root: impl Into<PathBuf>) -> Self {
        InstantiateOptions { master_seed, run_id: 0, reseed_per_run: false, artifacts_root: artifacts_root.into() }
    }

    pub fn sample_seed(&self, question_id: u32, sample_index: u32) -> u64 {
        let master = if self.reseed_per_run { run_master_seed(self.master_seed, self.run_id) } else { self.master_seed };
        derive_seed(master, question_id, sample_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedTestItem {
    pub key: SampleKey,
    pub qs_id: String,
    pub seed: u64,
    pub scoring_type: ScoringType,
    /// The user message.
    pub question: String,
    /// Fully concrete expected response/content, when the scoring type has one.
    pub expected: Option<String>,
    pub file_to_read: Option<String>,
    pub files_to_check: Vec<String>,
    pub expected_structure: Vec<String>,
    pub manifest: SandboxManifest,
    /// Component names read by oracles; their digests are rechecked after
    /// the agent finishes.
    pub oracle_inputs: Vec<String>,
    /// Oracle calls in the expected template, arguments resolved.
    pub oracles: Vec<PendingOracle>,
    /// Hex SHA-256 of `expected` (empty string when absent).
    pub expected_digest: String,
}

impl ResolvedTestItem {
    pub fn root(&self) -> &Path {
        &self.manifest.root
    }
}

pub fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Instantiate sample `sample_index` (1-based) of `question`: phase 1,
/// sandbox build, phase 2.
pub fn instantiate(
    question: &QuestionTemplate,
    sample_index: u32,
    pools: &DataPools,
    opts: &InstantiateOptions,
) -> Result<ResolvedTestItem, ItemError> {
    let qid = question.question_id;
    if sample_index == 0 || sample_index > question.samples {
        return Err(ItemError::SampleOutOfRange { qid, sample: sample_index, samples: question.samples });
    }
    let key = SampleKey { question_id: qid, sample_index, run_id: opts.run_id };
    let seed = opts.sample_seed(qid, sample_index);
    let artifacts = opts.artifacts_root.display().to_string();
    let mut map = SubstitutionMap::new(key, seed, artifacts);
    let terr = |field: &str| {
        let field = field.to_string();
        move |source| ItemError::Template { qid, field, source }
    };

    let mut expected_structure = Vec::new();
    for (i, e) in question.expected_structure.iter().flatten().enumerate() {
        expected_structure.push(template::render_plain(e, &mut map, pools).map_err(terr(&format!("expected_structure[{i}]")))?);
    }
    map.set_expected_structure(&expected_structure);

    let question_text = template::render_plain(&question.template, &mut map, pools).map_err(terr("template"))?;
    let mut files_to_check = Vec::new();
    for (i, f) in question.files_to_check.iter().flatten().enumerate() {
        files_to_check.push(template::render_plain(f, &mut map, pools).map_err(terr(&format!("files_to_check[{i}]")))?);
    }
    let file_to_read = match &question.file_to_read {
        Some(f) => Some(template::render_plain(f, &mut map, pools).map_err(terr("file_to_read"))?),
        None => None,
    };
    let expected_partial = match question.expected_template() {
        Some(t) => {
            let tokens = template::tokenize(t).map_err(terr("expected"))?;
            Some(template::resolve_phase1(&tokens, &mut map, pools).map_err(terr("expected"))?)
        }
        None => None,
    };

    let root = opts.artifacts_root.join(key.qs_id());
    let manifest =
        sandbox::build_sandbox(question, &mut map, pools, &root).map_err(|source| ItemError::Sandbox { qid, source })?;

    let mut oracle_inputs: Vec<String> = Vec::new();
    let oracles: Vec<PendingOracle> = expected_partial.iter().flat_map(|p| p.pending().cloned()).collect();
    let expected = match &expected_partial {
        Some(p) => {
            for o in p.pending() {
                if !oracle_inputs.contains(&o.target) {
                    oracle_inputs.push(o.target.clone());
                }
            }
            Some(oracle::resolve_phase2(p, &manifest).map_err(|source| ItemError::Oracle { qid, source })?)
        }
        None => None,
    };
    if let (Some(text), true) = (&expected, question.scoring_type.is_json()) {
        if let Err(e) = serde_json::from_str::<serde_json::Value>(text) {
            return Err(ItemError::ExpectedNotJson { qid, message: e.to_string(), text: text.clone() });
        }
    }
    let expected_digest = expected.as_deref().map(sha256_hex).unwrap_or_default();

    Ok(ResolvedTestItem {
        key,
        qs_id: key.qs_id(),
        seed,
        scoring_type: question.scoring_type,
        question: question_text,
        expected,
        file_to_read,
        files_to_check,
        expected_structure,
        manifest,
        oracle_inputs,
        oracles,
        expected_digest,
    })
}
