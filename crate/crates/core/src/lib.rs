//! Contamination-resistant benchmark harness for agentic LLM evaluation.
//!
//! A run starts from a declarative suite of question templates. Every
//! (question, sample) pair is instantiated with seeded random values, gets its
//! own sandbox of generated files, CSVs and SQLite databases, and has its
//! ground-truth answer computed by oracles that read those artifacts. Models
//! are then driven through a jailed tool loop, scored, and summarized with
//! multi-run reliability statistics.
//!
//! Module map:
//!
//! * [`suite`] parses and validates suite documents.
//! * [`template`] tokenizes the placeholder grammar and performs the
//!   pre-sandbox (phase-1) substitution.
//! * [`pools`] holds the value pools random placeholders and generators draw from.
//! * [`sandbox`] materializes lorem files, CSVs and SQLite databases.
//! * [`oracle`] computes ground truth from the generated artifacts (phase 2).
//! * [`item`] ties the above together into a fully resolved test item.
//! * [`score`] applies the six scoring types.
//! * [`agent`] runs one conversation against a chat-completions model.
//! * [`stats`] computes pooled accuracy, spread and confidence intervals.
//! * [`orchestrator`] expands run grids, persists records, resumes and reports.

pub mod agent;
pub mod item;
pub mod jail;
pub mod numeric;
pub mod orchestrator;
pub mod oracle;
pub mod pools;
pub mod sandbox;
pub mod score;
pub mod stats;
pub mod suite;
pub mod template;

pub use item::{instantiate, InstantiateOptions, ResolvedTestItem};
pub use pools::DataPools;
pub use suite::{parse_suite, validate_suite, QuestionTemplate, ScoringType, TestSuite};

/// The reference suite shipped with the crate (19 templates, 7 categories).
pub const REFERENCE_SUITE: &str = include_str!("../suites/enterprise_v0.1.yaml");
