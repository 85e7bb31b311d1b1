//! Expanding a plan into conversation units and running them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::agent::http::{HttpModel, HttpModelConfig};
use crate::agent::{run_conversation, ChatModel, ConversationRecord, EndState, Limits, MockModel, MockPolicy, ToolProfile, ToolRuntime};
use crate::item::{instantiate, InstantiateOptions, ResolvedTestItem};
use crate::jail::Jail;
use crate::orchestrator::store::{GridManifest, RecordWriter, ResultRecord, Store, VoidRecord};
use crate::orchestrator::OrchestratorError;
use crate::pools::DataPools;
use crate::score::{score_item, Reason, ScoreOptions, Verdict};
use crate::suite::{QuestionTemplate, TestSuite};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Mock(MockPolicy),
    Http(HttpModelConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    /// Id used in records and file names.
    pub id: String,
    pub spec: ModelSpec,
}

impl ModelEntry {
    pub fn mock(policy: MockPolicy) -> ModelEntry {
        ModelEntry { id: format!("mock-{}", policy.name().replace(':', "-")), spec: ModelSpec::Mock(policy) }
    }

    pub fn http(config: HttpModelConfig) -> ModelEntry {
        ModelEntry { id: config.model.clone(), spec: ModelSpec::Http(config) }
    }
}

/// Make one run's tool runtime panic after a number of tool calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultInjection {
    pub model: String,
    pub run_id: u32,
    pub after_calls: u64,
}

#[derive(Debug, Clone)]
pub struct RunPlan {
    pub suite: TestSuite,
    pub pools: Arc<DataPools>,
    pub models: Vec<ModelEntry>,
    /// Number of runs, numbered from `first_run`.
    pub runs: u32,
    pub first_run: u32,
    pub samples_override: Option<u32>,
    /// Restrict to these question ids; empty means all.
    pub questions: Vec<u32>,
    pub parallelism: usize,
    pub master_seed: u64,
    pub out: PathBuf,
    pub tool_profile: Arc<ToolProfile>,
    pub reseed_per_run: bool,
    pub keep_sandboxes: bool,
    pub limits: Limits,
    pub score: ScoreOptions,
    pub fault: Option<FaultInjection>,
}

impl RunPlan {
    pub fn new(suite: TestSuite, models: Vec<ModelEntry>, out: impl Into<PathBuf>) -> RunPlan {
        RunPlan {
            suite,
            pools: Arc::new(DataPools::default_pools()),
            models,
            runs: 1,
            first_run: 1,
            samples_override: None,
            questions: Vec::new(),
            parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            master_seed: 0,
            out: out.into(),
            tool_profile: Arc::new(ToolProfile::default()),
            reseed_per_run: false,
            keep_sandboxes: true,
            limits: Limits::default(),
            score: ScoreOptions::default(),
            fault: None,
        }
    }

    pub fn run_ids(&self) -> Vec<u32> {
        (self.first_run..self.first_run + self.runs).collect()
    }

    /// Templates in scope, with any sample override applied.
    pub fn templates(&self) -> Vec<QuestionTemplate> {
        self.suite
            .templates
            .iter()
            .filter(|q| self.questions.is_empty() || self.questions.contains(&q.question_id))
            .map(|q| {
                let mut q = q.clone();
                if let Some(n) = self.samples_override {
                    q.samples = n;
                }
                q
            })
            .collect()
    }

    pub fn check(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.to_string()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.first_run == 0 {
            return bad("run ids start at 1");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.models.is_empty() {
            return bad("no model configured");
        }
        if self.samples_override == Some(0) {
            return bad("samples override must be at least 1");
        }
        let ids: HashSet<&str> = self.models.iter().map(|m| m.id.as_str()).collect();
        if ids.len() != self.models.len() {
            return bad("model ids must be unique");
        }
        if self.templates().is_empty() {
            return bad("no questions selected");
        }
        for q in &self.questions {
            if !self.suite.templates.iter().any(|t| t.question_id == *q) {
                return Err(OrchestratorError::Config(format!("question {q} is not in the suite")));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> GridManifest {
        GridManifest {
            master_seed: self.master_seed,
            samples: self.templates().iter().map(|q| (q.question_id, q.samples)).collect(),
            runs: self.models.iter().map(|m| (m.id.clone(), self.run_ids().into_iter().collect())).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionSummary {
    /// Records appended by this invocation.
    pub executed: usize,
    /// Units already recorded before this invocation.
    pub skipped: usize,
    pub voided: usize,
    /// Units not attempted because their run's tool runtime crashed.
    pub abandoned: usize,
    /// (model, run) pairs whose tool runtime crashed.
    pub crashed_runs: Vec<(String, u32)>,
}

struct RunState {
    model: usize,
    run_id: u32,
    runtime: ToolRuntime,
    writer: Mutex<RecordWriter>,
    opts: InstantiateOptions,
}

struct Unit {
    run: usize,
    question: usize,
    sample: u32,
}

enum Outcome {
    Record(Box<ResultRecord>),
    Void(String),
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Run every (model, run, question, sample) unit not already recorded.
pub fn execute(plan: &RunPlan) -> Result<ExecutionSummary, OrchestratorError> {
    plan.check()?;
    let store = Store::new(&plan.out);
    store.merge_manifest(&plan.manifest())?;
    let templates = plan.templates();

    let mut runs = Vec::new();
    let mut units = Vec::new();
    let mut summary = ExecutionSummary::default();
    for (mi, model) in plan.models.iter().enumerate() {
        for run_id in plan.run_ids() {
            let done: HashSet<(u32, u32)> = store.read_run(&model.id, run_id, true)?.iter().map(|r| r.key()).collect();
            let mut runtime = ToolRuntime::new(plan.tool_profile.clone());
            if let Some(f) = &plan.fault {
                if f.model == model.id && f.run_id == run_id {
                    runtime = runtime.with_fault_after(f.after_calls);
                }
            }
            let mut opts = InstantiateOptions::new(plan.master_seed, store.sandbox_root(&model.id, run_id));
            opts.run_id = run_id;
            opts.reseed_per_run = plan.reseed_per_run;
            let ri = runs.len();
            runs.push(RunState { model: mi, run_id, runtime, writer: Mutex::new(store.writer(&model.id, run_id)?), opts });
            for (qi, q) in templates.iter().enumerate() {
                for s in 1..=q.samples {
                    if done.contains(&(q.question_id, s)) {
                        summary.skipped += 1;
                    } else {
                        units.push(Unit { run: ri, question: qi, sample: s });
                    }
                }
            }
        }
    }
    log::info!("{} units to run, {} already recorded", units.len(), summary.skipped);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let executed = AtomicUsize::new(0);
    let voided = AtomicUsize::new(0);
    let abandoned = AtomicUsize::new(0);
    let failure: Mutex<Option<OrchestratorError>> = Mutex::new(None);
    let total = units.len();

    pool.install(|| {
        units.par_iter().for_each(|u| {
            let rs = &runs[u.run];
            if rs.runtime.is_poisoned() {
                abandoned.fetch_add(1, Ordering::Relaxed);
                return;
            }
            let model = &plan.models[rs.model];
            let q = &templates[u.question];
            let result = panic::catch_unwind(AssertUnwindSafe(|| run_unit(plan, &store, rs, model, q, u.sample)));
            let outcome = match result {
                Ok(o) => o,
                Err(_) if rs.runtime.is_poisoned() => {
                    abandoned.fetch_add(1, Ordering::Relaxed);
                    return;
                }
                Err(payload) => Outcome::Record(Box::new(error_record(
                    model,
                    rs.run_id,
                    q,
                    u.sample,
                    format!("panic: {}", panic_message(payload.as_ref())),
                ))),
            };
            let written = match outcome {
                Outcome::Record(rec) => {
                    let r = rs.writer.lock().expect("writer lock").append(rec.as_ref());
                    if r.is_ok() {
                        let n = executed.fetch_add(1, Ordering::Relaxed) + 1;
                        if n.is_multiple_of(100) {
                            log::info!("{n}/{total} units recorded");
                        }
                    }
                    r
                }
                Outcome::Void(reason) => {
                    voided.fetch_add(1, Ordering::Relaxed);
                    store.append_void(&VoidRecord {
                        model: model.id.clone(),
                        run_id: rs.run_id,
                        question_id: q.question_id,
                        sample_index: u.sample,
                        reason,
                    })
                }
            };
            if let Err(e) = written {
                failure.lock().expect("failure lock").get_or_insert(e);
            }
        })
    });

    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    summary.executed = executed.into_inner();
    summary.voided = voided.into_inner();
    summary.abandoned = abandoned.into_inner();
    summary.crashed_runs = runs
        .iter()
        .filter(|r| r.runtime.is_poisoned())
        .map(|r| (plan.models[r.model].id.clone(), r.run_id))
        .collect();
    for (m, r) in &summary.crashed_runs {
        log::error!("tool runtime for {m} run {r} crashed; resume to finish that run");
    }
    Ok(summary)
}

fn error_record(model: &ModelEntry, run_id: u32, q: &QuestionTemplate, sample: u32, detail: String) -> ResultRecord {
    ResultRecord {
        model: model.id.clone(),
        run_id,
        question_id: q.question_id,
        sample_index: sample,
        qs_id: crate::template::qs_id(q.question_id, sample),
        correct: false,
        reason: Reason::AgentError,
        detail,
        wall_time: 0.0,
        request_latency: 0.0,
        input_tokens: 0,
        output_tokens: 0,
        steps: 0,
        tool_calls: 0,
        end_state: None,
        seed: 0,
        expected_digest: String::new(),
        transcript: String::new(),
    }
}

fn make_model(plan: &RunPlan, model: &ModelEntry, item: &ResolvedTestItem) -> Box<dyn ChatModel> {
    match &model.spec {
        ModelSpec::Mock(policy) => Box::new(MockModel::new(*policy, item, plan.master_seed)),
        ModelSpec::Http(cfg) => Box::new(HttpModel::new(cfg.clone())),
    }
}

/// Final verdict for a finished conversation.
pub fn judge(item: &ResolvedTestItem, conv: &ConversationRecord, opts: ScoreOptions) -> Verdict {
    match conv.end_state {
        EndState::StepLimit => {
            Verdict::incorrect(Reason::StepLimit, format!("no answer after {} model calls", conv.steps))
        }
        EndState::TransportError => {
            Verdict::incorrect(Reason::AgentError, conv.error.clone().unwrap_or_default())
        }
        EndState::Answered => {
            let changed = item.manifest.changed(item.oracle_inputs.iter().map(String::as_str));
            if changed.is_empty() {
                score_item(item, &conv.final_message, opts)
            } else {
                Verdict::incorrect(Reason::SandboxTampered, format!("modified: {}", changed.join(", ")))
            }
        }
    }
}

fn run_unit(
    plan: &RunPlan,
    store: &Store,
    rs: &RunState,
    model: &ModelEntry,
    q: &QuestionTemplate,
    sample: u32,
) -> Outcome {
    // A transport failure before any tool ran leaves nothing behind, so the
    // conversation can be replayed on a fresh sandbox.
    let mut attempt = 0;
    let (item, conv) = loop {
        attempt += 1;
        let item = match instantiate(q, sample, &plan.pools, &rs.opts) {
            Ok(i) => i,
            Err(e) => return Outcome::Record(Box::new(error_record(model, rs.run_id, q, sample, e.to_string()))),
        };
        let jail = match Jail::new(item.root()) {
            Ok(j) => j,
            Err(e) => return Outcome::Record(Box::new(error_record(model, rs.run_id, q, sample, e.to_string()))),
        };
        let mut chat = make_model(plan, model, &item);
        let conv = run_conversation(&item, &model.id, &mut chat, &rs.runtime, &jail, &plan.limits);
        let replay = conv.end_state == EndState::TransportError && conv.tool_calls == 0;
        if replay && attempt < plan.limits.retry.attempts {
            log::warn!("{} run {} {}: replaying after transport failure", model.id, rs.run_id, item.qs_id);
            continue;
        }
        break (item, conv);
    };

    let transcript_rel = store.transcript_rel(&model.id, rs.run_id, &item.qs_id);
    let transcript_path = store.root().join(&transcript_rel);
    let saved = transcript_path
        .parent()
        .map_or(Ok(()), std::fs::create_dir_all)
        .and_then(|_| std::fs::write(&transcript_path, serde_json::to_vec_pretty(&conv).expect("transcript serializes")));
    if let Err(e) = &saved {
        log::warn!("cannot write transcript {}: {e}", transcript_path.display());
    }

    if conv.end_state == EndState::TransportError {
        let why = if conv.tool_calls == 0 { "transport_error" } else { "agent_error: transport failure after tool calls" };
        cleanup(plan, &item);
        return Outcome::Void(format!("{why}: {}", conv.error.as_deref().unwrap_or_default()));
    }

    let verdict = judge(&item, &conv, plan.score);
    cleanup(plan, &item);
    Outcome::Record(Box::new(ResultRecord {
        model: model.id.clone(),
        run_id: rs.run_id,
        question_id: q.question_id,
        sample_index: sample,
        qs_id: item.qs_id.clone(),
        correct: verdict.correct,
        reason: verdict.reason,
        detail: verdict.detail,
        wall_time: conv.wall_time,
        request_latency: conv.request_latency,
        input_tokens: conv.input_tokens,
        output_tokens: conv.output_tokens,
        steps: conv.steps,
        tool_calls: conv.tool_calls,
        end_state: Some(conv.end_state),
        seed: item.seed,
        expected_digest: item.expected_digest.clone(),
        transcript: if saved.is_ok() { transcript_rel.display().to_string() } else { String::new() },
    }))
}

fn cleanup(plan: &RunPlan, item: &ResolvedTestItem) {
    if !plan.keep_sandboxes {
        let _ = std::fs::remove_dir_all(item.root());
    }
}

/// Completed (question, sample) keys per (model, run), read without repair.
pub fn completed_keys(
    store: &Store,
    models: &[String],
    runs: &[u32],
) -> Result<BTreeMap<(String, u32), BTreeSet<(u32, u32)>>, OrchestratorError> {
    let mut out = BTreeMap::new();
    for m in models {
        for &r in runs {
            out.insert((m.clone(), r), store.read_run(m, r, false)?.iter().map(|x| x.key()).collect());
        }
    }
    Ok(out)
}

/// Records grouped by (model, run), for callers that want them in memory.
pub fn load_records(store: &Store) -> Result<HashMap<(String, u32), Vec<ResultRecord>>, OrchestratorError> {
    let mut out = HashMap::new();
    if let Some(m) = store.load_manifest()? {
        for (model, runs) in &m.runs {
            for &r in runs {
                out.insert((model.clone(), r), store.read_run(model, r, false)?);
            }
        }
    }
    Ok(out)
}
