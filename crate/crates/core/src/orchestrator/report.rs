//! Summaries regenerated from the record store. Read-only over records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::orchestrator::store::{ResultRecord, Store, VoidRecord};
use crate::orchestrator::OrchestratorError;
use crate::stats::{per_question_matrix, percent, summarize, QuestionMatrix, RunAccuracy, SuiteStatistics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub records: usize,
    pub runs: Vec<RunAccuracy>,
    pub stats: SuiteStatistics,
    pub matrix: QuestionMatrix,
    /// Record count per verdict reason.
    pub reasons: BTreeMap<String, u64>,
    /// Voided items that still have no record.
    pub voided: Vec<VoidRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub master_seed: u64,
    pub samples: BTreeMap<u32, u32>,
    /// Sorted by pooled accuracy, best first.
    pub models: Vec<ModelReport>,
}

impl Report {
    pub fn model(&self, id: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == id)
    }
}

/// Per-run accuracy, time and token totals.
pub fn run_accuracies(records: &[ResultRecord]) -> Vec<RunAccuracy> {
    let mut by_run: BTreeMap<u32, RunAccuracy> = BTreeMap::new();
    for r in records {
        let e = by_run.entry(r.run_id).or_insert_with(|| RunAccuracy::new(r.run_id, 0, 0));
        e.total += 1;
        e.correct += u64::from(r.correct);
        e.total_wall_time += r.wall_time;
        e.total_output_tokens += r.output_tokens;
    }
    by_run.into_values().collect()
}

/// Summarize one model's records. `runs` are the run ids the grid expects.
pub fn model_report(
    model: &str,
    records: &[ResultRecord],
    samples: &BTreeMap<u32, u32>,
    runs: &[u32],
    voided: Vec<VoidRecord>,
) -> Result<ModelReport, OrchestratorError> {
    let accs = run_accuracies(records);
    let stats = summarize(&accs).map_err(|e| OrchestratorError::Store(format!("{model}: {e}")))?;
    let matrix = per_question_matrix(records.iter().map(|r| (r.run_id, r.question_id, r.correct)), samples, runs);
    let mut reasons = BTreeMap::new();
    for r in records {
        *reasons.entry(r.reason.as_str().to_string()).or_insert(0) += 1;
    }
    Ok(ModelReport { model: model.to_string(), records: records.len(), runs: accs, stats, matrix, reasons, voided })
}

fn rank(models: &mut [ModelReport]) {
    models.sort_by(|a, b| {
        b.stats
            .pooled_accuracy
            .total_cmp(&a.stats.pooled_accuracy)
            .then(b.stats.mean_accuracy.total_cmp(&a.stats.mean_accuracy))
            .then(a.model.cmp(&b.model))
    });
}

/// Build the report for `only` models (all when empty).
pub fn build_report(store: &Store, only: &[String]) -> Result<Report, OrchestratorError> {
    let manifest = store
        .load_manifest()?
        .ok_or_else(|| OrchestratorError::Store(format!("no plan.json in {}", store.root().display())))?;
    let mut models = Vec::new();
    for (model, runs) in &manifest.runs {
        if !only.is_empty() && !only.contains(model) {
            continue;
        }
        let runs: Vec<u32> = runs.iter().copied().collect();
        let mut records = Vec::new();
        for &r in &runs {
            records.extend(store.read_run(model, r, false)?);
        }
        if records.is_empty() {
            continue;
        }
        let have: BTreeSet<(u32, u32, u32)> =
            records.iter().map(|r| (r.run_id, r.question_id, r.sample_index)).collect();
        let voided = store
            .read_voided(model)?
            .into_iter()
            .filter(|v| !have.contains(&(v.run_id, v.question_id, v.sample_index)))
            .collect();
        models.push(model_report(model, &records, &manifest.samples, &runs, voided)?);
    }
    if models.is_empty() {
        return Err(OrchestratorError::Store("the record store is empty".into()));
    }
    rank(&mut models);
    Ok(Report { master_seed: manifest.master_seed, samples: manifest.samples, models })
}

fn opt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), percent)
}

pub fn render_text(report: &Report) -> String {
    let header = [
        "Model", "Runs", "Pooled", "Mean", "Std dev", "RSE", "95% t-CI", "Range", "Avg time (s)", "Avg tokens",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for m in &report.models {
        let s = &m.stats;
        let ci = match (s.t_ci_low, s.t_ci_high) {
            (Some(lo), Some(hi)) => format!("({}, {})", percent(lo), percent(hi)),
            _ => "-".into(),
        };
        rows.push(vec![
            m.model.clone(),
            s.runs.to_string(),
            percent(s.pooled_accuracy),
            percent(s.mean_accuracy),
            opt_pct(s.std_dev),
            s.rse.map_or_else(|| "-".into(), |r| format!("±{}", percent(r))),
            ci,
            percent(s.range),
            format!("{:.2}", s.avg_time_per_conversation),
            format!("{:.1}", s.avg_tokens_per_conversation),
        ]);
    }
    let widths: Vec<usize> =
        (0..header.len()).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }

    for m in &report.models {
        let _ = writeln!(out, "\n{}: correct per question and run (* = incomplete cell)", m.model);
        let mx = &m.matrix;
        let incomplete: BTreeSet<(u32, u32)> = mx.incomplete.iter().map(|c| (c.0, c.1)).collect();
        let mut line = String::from("run ");
        for q in &mx.questions {
            let _ = write!(line, " {:>5}", format!("q{q}"));
        }
        let _ = writeln!(out, "{line}");
        for (run, cells) in &mx.rows {
            let mut line = format!("{run:<4}");
            for (q, c) in mx.questions.iter().zip(cells) {
                let mark = if incomplete.contains(&(*run, *q)) { "*" } else { "" };
                let _ = write!(line, " {:>5}", format!("{c}{mark}"));
            }
            let _ = writeln!(out, "{line}");
        }
        let reasons: Vec<String> = m.reasons.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "reasons: {}", reasons.join(" "));
        if !m.voided.is_empty() {
            let _ = writeln!(out, "voided: {}", m.voided.len());
            for v in &m.voided {
                let _ = writeln!(out, "  run {} q{} s{}: {}", v.run_id, v.question_id, v.sample_index, v.reason);
            }
        }
    }
    out
}

pub fn render_csv(report: &Report) -> String {
    let mut out = String::from("model,run,question,correct,scored,samples\n");
    for m in &report.models {
        let incomplete: BTreeMap<(u32, u32), u32> = m.matrix.incomplete.iter().map(|c| ((c.0, c.1), c.2)).collect();
        for (run, cells) in &m.matrix.rows {
            for (q, c) in m.matrix.questions.iter().zip(cells) {
                let want = report.samples.get(q).copied().unwrap_or(0);
                let scored = incomplete.get(&(*run, *q)).copied().unwrap_or(want);
                let _ = writeln!(out, "{},{run},{q},{c},{scored},{want}", csv_field(&m.model));
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) { format!("\"{}\"", s.replace('"', "\"\"")) } else { s.to_string() }
}

/// Write summary.json, summary.txt and per_question.csv; returns their paths.
pub fn write_report(store: &Store, report: &Report) -> Result<Vec<PathBuf>, OrchestratorError> {
    let files = [
        ("summary.json", serde_json::to_string_pretty(report).expect("report serializes")),
        ("summary.txt", render_text(report)),
        ("per_question.csv", render_csv(report)),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let p = store.root().join(name);
        std::fs::write(&p, text).map_err(|source| OrchestratorError::Io { path: p.display().to_string(), source })?;
        out.push(p);
    }
    Ok(out)
}
