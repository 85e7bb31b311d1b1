//! Two-stage screening: a few runs for every model, then more runs for the
//! best ones, aggregated over both stages.

use serde::{Deserialize, Serialize};

use crate::orchestrator::execute::{execute, ExecutionSummary, RunPlan};
use crate::orchestrator::report::{build_report, Report};
use crate::orchestrator::store::Store;
use crate::orchestrator::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenOutcome {
    /// Stage-A ranking, best first: (model, pooled accuracy).
    pub stage_a: Vec<(String, f64)>,
    pub survivors: Vec<String>,
    /// Statistics over stage A and B runs for the survivors.
    pub report: Report,
}

/// Run `plan.runs` stage-A runs for every model, keep the `keep_top` best
/// by pooled accuracy, and give those `deep_runs` more runs with the same
/// samples. Run ids continue from stage A.
pub fn two_stage_screen(
    plan: &RunPlan,
    deep_runs: u32,
    keep_top: usize,
) -> Result<(ScreenOutcome, ExecutionSummary, ExecutionSummary), OrchestratorError> {
    if keep_top == 0 || keep_top > plan.models.len() {
        return Err(OrchestratorError::Config(format!(
            "keep_top must be between 1 and the number of models ({}), got {keep_top}",
            plan.models.len()
        )));
    }
    let store = Store::new(&plan.out);
    let ids: Vec<String> = plan.models.iter().map(|m| m.id.clone()).collect();

    let a = execute(plan)?;
    let ranked = build_report(&store, &ids)?;
    let stage_a: Vec<(String, f64)> =
        ranked.models.iter().map(|m| (m.model.clone(), m.stats.pooled_accuracy)).collect();
    let survivors: Vec<String> = stage_a.iter().take(keep_top).map(|(m, _)| m.clone()).collect();

    let mut deep = plan.clone();
    deep.models.retain(|m| survivors.contains(&m.id));
    deep.first_run = plan.first_run + plan.runs;
    deep.runs = deep_runs;
    let b = if deep_runs > 0 { execute(&deep)? } else { ExecutionSummary::default() };

    let report = build_report(&store, &survivors)?;
    Ok((ScreenOutcome { stage_a, survivors, report }, a, b))
}
