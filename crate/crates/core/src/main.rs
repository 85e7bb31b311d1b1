use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use sandbench::agent::http::{HttpModelConfig, API_KEY_ENV};
use sandbench::agent::{Limits, MockPolicy, RetryPolicy, ToolProfile};
use sandbench::orchestrator::{
    build_report, execute, two_stage_screen, write_report, FaultInjection, ModelEntry, RunPlan, Store,
};
use sandbench::score::ScoreOptions;
use sandbench::suite::{parse_suite_unchecked, validate_suite, TestSuite};
use sandbench::{instantiate, DataPools, InstantiateOptions, REFERENCE_SUITE};

#[derive(Parser)]
#[command(name = "sandbench", version, about = "Randomized, sandboxed agentic benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a suite; optionally instantiate every item.
    Validate(ValidateArgs),
    /// Execute a run grid, resuming any existing records in --out.
    Run(RunArgs),
    /// Regenerate summaries from a record store.
    Report(ReportArgs),
    /// Coarse runs for every model, then deep runs for the best.
    Screen(ScreenArgs),
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite YAML. Defaults to the bundled reference suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Data pools YAML. Defaults to the bundled pools.
    #[arg(long)]
    pools: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    /// Instantiate every sample (sandbox and oracles) in a scratch directory.
    #[arg(long)]
    deep: bool,
    #[arg(long)]
    samples_override: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct PlanArgs {
    /// Base URL of a chat-completions endpoint. The API key is read from
    /// SANDBENCH_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name at the endpoint. Repeatable.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Mock policy: perfect, null, looping or noisy:<p>. Repeatable.
    #[arg(long = "mock")]
    mocks: Vec<String>,
    #[arg(long, default_value_t = 1)]
    runs: u32,
    #[arg(long)]
    samples_override: Option<u32>,
    /// Only these question ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    questions: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long, default_value = "sandbench-out")]
    out: PathBuf,
    #[arg(long)]
    tool_profile: Option<PathBuf>,
    /// Give every run fresh random values instead of repeating samples.
    #[arg(long)]
    reseed_per_run: bool,
    /// Keep each sample's sandbox after scoring.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    keep_sandboxes: bool,
    #[arg(long, default_value_t = sandbench::agent::DEFAULT_STEP_LIMIT)]
    max_steps: u32,
    /// Attempts per model request.
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long, default_value_t = 2000)]
    retry_delay_ms: u64,
    #[arg(long, default_value_t = 300)]
    request_timeout: u64,
    #[arg(long)]
    temperature: Option<f64>,
    /// Do not strip a Markdown code fence around JSON answers.
    #[arg(long)]
    strict_json: bool,
    /// MODEL:RUN:CALLS, crash that run's tool runtime after CALLS calls.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "sandbench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// Additional runs for the survivors.
    #[arg(long)]
    deep_runs: u32,
    #[arg(long)]
    keep_top: usize,
}

fn load_suite(args: &SuiteArgs) -> Result<TestSuite> {
    let text = match &args.suite {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => REFERENCE_SUITE.to_string(),
    };
    let suite = parse_suite_unchecked(&text)?;
    let diags = validate_suite(&suite);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("error: {d}");
        }
        bail!("suite has {} problem(s)", diags.len());
    }
    Ok(suite)
}

fn load_pools(args: &SuiteArgs) -> Result<DataPools> {
    match &args.pools {
        Some(p) => Ok(DataPools::load(p)?),
        None => Ok(DataPools::default_pools()),
    }
}

fn validate(args: ValidateArgs) -> Result<()> {
    let suite = load_suite(&args.suite)?;
    let pools = load_pools(&args.suite)?;
    let samples = |n: u32| args.samples_override.unwrap_or(n);
    let items: u32 = suite.templates.iter().map(|q| samples(q.samples)).sum();
    println!("{} templates, {items} items per run", suite.templates.len());
    for (cat, n) in suite.category_counts() {
        println!("  {:<40} {n}", cat.label());
    }
    if args.deep {
        let scratch = tempfile_dir()?;
        let opts = InstantiateOptions::new(args.seed, &scratch);
        let mut failures = 0;
        for q in &suite.templates {
            let mut q = q.clone();
            q.samples = samples(q.samples);
            for s in 1..=q.samples {
                match instantiate(&q, s, &pools, &opts) {
                    Ok(item) => {
                        let _ = std::fs::remove_dir_all(item.root());
                    }
                    Err(e) => {
                        failures += 1;
                        eprintln!("error: q{} sample {s}: {e}", q.question_id);
                    }
                }
            }
        }
        let _ = std::fs::remove_dir_all(&scratch);
        if failures > 0 {
            bail!("{failures} item(s) failed to instantiate");
        }
        println!("all {items} items instantiated");
    }
    Ok(())
}

fn tempfile_dir() -> Result<PathBuf> {
    let p = std::env::temp_dir().join(format!("sandbench-validate-{}", std::process::id()));
    std::fs::create_dir_all(&p)?;
    Ok(p)
}

fn build_plan(suite_args: &SuiteArgs, a: &PlanArgs) -> Result<RunPlan> {
    let suite = load_suite(suite_args)?;
    let mut models = Vec::new();
    for m in &a.mocks {
        let policy = MockPolicy::parse(m).with_context(|| format!("unknown mock policy `{m}`"))?;
        models.push(ModelEntry::mock(policy));
    }
    match (&a.endpoint, a.models.is_empty()) {
        (Some(endpoint), false) => {
            if std::env::var(API_KEY_ENV).is_err() {
                log::warn!("{API_KEY_ENV} is not set; sending requests without credentials");
            }
            for name in &a.models {
                let mut cfg = HttpModelConfig::new(endpoint.clone(), name.clone());
                cfg.timeout_secs = a.request_timeout;
                cfg.temperature = a.temperature;
                models.push(ModelEntry::http(cfg));
            }
        }
        (Some(_), true) => bail!("--endpoint needs at least one --model"),
        (None, false) => bail!("--model needs --endpoint"),
        (None, true) => {}
    }
    if models.is_empty() {
        bail!("nothing to run: pass --mock or --endpoint with --model");
    }
    let mut plan = RunPlan::new(suite, models, &a.out);
    plan.pools = Arc::new(load_pools(suite_args)?);
    plan.runs = a.runs;
    plan.samples_override = a.samples_override;
    plan.questions = a.questions.clone();
    plan.master_seed = a.seed;
    if let Some(p) = a.parallel {
        plan.parallelism = p;
    }
    if let Some(p) = &a.tool_profile {
        plan.tool_profile = Arc::new(ToolProfile::load(p)?);
    }
    plan.reseed_per_run = a.reseed_per_run;
    plan.keep_sandboxes = a.keep_sandboxes;
    plan.limits = Limits {
        max_steps: a.max_steps,
        retry: RetryPolicy {
            attempts: a.retries.max(1),
            base_delay: Duration::from_millis(a.retry_delay_ms),
            ..RetryPolicy::default()
        },
    };
    plan.score = ScoreOptions { strict_json: a.strict_json };
    if let Some(spec) = &a.inject_fault {
        let mut parts = spec.rsplitn(3, ':');
        let (calls, run, model) = (parts.next(), parts.next(), parts.next());
        let (Some(calls), Some(run), Some(model)) = (calls, run, model) else {
            bail!("--inject-fault wants MODEL:RUN:CALLS");
        };
        plan.fault = Some(FaultInjection { model: model.to_string(), run_id: run.parse()?, after_calls: calls.parse()? });
    }
    Ok(plan)
}

fn report_to(out: &Path) -> Result<()> {
    let store = Store::new(out);
    let report = build_report(&store, &[])?;
    let paths = write_report(&store, &report)?;
    print!("{}", sandbench::orchestrator::report::render_text(&report));
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let plan = build_plan(&args.suite, &args.plan)?;
    let summary = execute(&plan)?;
    eprintln!(
        "recorded {} new, {} already present, {} voided, {} abandoned",
        summary.executed, summary.skipped, summary.voided, summary.abandoned
    );
    report_to(&plan.out)?;
    if summary.crashed_runs.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (m, r) in &summary.crashed_runs {
            eprintln!("run {r} of {m} stopped after a tool runtime crash; rerun to resume");
        }
        Ok(ExitCode::from(3))
    }
}

fn screen(args: ScreenArgs) -> Result<()> {
    let plan = build_plan(&args.suite, &args.plan)?;
    let (outcome, _, _) = two_stage_screen(&plan, args.deep_runs, args.keep_top)?;
    println!("stage A ranking:");
    for (m, acc) in &outcome.stage_a {
        let kept = if outcome.survivors.contains(m) { "kept" } else { "dropped" };
        println!("  {m:<30} {}  {kept}", sandbench::stats::percent(*acc));
    }
    println!();
    let store = Store::new(&plan.out);
    write_report(&store, &outcome.report)?;
    print!("{}", sandbench::orchestrator::report::render_text(&outcome.report));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => validate(a).map(|_| ExitCode::SUCCESS),
        Command::Run(a) => run(a),
        Command::Report(a) => report_to(&a.out).map(|_| ExitCode::SUCCESS),
        Command::Screen(a) => screen(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
