//! The `glance-zoom` command line.
//!
//! Settings resolve as: command-line flag, then the `--config` JSON file, then
//! built-in defaults. Every command that writes output also writes the
//! effective config next to it.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{self, CurationConfig, CurationRecord, MixRatio, Origin};
use crate::episode::{run_batch, EpisodeConfig, EpisodeError, OnMalformed, TerminalReason, Trajectory};
use crate::grpo::{check_group, dynamic_sample_filter, objective, ObjectiveConfig, RolloutGroup};
use crate::jsonl;
use crate::policy::{NoTool, Policy, PolicySpec, RemoteConfig};
use crate::reward::{score, RewardWeights};
use crate::videoworld::{generate_corpus, BudgetConfig, GenParams, KindMix, Task, TaskKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

// ---------------------------------------------------------------------------
// Effective configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub gen: GenParams,
    pub episode: EpisodeConfig,
    pub weights: RewardWeights,
    pub objective: ObjectiveConfig,
    pub policy: Option<PolicySpec>,
    /// Endpoint settings used when the policy is `remote`.
    pub remote: RemoteConfig,
    pub sweep_budgets: Vec<u64>,
    pub sweep_policies: Vec<String>,
    pub reflection_retries: u32,
    pub mix: Option<MixRatio>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            gen: GenParams::default(),
            episode: EpisodeConfig::default(),
            weights: RewardWeights::default(),
            objective: ObjectiveConfig::default(),
            policy: None,
            remote: RemoteConfig::default(),
            sweep_budgets: vec![16, 32, 64, 128, 256],
            sweep_policies: vec!["progressive".into(), "direct_hit".into()],
            reflection_retries: 1,
            mix: Some(MixRatio::default()),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn curation(&self) -> CurationConfig {
        CurationConfig {
            episode: self.episode,
            weights: self.weights,
            reflection_retries: self.reflection_retries,
            mix: self.mix,
            jobs: self.jobs,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if !self.episode.budget.is_valid() || self.episode.max_turns == 0 {
            return Err(CliError::Usage("budget values and max_turns must be positive".into()));
        }
        self.weights.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !self.objective.is_valid() {
            return Err(CliError::Usage("objective coefficients must be non-negative".into()));
        }
        Ok(())
    }

    fn build_policy(&self, name: Option<&str>) -> Result<Box<dyn Policy>, CliError> {
        let spec = match name {
            Some(n) => PolicySpec::from_name(n).ok_or_else(|| CliError::Usage(format!("unknown policy '{n}'")))?,
            None => self.policy.clone().ok_or_else(|| CliError::Usage("no policy given".into()))?,
        };
        let spec = match spec {
            PolicySpec::Remote(_) => PolicySpec::Remote(self.remote.clone()),
            other => other,
        };
        Ok(spec.build())
    }
}

// ---------------------------------------------------------------------------
// Arguments

#[derive(Debug, Parser)]
#[command(name = "glance-zoom", version, about = "Glance-then-zoom long-video agent toolkit")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic task corpus.
    Gen(GenArgs),
    /// Run a policy over a corpus and report metrics.
    Rollout(RolloutArgs),
    /// Accuracy against frames for uniform baselines and agentic policies.
    Sweep(SweepArgs),
    /// Cold-start data pipeline.
    #[command(subcommand)]
    Curate(CurateCommand),
    /// Recompute rewards for a trajectory file.
    Score(ScoreArgs),
    /// Distribution of requested fps over all tool calls.
    FpsReport(FpsReportArgs),
    /// Check GRPO invariants on a rollout-group file.
    GrpoCheck(GrpoCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Needle,
    Count,
    Order,
    Mixed,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Video duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub needle_span: Option<f64>,
    #[arg(long)]
    pub distractors: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MalformedArg {
    ErrorObservation,
    Terminate,
}

#[derive(Debug, Args, Default)]
pub struct EpisodeArgs {
    #[arg(long)]
    pub glance_frames: Option<u64>,
    /// Frames per tool call.
    #[arg(long)]
    pub per_call_budget: Option<u64>,
    #[arg(long)]
    pub max_tool_calls: Option<u64>,
    #[arg(long)]
    pub max_turns: Option<u32>,
    #[arg(long, value_enum)]
    pub on_malformed: Option<MalformedArg>,
}

#[derive(Debug, Args, Default)]
pub struct RemoteArgs {
    /// Chat-completions URL for the remote policy.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct WeightArgs {
    #[arg(long)]
    pub w_acc: Option<f64>,
    #[arg(long)]
    pub w_fmt: Option<f64>,
    #[arg(long)]
    pub w_tool: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// direct_hit, progressive, self_refine, no_tool, always_zoom, random_answer or remote.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub remote: RemoteArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Uniform frame budgets, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<u64>>,
    /// Agentic policies, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    #[command(flatten)]
    pub episode: EpisodeArgs,
}

#[derive(Debug, Subcommand)]
pub enum CurateCommand {
    /// Distill verified exemplar trajectories from an expert.
    Exemplar(ExemplarArgs),
    /// Mine a student's failures and have the expert reflect on them.
    Reflect(ReflectArgs),
    /// Export kept records as an SFT corpus plus statistics.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ExemplarArgs {
    #[arg(long)]
    pub expert: String,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Curation records (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub episode: EpisodeArgs,
}

#[derive(Debug, Args)]
pub struct ReflectArgs {
    #[arg(long)]
    pub expert: String,
    #[arg(long)]
    pub student: String,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub retries: Option<u32>,
    #[command(flatten)]
    pub episode: EpisodeArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Curation record files (JSONL).
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Exemplar:reflection ratio such as `3:1`, or `all`.
    #[arg(long)]
    pub mix: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Scored trajectories (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct FpsReportArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GrpoCheckArgs {
    /// Rollout groups (JSONL).
    #[arg(long)]
    pub groups: PathBuf,
}

fn apply_episode(cfg: &mut RunConfig, a: &EpisodeArgs) {
    let b: &mut BudgetConfig = &mut cfg.episode.budget;
    if let Some(v) = a.glance_frames {
        b.glance_frames = v;
    }
    if let Some(v) = a.per_call_budget {
        b.per_call_budget = v;
    }
    if let Some(v) = a.max_tool_calls {
        b.max_tool_calls = v;
    }
    if let Some(v) = a.max_turns {
        cfg.episode.max_turns = v;
    }
    if let Some(v) = a.on_malformed {
        cfg.episode.on_malformed = match v {
            MalformedArg::ErrorObservation => OnMalformed::ErrorObservation,
            MalformedArg::Terminate => OnMalformed::Terminate,
        };
    }
}

fn apply_remote(cfg: &mut RunConfig, a: &RemoteArgs) {
    if let Some(v) = &a.endpoint {
        cfg.remote.endpoint = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.remote.model = v.clone();
    }
    if let Some(v) = &a.api_key_env {
        cfg.remote.api_key_env = v.clone();
    }
}

fn apply_weights(cfg: &mut RunConfig, a: &WeightArgs) {
    if let Some(v) = a.w_acc {
        cfg.weights.w_acc = v;
    }
    if let Some(v) = a.w_fmt {
        cfg.weights.w_fmt = v;
    }
    if let Some(v) = a.w_tool {
        cfg.weights.w_tool = v;
    }
}

fn parse_mix(s: &str) -> Result<Option<MixRatio>, CliError> {
    if s == "all" || s == "none" {
        return Ok(None);
    }
    let bad = || CliError::Usage(format!("bad mix '{s}', expected E:R such as 3:1"));
    let (e, r) = s.split_once(':').ok_or_else(bad)?;
    Ok(Some(MixRatio {
        exemplar: e.trim().parse().map_err(|_| bad())?,
        reflection: r.trim().parse().map_err(|_| bad())?,
    }))
}

// ---------------------------------------------------------------------------
// Entry point

/// Parse `args` (program name first), run, and return the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut out = String::new();
    let code = match run(&cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    print!("{out}");
    code
}

/// Run a parsed command, appending its report to `out`.
pub fn run(cli: &Cli, out: &mut String) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(cfg, a, out),
        Command::Rollout(a) => {
            apply_episode(&mut cfg, &a.episode);
            apply_remote(&mut cfg, &a.remote);
            apply_weights(&mut cfg, &a.weights);
            cmd_rollout(cfg, a, out)
        }
        Command::Sweep(a) => {
            apply_episode(&mut cfg, &a.episode);
            cmd_sweep(cfg, a, out)
        }
        Command::Curate(CurateCommand::Exemplar(a)) => {
            apply_episode(&mut cfg, &a.episode);
            cmd_curate_exemplar(cfg, a, out)
        }
        Command::Curate(CurateCommand::Reflect(a)) => {
            apply_episode(&mut cfg, &a.episode);
            if let Some(r) = a.retries {
                cfg.reflection_retries = r;
            }
            cmd_curate_reflect(cfg, a, out)
        }
        Command::Curate(CurateCommand::Export(a)) => {
            if let Some(m) = &a.mix {
                cfg.mix = parse_mix(m)?;
            }
            cmd_curate_export(cfg, a, out)
        }
        Command::Score(a) => {
            apply_weights(&mut cfg, &a.weights);
            cmd_score(cfg, a, out)
        }
        Command::FpsReport(a) => cmd_fps_report(a, out),
        Command::GrpoCheck(a) => cmd_grpo_check(cfg, a, out),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| domain(format!("{}: {e}", dir.display())))
}

fn load_corpus(path: &Path) -> Result<Vec<Task>, CliError> {
    jsonl::read(path).map_err(domain)
}

// ---------------------------------------------------------------------------
// gen

fn cmd_gen(mut cfg: RunConfig, a: &GenArgs, out: &mut String) -> Result<(), CliError> {
    if let Some(k) = a.kind {
        cfg.gen.kind_mix = match k {
            KindArg::Needle => KindMix::only(TaskKind::Needle),
            KindArg::Count => KindMix::only(TaskKind::Count),
            KindArg::Order => KindMix::only(TaskKind::Order),
            KindArg::Mixed => KindMix {
                needle: 1.0,
                count: 1.0,
                order: 1.0,
            },
        };
    }
    if let Some(d) = a.duration {
        cfg.gen.duration = d;
    }
    if let Some(s) = a.needle_span {
        cfg.gen.needle_span = s;
    }
    if let Some(n) = a.distractors {
        cfg.gen.n_distractors = n;
    }
    let tasks = generate_corpus(&cfg.gen, a.count, cfg.seed).map_err(domain)?;
    jsonl::write(&a.out, &tasks).map_err(domain)?;
    write_json(&sidecar(&a.out, ".config.json"), &cfg)?;
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for t in &tasks {
        *kinds.entry(t.question.kind.to_string()).or_default() += 1;
    }
    let _ = writeln!(out, "wrote {} tasks to {}", tasks.len(), a.out.display());
    for (k, n) in kinds {
        let _ = writeln!(out, "  {k}: {n}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rollout

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub policy: String,
    pub episodes: usize,
    pub policy_failures: usize,
    pub accuracy: f64,
    pub mean_total_frames: f64,
    pub mean_tool_calls: f64,
    pub mean_reward: f64,
    pub terminal: BTreeMap<String, usize>,
}

impl RolloutMetrics {
    pub fn csv_header() -> &'static str {
        "policy,episodes,policy_failures,accuracy,mean_total_frames,mean_tool_calls,mean_reward,answered,max_turns,malformed_limit"
    }

    pub fn csv_row(&self) -> String {
        let t = |k: &str| self.terminal.get(k).copied().unwrap_or(0);
        format!(
            "{},{},{},{:.4},{:.2},{:.2},{:.4},{},{},{}",
            self.policy,
            self.episodes,
            self.policy_failures,
            self.accuracy,
            self.mean_total_frames,
            self.mean_tool_calls,
            self.mean_reward,
            t("ANSWERED"),
            t("MAX_TURNS"),
            t("MALFORMED_LIMIT")
        )
    }
}

fn terminal_name(t: TerminalReason) -> &'static str {
    match t {
        TerminalReason::Answered => "ANSWERED",
        TerminalReason::MaxTurns => "MAX_TURNS",
        TerminalReason::MalformedLimit => "MALFORMED_LIMIT",
    }
}

/// Metrics over scored trajectories.
pub fn rollout_metrics(policy: &str, trajs: &[Trajectory], failures: usize) -> RolloutMetrics {
    let n = trajs.len().max(1) as f64;
    let mut terminal = BTreeMap::new();
    for t in trajs {
        *terminal.entry(terminal_name(t.terminal_reason).to_string()).or_default() += 1;
    }
    let reward = |t: &Trajectory| t.reward.map(|r| (f64::from(r.r_acc), r.total)).unwrap_or((0.0, 0.0));
    RolloutMetrics {
        policy: policy.to_string(),
        episodes: trajs.len(),
        policy_failures: failures,
        accuracy: trajs.iter().map(|t| reward(t).0).sum::<f64>() / n,
        mean_total_frames: trajs.iter().map(|t| t.total_frames as f64).sum::<f64>() / n,
        mean_tool_calls: trajs.iter().map(|t| t.tool_calls_made as f64).sum::<f64>() / n,
        mean_reward: trajs.iter().map(|t| reward(t).1).sum::<f64>() / n,
        terminal,
    }
}

#[derive(Debug, Serialize)]
struct FailureLine {
    task_id: String,
    error: String,
    partial: Trajectory,
}

/// Run and score a batch. Policy failures come back separately.
fn scored_batch(policy: &dyn Policy, tasks: &[Task], episode: &EpisodeConfig, weights: &RewardWeights, jobs: usize) -> (Vec<Trajectory>, Vec<FailureLine>) {
    let mut trajs = Vec::new();
    let mut failures = Vec::new();
    for result in run_batch(policy, tasks, episode, jobs) {
        match result {
            Ok(mut t) => {
                score(&mut t, weights);
                trajs.push(t);
            }
            Err(EpisodeError::PolicyFailure { task_id, partial, source }) => failures.push(FailureLine {
                task_id,
                error: source.to_string(),
                partial: *partial,
            }),
        }
    }
    (trajs, failures)
}

fn cmd_rollout(cfg: RunConfig, a: &RolloutArgs, out: &mut String) -> Result<(), CliError> {
    cfg.validate()?;
    let policy = cfg.build_policy(a.policy.as_deref())?;
    let tasks = load_corpus(&a.corpus)?;
    make_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("config.json"), &cfg)?;

    let (trajs, failures) = scored_batch(policy.as_ref(), &tasks, &cfg.episode, &cfg.weights, cfg.jobs);
    jsonl::write(a.out_dir.join("trajectories.jsonl"), &trajs).map_err(domain)?;
    if !failures.is_empty() {
        jsonl::write(a.out_dir.join("failures.jsonl"), &failures).map_err(domain)?;
    }
    let metrics = rollout_metrics(policy.name(), &trajs, failures.len());
    write_json(&a.out_dir.join("metrics.json"), &metrics)?;
    write_text(
        &a.out_dir.join("metrics.csv"),
        &format!("{}\n{}\n", RolloutMetrics::csv_header(), metrics.csv_row()),
    )?;
    let _ = writeln!(
        out,
        "{}: {} episodes, accuracy {:.4}, mean frames {:.2}, mean tool calls {:.2}",
        metrics.policy, metrics.episodes, metrics.accuracy, metrics.mean_total_frames, metrics.mean_tool_calls
    );
    for (k, n) in &metrics.terminal {
        let _ = writeln!(out, "  {k}: {n}");
    }
    if !failures.is_empty() {
        return Err(CliError::Domain(format!(
            "POLICY_FAILURE on {} tasks, see {}",
            failures.len(),
            a.out_dir.join("failures.jsonl").display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    /// Uniform frame count; `None` for adaptive policies.
    pub budget: Option<u64>,
    pub mean_frames: f64,
    pub accuracy: f64,
    pub episodes: usize,
}

/// Uniform rows at each budget (glance only, no tool), then one row per
/// agentic policy at its own consumption.
pub fn sweep(tasks: &[Task], budgets: &[u64], policies: &[Box<dyn Policy>], episode: &EpisodeConfig, jobs: usize) -> Vec<SweepRow> {
    let weights = RewardWeights::default();
    let mut rows = Vec::new();
    for &b in budgets {
        let mut e = *episode;
        e.budget.glance_frames = b;
        let (trajs, _) = scored_batch(&NoTool, tasks, &e, &weights, jobs);
        let m = rollout_metrics("uniform", &trajs, 0);
        rows.push(SweepRow {
            policy: "uniform".into(),
            budget: Some(b),
            mean_frames: m.mean_total_frames,
            accuracy: m.accuracy,
            episodes: m.episodes,
        });
    }
    for p in policies {
        let (trajs, failures) = scored_batch(p.as_ref(), tasks, episode, &weights, jobs);
        let m = rollout_metrics(p.name(), &trajs, failures.len());
        rows.push(SweepRow {
            policy: m.policy,
            budget: None,
            mean_frames: m.mean_total_frames,
            accuracy: m.accuracy,
            episodes: m.episodes,
        });
    }
    rows
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("policy,budget,mean_frames,accuracy,episodes\n");
    for r in rows {
        let budget = r.budget.map(|b| b.to_string()).unwrap_or_else(|| "adaptive".into());
        let _ = writeln!(s, "{},{},{:.2},{:.4},{}", r.policy, budget, r.mean_frames, r.accuracy, r.episodes);
    }
    s
}

fn cmd_sweep(mut cfg: RunConfig, a: &SweepArgs, out: &mut String) -> Result<(), CliError> {
    if let Some(b) = &a.budgets {
        cfg.sweep_budgets = b.clone();
    }
    if let Some(p) = &a.policies {
        cfg.sweep_policies = p.clone();
    }
    cfg.validate()?;
    if cfg.sweep_budgets.contains(&0) {
        return Err(CliError::Usage("sweep budgets must be positive".into()));
    }
    let policies = cfg
        .sweep_policies
        .iter()
        .map(|n| cfg.build_policy(Some(n)))
        .collect::<Result<Vec<_>, _>>()?;
    let tasks = load_corpus(&a.corpus)?;
    make_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("config.json"), &cfg)?;
    let rows = sweep(&tasks, &cfg.sweep_budgets, &policies, &cfg.episode, cfg.jobs);
    let csv = sweep_csv(&rows);
    write_text(&a.out_dir.join("sweep.csv"), &csv)?;
    write_json(&a.out_dir.join("sweep.json"), &rows)?;
    out.push_str(&csv);
    Ok(())
}

// ---------------------------------------------------------------------------
// curate

fn verdict_summary(records: &[CurationRecord], out: &mut String) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let key = serde_json::to_value(&r.verdict)
            .ok()
            .map(|v| match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            })
            .unwrap_or_default();
        *counts.entry(key).or_default() += 1;
    }
    for (k, n) in counts {
        let _ = writeln!(out, "  {k}: {n}");
    }
}

fn cmd_curate_exemplar(cfg: RunConfig, a: &ExemplarArgs, out: &mut String) -> Result<(), CliError> {
    cfg.validate()?;
    let expert = cfg.build_policy(Some(&a.expert))?;
    let tasks = load_corpus(&a.corpus)?;
    let records = curation::distill_exemplars(expert.as_ref(), &tasks, &cfg.curation());
    jsonl::write(&a.out, &records).map_err(domain)?;
    write_json(&sidecar(&a.out, ".config.json"), &cfg)?;
    let kept = records.iter().filter(|r| r.is_kept()).count();
    let _ = writeln!(out, "{} exemplar records, {kept} kept", records.len());
    verdict_summary(&records, out);
    Ok(())
}

fn cmd_curate_reflect(cfg: RunConfig, a: &ReflectArgs, out: &mut String) -> Result<(), CliError> {
    cfg.validate()?;
    let expert = cfg.build_policy(Some(&a.expert))?;
    let student = cfg.build_policy(Some(&a.student))?;
    let tasks = load_corpus(&a.corpus)?;
    let ccfg = cfg.curation();
    let failures = curation::mine_failures(student.as_ref(), &tasks, &ccfg);
    let records = curation::reflect_all(expert.as_ref(), &failures, &ccfg);
    jsonl::write(&a.out, &records).map_err(domain)?;
    write_json(&sidecar(&a.out, ".config.json"), &cfg)?;
    let kept = records.iter().filter(|r| r.is_kept()).count();
    let _ = writeln!(out, "{} student failures, {} reflection records, {kept} kept", failures.len(), records.len());
    verdict_summary(&records, out);
    Ok(())
}

fn cmd_curate_export(cfg: RunConfig, a: &ExportArgs, out: &mut String) -> Result<(), CliError> {
    let mut records: Vec<CurationRecord> = Vec::new();
    for p in &a.records {
        records.extend(jsonl::read::<CurationRecord>(p).map_err(domain)?);
    }
    let selected = match cfg.mix {
        Some(mix) => curation::apply_mix(&records, mix),
        None => records,
    };
    let stats = curation::export_sft(&selected, &a.out, cfg.episode.budget.per_call_budget).map_err(domain)?;
    write_json(&sidecar(&a.out, ".config.json"), &cfg)?;
    let _ = writeln!(
        out,
        "exported {} samples ({} exemplar, {} reflection) to {}",
        stats.records,
        stats.exemplar,
        stats.reflection,
        a.out.display()
    );
    for (origin, calls) in &stats.mean_tool_calls {
        let _ = writeln!(out, "  mean tool calls ({origin}): {calls:.2}");
    }
    Ok(())
}

/// Mean tool calls of kept records per origin.
pub fn mean_calls(records: &[CurationRecord], origin: Origin) -> f64 {
    let kept: Vec<&CurationRecord> = records.iter().filter(|r| r.is_kept() && r.origin == origin).collect();
    kept.iter().map(|r| r.trajectory.tool_calls_made as f64).sum::<f64>() / kept.len().max(1) as f64
}

// ---------------------------------------------------------------------------
// score

fn cmd_score(cfg: RunConfig, a: &ScoreArgs, out: &mut String) -> Result<(), CliError> {
    cfg.validate()?;
    let mut trajs: Vec<Trajectory> = jsonl::read(&a.trajectories).map_err(domain)?;
    for t in &mut trajs {
        score(t, &cfg.weights);
    }
    jsonl::write(&a.out, &trajs).map_err(domain)?;
    write_json(&sidecar(&a.out, ".config.json"), &cfg)?;
    let m = rollout_metrics("scored", &trajs, 0);
    let _ = writeln!(out, "{} trajectories, accuracy {:.4}, mean reward {:.4}", m.episodes, m.accuracy, m.mean_reward);
    Ok(())
}

// ---------------------------------------------------------------------------
// fps-report

/// Upper edges of the fps bins; the last bin is open.
pub const FPS_BIN_EDGES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const FPS_BIN_LABELS: [&str; 5] = ["(0, 1]", "(1, 2]", "(2, 4]", "(4, 8]", "(8, inf)"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsBin {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

pub fn fps_bin(fps: f64) -> usize {
    FPS_BIN_EDGES.iter().position(|edge| fps <= *edge).unwrap_or(FPS_BIN_EDGES.len())
}

/// Bin every tool call's fps. Returns no rows when there are no calls.
pub fn fps_report(trajs: &[Trajectory]) -> Vec<FpsBin> {
    let mut counts = [0usize; 5];
    for c in trajs.iter().flat_map(|t| &t.calls) {
        counts[fps_bin(c.call.fps)] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    counts
        .iter()
        .zip(FPS_BIN_LABELS)
        .map(|(n, label)| FpsBin {
            label: label.into(),
            count: *n,
            percent: 100.0 * *n as f64 / total as f64,
        })
        .collect()
}

pub fn fps_csv(bins: &[FpsBin]) -> String {
    let mut s = String::from("fps_bin,count,percent\n");
    for b in bins {
        let _ = writeln!(s, "\"{}\",{},{:.2}", b.label, b.count, b.percent);
    }
    s
}

fn cmd_fps_report(a: &FpsReportArgs, out: &mut String) -> Result<(), CliError> {
    let trajs: Vec<Trajectory> = jsonl::read(&a.trajectories).map_err(domain)?;
    let csv = fps_csv(&fps_report(&trajs));
    if let Some(p) = &a.out {
        write_text(p, &csv)?;
    }
    out.push_str(&csv);
    Ok(())
}

// ---------------------------------------------------------------------------
// grpo-check

fn cmd_grpo_check(cfg: RunConfig, a: &GrpoCheckArgs, out: &mut String) -> Result<(), CliError> {
    if !cfg.objective.is_valid() {
        return Err(CliError::Usage("objective coefficients must be non-negative".into()));
    }
    let mut groups: Vec<RolloutGroup> = jsonl::read(&a.groups).map_err(domain)?;
    let mut failed = 0;
    for g in &groups {
        let check = check_group(g, &cfg.objective);
        if !check.passed() {
            failed += 1;
            let _ = writeln!(out, "FAIL {}", check.prompt_id);
            for v in &check.violations {
                let _ = writeln!(out, "  {v}");
            }
        } else if check.degenerate {
            let _ = writeln!(out, "DEGENERATE {}", check.prompt_id);
        } else {
            let _ = writeln!(out, "PASS {}", check.prompt_id);
        }
    }
    if failed > 0 {
        return Err(CliError::Domain(format!("{failed} of {} groups violate invariants", groups.len())));
    }
    for g in &mut groups {
        g.compute_advantages(cfg.objective.std_convention).map_err(domain)?;
    }
    let (kept, report) = dynamic_sample_filter(groups);
    let _ = writeln!(out, "groups kept {}, dropped {}", report.kept, report.dropped);
    match objective(&kept, &cfg.objective) {
        Ok(r) => {
            let _ = writeln!(
                out,
                "policy_loss {:.6} kl {:.6} entropy {:.6} total {:.6} tokens {}",
                r.policy_loss, r.kl, r.entropy_proxy, r.total, r.tokens_trained
            );
        }
        Err(e) => {
            let _ = writeln!(out, "{e}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{CallRecord, Trajectory};
    use crate::protocol::ToolCall;

    #[test]
    fn fps_bins_are_right_closed() {
        assert_eq!(fps_bin(0.5), 0);
        assert_eq!(fps_bin(1.0), 0);
        assert_eq!(fps_bin(1.0 + 1e-9), 1);
        assert_eq!(fps_bin(2.0), 1);
        assert_eq!(fps_bin(4.0), 2);
        assert_eq!(fps_bin(8.0), 3);
        assert_eq!(fps_bin(8.5), 4);
        assert_eq!(fps_bin(30.0), 4);
    }

    fn with_calls(fps: &[f64]) -> Trajectory {
        let tasks = generate_corpus(&GenParams::default(), 1, 0).unwrap();
        let mut t = crate::episode::run_episode(&NoTool, &tasks[0], &EpisodeConfig::default()).unwrap();
        t.calls = fps
            .iter()
            .map(|f| CallRecord {
                call: ToolCall::new(0.0, 1.0, *f),
                frames_delivered: 1,
                error: None,
            })
            .collect();
        t
    }

    #[test]
    fn fps_report_recounts() {
        let trajs = vec![with_calls(&[0.5, 1.0, 2.0]), with_calls(&[3.0, 16.0]), with_calls(&[])];
        let bins = fps_report(&trajs);
        let counts: Vec<usize> = bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 1, 1, 0, 1]);
        let total: f64 = bins.iter().map(|b| b.percent).sum();
        assert!((total - 100.0).abs() < 1e-9);
        assert!(fps_report(&[with_calls(&[])]).is_empty());
    }

    #[test]
    fn mix_parsing() {
        assert_eq!(parse_mix("3:1").unwrap(), Some(MixRatio::default()));
        assert_eq!(parse_mix("all").unwrap(), None);
        assert!(parse_mix("x").is_err());
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 7, "episode": {"max_turns": 3}}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.episode.max_turns, 3);
        assert_eq!(partial.episode.budget, BudgetConfig::default());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_from(["glance-zoom", "nonsense"]), 2);
        assert_eq!(run_from(["glance-zoom", "gen"]), 2);
    }
}
