//! Cold-start data: verified expert exemplars, reflections on a student's
//! failures, and SFT export.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::episode::{run_episode, run_episode_with, EpisodeConfig, EpisodeError, EpisodeMode, Trajectory};
use crate::jsonl::{self, JsonlError};
use crate::policy::{FailedAttempt, Policy, Role};
use crate::prompts::reasoning_prompt;
use crate::reward::{total_reward, RewardWeights};
use crate::videoworld::{dense_oracle, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Exemplar,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DropReason {
    /// Answer disagrees with the dense oracle.
    Wrong,
    Format,
    ReflectionFailed,
    /// The generator's gold label disagrees with the dense oracle.
    OracleMismatch,
    PolicyFailure(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Kept,
    Dropped(DropReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub trajectory: Trajectory,
    pub origin: Origin,
    pub verdict: Verdict,
    pub expert_id: String,
}

impl CurationRecord {
    pub fn is_kept(&self) -> bool {
        self.verdict == Verdict::Kept
    }
}

/// Check a trajectory against the dense oracle and the format rules. Stores
/// the reward breakdown on the trajectory.
pub fn verify(traj: &mut Trajectory, task: &Task, weights: &RewardWeights) -> Verdict {
    let oracle = dense_oracle(&task.video, &task.question);
    if oracle != task.question.gold {
        return Verdict::Dropped(DropReason::OracleMismatch);
    }
    let r = total_reward(traj, &oracle, weights);
    traj.reward = Some(r);
    if r.r_acc == 0 {
        Verdict::Dropped(DropReason::Wrong)
    } else if r.r_fmt == 0 {
        Verdict::Dropped(DropReason::Format)
    } else {
        Verdict::Kept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub episode: EpisodeConfig,
    pub weights: RewardWeights,
    /// Extra reflection attempts after the first one fails.
    pub reflection_retries: u32,
    /// Exemplar:reflection proportions of the exported corpus; `None` keeps
    /// every record.
    pub mix: Option<MixRatio>,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            weights: RewardWeights::default(),
            reflection_retries: 1,
            mix: Some(MixRatio::default()),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRatio {
    pub exemplar: usize,
    pub reflection: usize,
}

impl Default for MixRatio {
    fn default() -> Self {
        Self {
            exemplar: 3,
            reflection: 1,
        }
    }
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn failure_record(err: EpisodeError, origin: Origin, expert_id: &str) -> CurationRecord {
    let EpisodeError::PolicyFailure { partial, source, .. } = err;
    CurationRecord {
        trajectory: *partial,
        origin,
        verdict: Verdict::Dropped(DropReason::PolicyFailure(source.to_string())),
        expert_id: expert_id.to_string(),
    }
}

fn sort_records(records: &mut [CurationRecord]) {
    records.sort_by(|a, b| (&a.trajectory.task_id, a.origin).cmp(&(&b.trajectory.task_id, b.origin)));
}

/// Run the expert on every task and verify each trajectory. Records come back
/// sorted by task id.
pub fn distill_exemplars<P: Policy + ?Sized>(expert: &P, tasks: &[Task], cfg: &CurationConfig) -> Vec<CurationRecord> {
    let expert_id = expert.name().to_string();
    let mut records: Vec<CurationRecord> = in_pool(cfg.jobs, || {
        tasks
            .par_iter()
            .map(|task| match run_episode(expert, task, &cfg.episode) {
                Ok(mut traj) => {
                    let verdict = verify(&mut traj, task, &cfg.weights);
                    CurationRecord {
                        trajectory: traj,
                        origin: Origin::Exemplar,
                        verdict,
                        expert_id: expert_id.clone(),
                    }
                }
                Err(e) => failure_record(e, Origin::Exemplar, &expert_id),
            })
            .collect()
    });
    sort_records(&mut records);
    records
}

/// Tasks the student answers wrongly, with its trajectories, sorted by task
/// id. Policy failures are logged and skipped.
pub fn mine_failures<P: Policy + ?Sized>(student: &P, tasks: &[Task], cfg: &CurationConfig) -> Vec<(Task, Trajectory)> {
    let mut failures: Vec<(Task, Trajectory)> = in_pool(cfg.jobs, || {
        tasks
            .par_iter()
            .filter_map(|task| match run_episode(student, task, &cfg.episode) {
                Ok(mut traj) => {
                    let r = total_reward(&traj, &task.question.gold, &cfg.weights);
                    traj.reward = Some(r);
                    (r.r_acc == 0).then(|| (task.clone(), traj))
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", task.task_id);
                    None
                }
            })
            .collect()
    });
    failures.sort_by(|a, b| a.0.task_id.cmp(&b.0.task_id));
    failures
}

/// What the expert is shown of a failed trajectory.
pub fn failed_attempt(failed: &Trajectory) -> FailedAttempt {
    FailedAttempt {
        calls: failed.calls.iter().map(|c| c.call).collect(),
        answer: failed.final_answer.clone(),
    }
}

/// Ask the expert to correct a failed attempt. The stored trajectory holds
/// only the corrected interaction.
pub fn reflect<P: Policy + ?Sized>(expert: &P, task: &Task, failed: &Trajectory, cfg: &CurationConfig) -> CurationRecord {
    let expert_id = expert.name().to_string();
    let mode = EpisodeMode::Reflection(failed_attempt(failed));
    let mut last = None;
    for _ in 0..=cfg.reflection_retries {
        let mut traj = match run_episode_with(expert, task, &cfg.episode, &mode) {
            Ok(t) => t,
            Err(e) => return failure_record(e, Origin::Reflection, &expert_id),
        };
        let verdict = verify(&mut traj, task, &cfg.weights);
        let done = verdict == Verdict::Kept;
        last = Some((traj, verdict));
        if done {
            break;
        }
    }
    let (trajectory, verdict) = last.expect("at least one attempt");
    let verdict = match verdict {
        Verdict::Dropped(DropReason::Wrong) => Verdict::Dropped(DropReason::ReflectionFailed),
        v => v,
    };
    CurationRecord {
        trajectory,
        origin: Origin::Reflection,
        verdict,
        expert_id,
    }
}

pub fn reflect_all<P: Policy + ?Sized>(expert: &P, failures: &[(Task, Trajectory)], cfg: &CurationConfig) -> Vec<CurationRecord> {
    let mut records: Vec<CurationRecord> = in_pool(cfg.jobs, || {
        failures.par_iter().map(|(task, failed)| reflect(expert, task, failed, cfg)).collect()
    });
    sort_records(&mut records);
    records
}

/// Keep the largest prefix of each origin (in task-id order) that matches the
/// ratio. A zero side of the ratio drops that origin entirely.
pub fn apply_mix(records: &[CurationRecord], mix: MixRatio) -> Vec<CurationRecord> {
    let kept = |o: Origin| records.iter().filter(move |r| r.is_kept() && r.origin == o);
    let (e, r) = (kept(Origin::Exemplar).count(), kept(Origin::Reflection).count());
    let units = match (mix.exemplar, mix.reflection) {
        (0, 0) => 0,
        (0, rr) => r / rr,
        (ee, 0) => e / ee,
        (ee, rr) => (e / ee).min(r / rr),
    };
    let mut out: Vec<CurationRecord> = kept(Origin::Exemplar)
        .take(units * mix.exemplar)
        .chain(kept(Origin::Reflection).take(units * mix.reflection))
        .cloned()
        .collect();
    sort_records(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub exemplars: Vec<CurationRecord>,
    pub reflections: Vec<CurationRecord>,
    /// Kept records after the mix ratio, ready for export.
    pub selected: Vec<CurationRecord>,
}

/// Exemplars from the expert, failures of the student, reflections by the
/// expert, then the mix.
pub fn run_pipeline<E: Policy + ?Sized, S: Policy + ?Sized>(
    expert: &E,
    student: &S,
    tasks: &[Task],
    cfg: &CurationConfig,
) -> PipelineOutput {
    let exemplars = distill_exemplars(expert, tasks, cfg);
    let failures = mine_failures(student, tasks, cfg);
    let reflections = reflect_all(expert, &failures, cfg);
    let all: Vec<CurationRecord> = exemplars.iter().chain(&reflections).cloned().collect();
    let selected = match cfg.mix {
        Some(mix) => apply_mix(&all, mix),
        None => {
            let mut kept: Vec<CurationRecord> = all.into_iter().filter(CurationRecord::is_kept).collect();
            sort_records(&mut kept);
            kept
        }
    };
    PipelineOutput {
        exemplars,
        reflections,
        selected,
    }
}

// ---------------------------------------------------------------------------
// Export

/// Width of the character-length histogram bins.
pub const LENGTH_BIN_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub exemplar: usize,
    pub reflection: usize,
    /// Fraction of records per origin.
    pub origin_mix: BTreeMap<String, f64>,
    /// Trainable characters per sample, keyed by bin start.
    pub length_histogram: BTreeMap<usize, usize>,
    /// Samples per number of tool calls.
    pub round_histogram: BTreeMap<u64, usize>,
    pub mean_tool_calls: BTreeMap<String, f64>,
}

fn origin_name(o: Origin) -> &'static str {
    match o {
        Origin::Exemplar => "exemplar",
        Origin::Reflection => "reflection",
    }
}

pub fn corpus_stats(records: &[CurationRecord]) -> CorpusStats {
    let mut stats = CorpusStats {
        records: records.len(),
        ..CorpusStats::default()
    };
    let mut calls: BTreeMap<String, (u64, usize)> = BTreeMap::new();
    for r in records {
        match r.origin {
            Origin::Exemplar => stats.exemplar += 1,
            Origin::Reflection => stats.reflection += 1,
        }
        let chars = r.trajectory.trainable_text().chars().count();
        *stats.length_histogram.entry(chars / LENGTH_BIN_CHARS * LENGTH_BIN_CHARS).or_default() += 1;
        *stats.round_histogram.entry(r.trajectory.tool_calls_made).or_default() += 1;
        let c = calls.entry(origin_name(r.origin).to_string()).or_default();
        c.0 += r.trajectory.tool_calls_made;
        c.1 += 1;
    }
    if !records.is_empty() {
        let n = records.len() as f64;
        stats.origin_mix.insert("exemplar".into(), stats.exemplar as f64 / n);
        stats.origin_mix.insert("reflection".into(), stats.reflection as f64 / n);
    }
    stats.mean_tool_calls = calls.into_iter().map(|(k, (sum, n))| (k, sum as f64 / n as f64)).collect();
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub id: String,
    pub origin: Origin,
    pub expert_id: String,
    pub messages: Vec<SftMessage>,
}

pub fn to_sft_sample(record: &CurationRecord, per_call_budget: u64) -> SftSample {
    let mut messages = vec![SftMessage {
        role: "system".into(),
        content: reasoning_prompt(per_call_budget),
        trainable: false,
    }];
    messages.extend(record.trajectory.turns.iter().map(|t| SftMessage {
        role: match t.role {
            Role::Policy => "assistant",
            Role::Observation => "user",
        }
        .into(),
        content: t.text.clone(),
        trainable: t.trainable,
    }));
    SftSample {
        id: format!("{}-{}", record.trajectory.task_id, origin_name(record.origin)),
        origin: record.origin,
        expert_id: record.expert_id.clone(),
        messages,
    }
}

/// Serialize kept records as SFT conversations, sorted by task id then
/// origin. Dropped records are skipped.
pub fn export_string(records: &[CurationRecord], per_call_budget: u64) -> (String, CorpusStats) {
    let mut kept: Vec<CurationRecord> = records.iter().filter(|r| r.is_kept()).cloned().collect();
    sort_records(&mut kept);
    let samples: Vec<SftSample> = kept.iter().map(|r| to_sft_sample(r, per_call_budget)).collect();
    (jsonl::to_string(&samples), corpus_stats(&kept))
}

/// Write the SFT corpus to `path` and its stats next to it as `<path>.stats.json`.
pub fn export_sft(records: &[CurationRecord], path: &Path, per_call_budget: u64) -> Result<CorpusStats, JsonlError> {
    let (body, stats) = export_string(records, per_call_budget);
    let io = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::write(path, body).map_err(io)?;
    let stats_path = stats_path(path);
    let stats_json = serde_json::to_string_pretty(&json!(stats)).expect("serializable stats");
    std::fs::write(&stats_path, stats_json + "\n").map_err(io)?;
    Ok(stats)
}

pub fn stats_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".stats.json");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{DirectHit, Misstep, NoTool, RandomAnswer, Scripted, SelfRefine};
    use crate::reward::{accuracy_reward, format_reward};
    use crate::videoworld::{generate_corpus, GenParams, KindMix, TaskKind};

    fn needles(n: usize, seed: u64) -> Vec<Task> {
        let params = GenParams {
            kind_mix: KindMix::only(TaskKind::Needle),
            ..GenParams::default()
        };
        generate_corpus(&params, n, seed).unwrap()
    }

    fn mixed(n: usize, seed: u64) -> Vec<Task> {
        let params = GenParams {
            kind_mix: KindMix {
                needle: 1.0,
                count: 1.0,
                order: 1.0,
            },
            ..GenParams::default()
        };
        generate_corpus(&params, n, seed).unwrap()
    }

    #[test]
    fn direct_hit_exemplars_all_kept() {
        let records = distill_exemplars(&DirectHit, &needles(100, 1), &CurationConfig::default());
        assert_eq!(records.len(), 100);
        assert!(records.iter().all(|r| r.is_kept() && r.origin == Origin::Exemplar));
        let ids: Vec<&str> = records.iter().map(|r| r.trajectory.task_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn random_expert_keeps_about_a_quarter() {
        let tasks = needles(800, 2);
        let policy = RandomAnswer { seed: 9 };
        let kept = distill_exemplars(&policy, &tasks, &CurationConfig::default()).iter().filter(|r| r.is_kept()).count();
        let p = kept as f64 / tasks.len() as f64;
        let sigma = (0.25 * 0.75 / tasks.len() as f64).sqrt();
        assert!((p - 0.25).abs() < 4.0 * sigma, "kept fraction {p}");
    }

    #[test]
    fn malformed_expert_dropped_for_format() {
        let tasks = needles(3, 3);
        let gold = &tasks[0].question.gold;
        let gold_answering = Scripted {
            turns: vec![format!("<answer>{gold}</answer>"), format!("<think>x</think><answer>{gold}</answer>")],
        };
        let records = distill_exemplars(&gold_answering, &tasks[..1], &CurationConfig::default());
        assert_eq!(records[0].verdict, Verdict::Dropped(DropReason::Format));
    }

    #[test]
    fn no_tool_failures_are_missed_needles() {
        let tasks = needles(200, 4);
        let cfg = CurationConfig::default();
        let failures = mine_failures(&NoTool, &tasks, &cfg);
        for (task, traj) in &failures {
            assert_eq!(accuracy_reward(traj, &task.question.gold), 0);
        }
        // recount directly
        let recount = tasks
            .iter()
            .filter(|t| {
                let traj = run_episode(&NoTool, t, &cfg.episode).unwrap();
                accuracy_reward(&traj, &t.question.gold) == 0
            })
            .count();
        assert_eq!(failures.len(), recount);
        // every failure has its needle between glance frames
        for (task, _) in &failures {
            let glance = crate::videoworld::uniform_glance(&task.video, 64);
            let needle = task.video.evidence(&task.question)[0];
            assert!(!glance.frames.iter().any(|f| needle.covers(f.timestamp)));
        }
        assert!(mine_failures(&DirectHit, &tasks, &cfg).is_empty());
    }

    #[test]
    fn reflections_are_kept_and_corrected() {
        let tasks = mixed(60, 5);
        let cfg = CurationConfig::default();
        let failures = mine_failures(&NoTool, &tasks, &cfg);
        assert!(!failures.is_empty());
        let expert = SelfRefine::new(Misstep::WrongSegment);
        for (task, failed) in failures.iter().take(10) {
            let rec = reflect(&expert, task, failed, &cfg);
            assert_eq!(rec.verdict, Verdict::Kept, "{}", rec.trajectory.task_id);
            let first = &rec.trajectory.turns[1].text;
            assert!(first.contains("The previous tool call was incorrect because"));
            assert!(first.ends_with("</video_zoom>"));
            // the failed attempt is not part of the stored sample
            assert!(!rec.trajectory.turns[0].text.contains("Previous Trajectory"));
        }
    }

    #[test]
    fn repeating_expert_fails_reflection() {
        let tasks = needles(80, 6);
        let cfg = CurationConfig::default();
        let (task, failed) = mine_failures(&NoTool, &tasks, &cfg).remove(0);
        let rec = reflect(&NoTool, &task, &failed, &cfg);
        assert_eq!(rec.verdict, Verdict::Dropped(DropReason::ReflectionFailed));
    }

    #[test]
    fn over_budget_correction_recovers() {
        let tasks = needles(80, 7);
        let cfg = CurationConfig::default();
        let (task, failed) = mine_failures(&NoTool, &tasks, &cfg).remove(0);
        let rec = reflect(&SelfRefine::new(Misstep::OverBudget), &task, &failed, &cfg);
        assert!(rec.is_kept());
        assert_eq!(rec.trajectory.error_recoveries(), 1);
    }

    #[test]
    fn export_counts_and_mix() {
        let tasks = needles(40, 8);
        let cfg = CurationConfig {
            mix: None,
            ..CurationConfig::default()
        };
        let out = run_pipeline(&DirectHit, &NoTool, &tasks, &cfg);
        let exemplars: Vec<CurationRecord> = out.exemplars.iter().take(7).cloned().collect();
        let reflections: Vec<CurationRecord> = out.reflections.iter().filter(|r| r.is_kept()).take(3).cloned().collect();
        assert_eq!(reflections.len(), 3);
        let ten: Vec<CurationRecord> = exemplars.into_iter().chain(reflections).collect();
        let (body, stats) = export_string(&ten, 16);
        assert_eq!(body.lines().count(), 10);
        assert_eq!(stats.length_histogram.values().sum::<usize>(), 10);
        assert_eq!(stats.round_histogram.values().sum::<usize>(), 10);
        assert!((stats.origin_mix["exemplar"] - 0.7).abs() < 1e-12);
        assert!((stats.origin_mix["reflection"] - 0.3).abs() < 1e-12);
        // idempotent
        assert_eq!(export_string(&ten, 16).0, body);
        let mut reversed = ten.clone();
        reversed.reverse();
        assert_eq!(export_string(&reversed, 16).0, body);

        let sample: SftSample = serde_json::from_str(body.lines().next().unwrap()).unwrap();
        assert_eq!(sample.messages[0].role, "system");
        for m in &sample.messages {
            assert_eq!(m.trainable, m.role == "assistant");
        }
    }

    #[test]
    fn mix_ratio_selects_prefixes() {
        let tasks = needles(60, 9);
        let out = run_pipeline(&DirectHit, &NoTool, &tasks, &CurationConfig::default());
        let e = out.selected.iter().filter(|r| r.origin == Origin::Exemplar).count();
        let r = out.selected.iter().filter(|r| r.origin == Origin::Reflection).count();
        assert!(r > 0);
        assert_eq!(e, 3 * r);
    }

    #[test]
    fn direct_hit_rounds_concentrate_at_one_call() {
        let records = distill_exemplars(&DirectHit, &needles(100, 10), &CurationConfig::default());
        let stats = corpus_stats(&records);
        let at_most_one: usize = stats.round_histogram.range(..=1).map(|(_, n)| n).sum();
        assert_eq!(at_most_one, 100);
        assert!(stats.round_histogram[&1] > stats.round_histogram.get(&0).copied().unwrap_or(0));
    }

    #[test]
    fn kept_records_replay_clean() {
        let tasks = mixed(60, 11);
        let out = run_pipeline(&SelfRefine::default(), &NoTool, &tasks, &CurationConfig::default());
        for r in &out.selected {
            assert_eq!(accuracy_reward(&r.trajectory, &r.trajectory.question.gold), 1);
            assert_eq!(format_reward(&r.trajectory), 1);
        }
    }

    #[test]
    fn origin_separation() {
        let tasks = mixed(120, 12);
        let cfg = CurationConfig::default();
        let exemplars = distill_exemplars(&DirectHit, &tasks, &cfg);
        let failures = mine_failures(&NoTool, &tasks, &cfg);
        let reflections = reflect_all(&SelfRefine::default(), &failures, &cfg);
        let rich = |rs: &[CurationRecord]| {
            let kept: Vec<&CurationRecord> = rs.iter().filter(|r| r.is_kept()).collect();
            let n = kept
                .iter()
                .filter(|r| r.trajectory.tool_calls_made >= 2 || r.trajectory.error_recoveries() >= 1)
                .count();
            n as f64 / kept.len() as f64
        };
        assert!(rich(&reflections) > rich(&exemplars));
    }

    #[test]
    fn export_writes_stats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let records = distill_exemplars(&DirectHit, &needles(5, 13), &CurationConfig::default());
        let stats = export_sft(&records, &path, 16).unwrap();
        assert_eq!(stats.records, 5);
        let again: CorpusStats = serde_json::from_str(&std::fs::read_to_string(stats_path(&path)).unwrap()).unwrap();
        assert_eq!(again, stats);
    }
}
