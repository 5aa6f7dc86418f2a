//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the report is always printed.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use glance_zoom::cli::{fps_report, sweep, FPS_BIN_LABELS};
use glance_zoom::curation::{self, CurationConfig, Origin, SftSample};
use glance_zoom::episode::{run_batch, run_episode, EpisodeConfig, Trajectory};
use glance_zoom::grpo::{
    finite_difference_error, group_advantages, kl_term, masked_surrogate, mean, std_dev, ObjectiveConfig, StdConvention,
    TokenizedRollout,
};
use glance_zoom::jsonl;
use glance_zoom::policy::{
    AlwaysZoom, DirectHit, Misstep, NoTool, Policy, PolicyContext, PolicyError, PolicyOutput, Progressive, RandomAnswer,
    RemoteConfig, RemotePolicy, Scripted, SelfRefine,
};
use glance_zoom::prompts::REASONING_PROMPT;
use glance_zoom::protocol::{extract_answer, parse_turn, render_tool_call, validate_format, Action, ToolCall};
use glance_zoom::reward::{feasible_components, total_reward, RewardWeights};
use glance_zoom::videoworld::{
    analytic_miss_probability, generate_corpus, uniform_glance, Event, EventKind, GenParams, KindMix, SyntheticVideo, Task,
    TaskKind,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mixed_params() -> GenParams {
    GenParams {
        kind_mix: KindMix {
            needle: 1.0,
            count: 1.0,
            order: 1.0,
        },
        ..GenParams::default()
    }
}

// ---------------------------------------------------------------------------
// 1. Budget hard cap

/// Requests random segments at random fps, some legal, most not, and never answers.
struct Chaos {
    seed: u64,
}

impl Policy for Chaos {
    fn name(&self) -> &str {
        "chaos"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ctx.video.background_seed ^ ((ctx.policy_turns() as u64) << 40));
        let d = ctx.video.duration;
        let start = rng.random_range(-10.0..d);
        let len = rng.random_range(0.1..200.0);
        let fps = [0.5, 1.0, 2.0, 8.0, 16.0, 30.0, 60.0][rng.random_range(0..7)];
        let call = ToolCall::new(start, start + len, fps);
        Ok(PolicyOutput::new(format!("<think>more</think>{}", render_tool_call(&call))))
    }
}

fn criterion_1() -> Outcome {
    let tasks = generate_corpus(&mixed_params(), 2500, 101).unwrap();
    let cfg = EpisodeConfig::default();
    let policies: Vec<Box<dyn Policy>> = vec![
        Box::new(AlwaysZoom {
            seed: 1,
            over_budget: false,
        }),
        Box::new(AlwaysZoom {
            seed: 2,
            over_budget: true,
        }),
        Box::new(Chaos { seed: 3 }),
        Box::new(SelfRefine::new(Misstep::NeverCorrect)),
    ];
    let (mut episodes, mut violations, mut max_frames, mut max_calls) = (0, 0, 0, 0);
    for p in &policies {
        for r in run_batch(p.as_ref(), &tasks, &cfg, 0) {
            let t = r.unwrap();
            episodes += 1;
            max_frames = max_frames.max(t.total_frames);
            max_calls = max_calls.max(t.tool_calls_made);
            if t.total_frames > 128 || t.tool_calls_made > 4 {
                violations += 1;
            }
        }
    }
    outcome(
        episodes >= 10_000 && violations == 0,
        format!("{episodes} adversarial episodes, {violations} violations, max frames {max_frames}, max tool calls {max_calls}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Reward codomain and ablation

fn criterion_2() -> Outcome {
    let w = RewardWeights::default();
    let mut totals: Vec<f64> = feasible_components().into_iter().map(|(a, f, t)| w.combine(a, f, t)).collect();
    totals.sort_by(f64::total_cmp);
    let want = [0.0, 0.1, 0.9, 1.0, 1.4, 1.5];
    let codomain_ok = totals.len() == want.len() && totals.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12);

    let tasks = generate_corpus(&mixed_params(), 200, 202).unwrap();
    let policies: Vec<Box<dyn Policy>> = vec![
        Box::new(DirectHit),
        Box::new(NoTool),
        Box::new(Progressive),
        Box::new(SelfRefine::new(Misstep::OverBudget)),
        Box::new(RandomAnswer { seed: 5 }),
        Box::new(AlwaysZoom::default()),
        Box::new(Scripted {
            turns: vec!["<answer>A</answer>".into(), "<think>x</think><answer>A</answer>".into()],
        }),
    ];
    let ablated = RewardWeights::without_tool();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let (mut outside, mut mismatched, mut n) = (0, 0, 0);
    for p in &policies {
        for r in run_batch(p.as_ref(), &tasks, &EpisodeConfig::default(), 0) {
            let t = r.unwrap();
            let full = total_reward(&t, &t.question.gold, &w);
            let abl = total_reward(&t, &t.question.gold, &ablated);
            n += 1;
            if !want.iter().any(|v| (v - full.total).abs() < 1e-12) {
                outside += 1;
            }
            *seen.entry(format!("{:.1}", full.total)).or_default() += 1;
            let same_components = (full.r_acc, full.r_fmt, full.r_tool) == (abl.r_acc, abl.r_fmt, abl.r_tool);
            let ablated_total = 0.9 * f64::from(full.r_acc) + 0.1 * f64::from(full.r_fmt);
            if !same_components || abl.total != ablated_total {
                mismatched += 1;
            }
        }
    }
    outcome(
        codomain_ok && outside == 0 && mismatched == 0,
        format!(
            "enumerated totals {totals:?}; {n} trajectories, {outside} outside codomain, {mismatched} ablation mismatches; observed {seen:?}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. GRPO math

fn random_rollout(rng: &mut ChaCha8Rng, spread: f64) -> TokenizedRollout {
    let n = rng.random_range(1..40);
    let logp_old: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..-0.01)).collect();
    let logp_new: Vec<f64> = logp_old.iter().map(|o| o + rng.random_range(-spread..spread)).collect();
    let logp_ref: Vec<f64> = logp_old.iter().map(|o| o + rng.random_range(-0.5..0.5)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    let i = rng.random_range(0..n);
    mask[i] = true;
    TokenizedRollout {
        rollout_id: String::new(),
        token_count: n,
        logp_new,
        logp_old,
        logp_ref,
        mask,
        reward: 0.0,
        entropy: None,
    }
}

fn criterion_3() -> Outcome {
    let cfg = ObjectiveConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // (a)
    let (mut groups, mut worst_mean, mut worst_std): (usize, f64, f64) = (0, 0.0, 0.0);
    while groups < 1000 {
        let n = rng.random_range(2..33);
        let rewards: Vec<f64> = if rng.random_bool(0.5) {
            (0..n).map(|_| [0.0, 0.1, 0.9, 1.0, 1.4, 1.5][rng.random_range(0..6)]).collect()
        } else {
            (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        let a = group_advantages(&rewards, StdConvention::Population).unwrap();
        if a.degenerate {
            continue;
        }
        groups += 1;
        worst_mean = worst_mean.max(mean(&a.values).abs());
        worst_std = worst_std.max((std_dev(&a.values, StdConvention::Population) - 1.0).abs());
    }
    let a_ok = worst_mean < 1e-9 && worst_std < 1e-9;

    // (b)
    let mut perturbation_changes = 0;
    for _ in 0..1000 {
        let r = random_rollout(&mut rng, 0.6);
        let adv = rng.random_range(-3.0..3.0);
        let base = (masked_surrogate(&r, adv, &cfg).unwrap(), kl_term(&r).unwrap());
        let mut p = r.clone();
        for t in 0..p.token_count {
            if !p.mask[t] {
                p.logp_new[t] += rng.random_range(-100.0..100.0);
                p.logp_ref[t] += rng.random_range(-100.0..100.0);
            }
        }
        let after = (masked_surrogate(&p, adv, &cfg).unwrap(), kl_term(&p).unwrap());
        if after != base {
            perturbation_changes += 1;
        }
    }

    // (c)
    let mut worst_fd: f64 = 0.0;
    for _ in 0..100 {
        let r = random_rollout(&mut rng, 0.6);
        let adv = rng.random_range(-3.0..3.0);
        worst_fd = worst_fd.max(finite_difference_error(&r, adv, &cfg, 1e-6).unwrap());
    }

    // (d)
    let (mut max_pos, mut min_neg, mut clip_violations): (f64, f64, usize) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for _ in 0..2000 {
        let r = random_rollout(&mut rng, 2.0);
        let adv = rng.random_range(-3.0..3.0);
        if adv == 0.0 {
            continue;
        }
        let s = masked_surrogate(&r, adv, &cfg).unwrap();
        for t in (0..r.token_count).filter(|t| r.mask[*t]) {
            let effective = -s.per_token[t] / adv;
            if adv > 0.0 {
                max_pos = max_pos.max(effective);
                if effective > 1.27 + 1e-12 {
                    clip_violations += 1;
                }
            } else {
                min_neg = min_neg.min(effective);
                if effective < 0.8 - 1e-12 {
                    clip_violations += 1;
                }
            }
        }
    }

    outcome(
        a_ok && perturbation_changes == 0 && worst_fd < 1e-5 && clip_violations == 0,
        format!(
            "(a) {groups} groups, max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}; (b) {perturbation_changes} changes; (c) max rel err {worst_fd:.1e}; (d) effective ratio max {max_pos:.4} for A>0, min {min_neg:.4} for A<0, {clip_violations} violations"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Parser

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    const PIECES: [&str; 16] = [
        "<think>",
        "</think>",
        "<answer>",
        "</answer>",
        "<video_zoom>",
        "</video_zoom>",
        "{\"segment\": [1.0, 3.0], \"fps\": 2}",
        "{\"segment\": [",
        "\"fps\": -1}",
        "B",
        "\\boxed{C}",
        "<think",
        "x",
        " ",
        "\u{00e9}\u{4e2d}",
        "{}",
    ];
    let mut aborts = 0;
    for i in 0..10_000 {
        let text = if i % 2 == 0 {
            let bytes: Vec<u8> = (0..rng.random_range(0..200)).map(|_| rng.random()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        } else {
            (0..rng.random_range(0..20)).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
        };
        if catch_unwind(|| parse_turn(&text)).is_err() {
            aborts += 1;
        }
    }

    let mut round_trip_failures = 0;
    for _ in 0..1000 {
        let s: f64 = rng.random_range(0.0..7200.0);
        let len: f64 = rng.random_range(0.001..600.0);
        let fps: f64 = if rng.random_bool(0.5) {
            f64::from(rng.random_range(1u32..31))
        } else {
            rng.random_range(0.01..30.0)
        };
        let call = ToolCall::new(s, s + len, fps);
        let text = format!("<think>check</think>{}", render_tool_call(&call));
        if parse_turn(&text).action != Action::ToolUse(call) {
            round_trip_failures += 1;
        }
    }

    let start = REASONING_PROMPT.find("Example usage: ").unwrap() + "Example usage: ".len();
    let end = start + REASONING_PROMPT[start..].find("</video_zoom>").unwrap() + "</video_zoom>".len();
    let example = &REASONING_PROMPT[start..end];
    let parsed = parse_turn(&format!("<think>x</think>{example}")).action;
    let example_ok = parsed == Action::ToolUse(ToolCall::new(4.0, 6.0, 2.0));

    outcome(
        aborts == 0 && round_trip_failures == 0 && example_ok,
        format!("10000 fuzz cases, {aborts} aborts; 1000 round trips, {round_trip_failures} mismatches; prompt example `{example}` -> {parsed:?}"),
    )
}

// ---------------------------------------------------------------------------
// 5. Miss law

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let trials = 100_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, span, duration) in [(64u64, 2.0, 3600.0), (128, 2.0, 3600.0), (64, 60.0, 3600.0)] {
        let video = SyntheticVideo {
            duration,
            native_fps: 30.0,
            events: Vec::new(),
            background_seed: 0,
        };
        let stamps: Vec<f64> = uniform_glance(&video, n).frames.iter().map(|f| f.timestamp).collect();
        let mut misses = 0u64;
        for _ in 0..trials {
            let needle = Event {
                time: rng.random_range(0.0..=duration - span),
                span,
                kind: EventKind::Needle,
                payload: String::new(),
            };
            if !stamps.iter().any(|t| needle.covers(*t)) {
                misses += 1;
            }
        }
        let empirical = misses as f64 / trials as f64;
        let p = analytic_miss_probability(n, span, duration);
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let ok = if sigma == 0.0 { empirical == p } else { (empirical - p).abs() <= 3.0 * sigma };
        pass &= ok;
        parts.push(format!("({n}, {span}, {duration}): empirical {empirical:.5} vs analytic {p:.5} (3σ {:.5})", 3.0 * sigma));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 6. Efficiency dominance

fn criterion_6() -> Outcome {
    let budgets = [16, 32, 64, 128, 256];
    let policies: Vec<Box<dyn Policy>> = vec![Box::new(Progressive)];
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=5 {
        let tasks = generate_corpus(&GenParams::default(), 1000, 600 + seed).unwrap();
        let rows = sweep(&tasks, &budgets, &policies, &EpisodeConfig::default(), 0);
        let agent = rows.iter().find(|r| r.budget.is_none()).unwrap();
        let uniform: Vec<_> = rows.iter().filter(|r| r.budget.is_some()).collect();
        let u128 = uniform.iter().find(|r| r.budget == Some(128)).unwrap();
        let dominates = uniform.iter().all(|u| agent.accuracy > u.accuracy)
            && uniform.iter().filter(|u| u.budget >= Some(128)).all(|u| agent.mean_frames < u.mean_frames);
        let ok = agent.accuracy >= 0.99 && agent.mean_frames <= 96.0 && u128.accuracy - 0.25 <= 0.10 && dominates;
        pass &= ok;
        let curve: Vec<String> = uniform.iter().map(|u| format!("{}:{:.3}", u.budget.unwrap(), u.accuracy)).collect();
        parts.push(format!(
            "seed {seed}: progressive acc {:.3} @ {:.1} frames, uniform [{}]",
            agent.accuracy,
            agent.mean_frames,
            curve.join(" ")
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 7. Curation pipeline

fn criterion_7() -> Outcome {
    let params = GenParams {
        kind_mix: KindMix::only(TaskKind::Needle),
        ..GenParams::default()
    };
    let tasks = generate_corpus(&params, 400, 707).unwrap();
    let by_id: BTreeMap<&str, &Task> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let cfg = CurationConfig::default();
    let out = curation::run_pipeline(&DirectHit, &NoTool, &tasks, &cfg);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sft.jsonl");
    let stats = curation::export_sft(&out.selected, &path, 16).unwrap();
    let samples: Vec<SftSample> = jsonl::read(&path).unwrap();

    // replay every exported conversation through the environment and the reward
    let mut clean = 0;
    for s in &samples {
        let (task_id, _) = s.id.rsplit_once('-').unwrap();
        let task = by_id[task_id];
        let assistant: Vec<String> = s.messages.iter().filter(|m| m.role == "assistant").map(|m| m.content.clone()).collect();
        let parsed: Vec<_> = assistant.iter().map(|t| parse_turn(t)).collect();
        let answer_ok = matches!(&parsed.last().map(|p| &p.action), Some(Action::Answer(a)) if extract_answer(a) == task.question.gold);
        let replay = run_episode(&Scripted { turns: assistant }, task, &EpisodeConfig::default()).unwrap();
        let r = total_reward(&replay, &task.question.gold, &RewardWeights::default());
        let same_text = replay.turns.iter().map(|t| t.text.as_str()).eq(s.messages[1..].iter().map(|m| m.content.as_str()));
        if r.r_acc == 1 && r.r_fmt == 1 && validate_format(&parsed).ok && answer_ok && same_text {
            clean += 1;
        }
    }

    let mean_calls = |origin: Origin| {
        let kept: Vec<&Trajectory> = out
            .exemplars
            .iter()
            .chain(&out.reflections)
            .filter(|r| r.is_kept() && r.origin == origin)
            .map(|r| &r.trajectory)
            .collect();
        kept.iter().map(|t| t.tool_calls_made as f64).sum::<f64>() / kept.len().max(1) as f64
    };
    let (ex, re) = (mean_calls(Origin::Exemplar), mean_calls(Origin::Reflection));
    let kept = samples.len();
    outcome(
        kept >= 100 && clean == kept && re > ex,
        format!(
            "{kept} exported KEPT records ({} exemplar, {} reflection), {clean} replay with r_acc = r_fmt = 1; mean tool calls exemplar {ex:.3} vs reflection {re:.3}",
            stats.exemplar, stats.reflection
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. fps report

fn engineered_trajectories() -> (Vec<Trajectory>, [usize; 5]) {
    let plan: [(f64, usize); 10] = [
        (0.5, 3),
        (1.0, 2),
        (1.25, 1),
        (2.0, 4),
        (2.5, 1),
        (4.0, 2),
        (5.0, 1),
        (8.0, 3),
        (8.01, 1),
        (16.0, 2),
    ];
    let expected = [5, 5, 3, 4, 3];
    let calls: Vec<f64> = plan.iter().flat_map(|(f, k)| std::iter::repeat_n(*f, *k)).collect();
    let tasks = generate_corpus(&GenParams::default(), calls.len().div_ceil(4), 808).unwrap();
    let trajs = calls
        .chunks(4)
        .zip(&tasks)
        .map(|(chunk, task)| {
            let mut turns: Vec<String> = chunk
                .iter()
                .map(|fps| {
                    let call = ToolCall::new(100.0, 100.0 + 8.0 / fps, *fps);
                    format!("<think>probe</think>{}", render_tool_call(&call))
                })
                .collect();
            turns.push("<think>done</think><answer>A</answer>".into());
            run_episode(&Scripted { turns }, task, &EpisodeConfig::default()).unwrap()
        })
        .collect();
    (trajs, expected)
}

fn criterion_8() -> Outcome {
    let (trajs, expected) = engineered_trajectories();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("engineered.jsonl");
    jsonl::write(&path, &trajs).unwrap();
    let csv_path = dir.path().join("fps.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_glance-zoom"))
        .args(["fps-report", "--trajectories"])
        .arg(&path)
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    let csv = std::fs::read_to_string(&csv_path).unwrap_or_default();
    let rows: Vec<(String, usize, f64)> = csv
        .lines()
        .skip(1)
        .filter_map(|l| {
            let (label, rest) = l.strip_prefix('"')?.split_once("\",")?;
            let (count, pct) = rest.split_once(',')?;
            Some((label.to_string(), count.parse().ok()?, pct.parse().ok()?))
        })
        .collect();
    let labels_ok = rows.iter().map(|r| r.0.as_str()).eq(FPS_BIN_LABELS);
    let counts: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let exact = fps_report(&trajs);
    let pct_sum: f64 = exact.iter().map(|b| b.percent).sum();
    let printed_sum: f64 = rows.iter().map(|r| r.2).sum();

    // a policy-generated file recounts the same way
    let tasks = generate_corpus(&mixed_params(), 200, 809).unwrap();
    let hits: Vec<Trajectory> = run_batch(&Progressive, &tasks, &EpisodeConfig::default(), 0).into_iter().map(Result::unwrap).collect();
    let mut recount = [0usize; 5];
    for c in hits.iter().flat_map(|t| &t.calls) {
        let f = c.call.fps;
        recount[[f <= 1.0, f <= 2.0, f <= 4.0, f <= 8.0, true].iter().position(|b| *b).unwrap()] += 1;
    }
    let policy_ok = fps_report(&hits).iter().map(|b| b.count).eq(recount);

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let empty_out = Command::new(env!("CARGO_BIN_EXE_glance-zoom")).args(["fps-report", "--trajectories"]).arg(&empty).output().unwrap();
    let empty_ok = empty_out.status.success() && String::from_utf8_lossy(&empty_out.stdout).lines().count() == 1;

    outcome(
        status.status.success() && labels_ok && counts == expected && (pct_sum - 100.0).abs() < 1e-9 && (printed_sum - 100.0).abs() < 0.05 && policy_ok && empty_ok,
        format!(
            "bins {:?}; engineered counts {counts:?} (expected {expected:?}), percent sum {pct_sum}; progressive recount {recount:?} {}; empty file -> header only {}",
            FPS_BIN_LABELS,
            if policy_ok { "matches" } else { "differs" },
            if empty_ok { "ok" } else { "FAILED" }
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Remote-policy golden

fn criterion_9() -> Outcome {
    std::env::set_var("GZ_ACCEPTANCE_KEY", "acceptance");
    let tasks = generate_corpus(&mixed_params(), 20, 909).unwrap();
    let cfg = EpisodeConfig::default();
    let mut identical = 0;
    for task in &tasks {
        let expected = run_episode(&DirectHit, task, &cfg).unwrap();
        let replies = expected.turns.iter().filter(|t| t.trainable).map(|t| common::Reply::content(&t.text)).collect();
        let server = common::MockServer::start(replies);
        let remote = RemotePolicy::new(RemoteConfig {
            endpoint: server.url.clone(),
            api_key_env: "GZ_ACCEPTANCE_KEY".into(),
            timeout_secs: 10,
            ..RemoteConfig::default()
        });
        let got = run_episode(&remote, task, &cfg).unwrap();
        if serde_json::to_string(&got).unwrap() == serde_json::to_string(&expected).unwrap() {
            identical += 1;
        }
    }
    outcome(identical == tasks.len(), format!("{identical}/{} remote trajectories byte-identical to direct_hit", tasks.len()))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        ("budget hard cap", criterion_1, Duration::from_secs(60)),
        ("reward codomain and ablation", criterion_2, Duration::from_secs(60)),
        ("GRPO math", criterion_3, Duration::from_secs(60)),
        ("parser", criterion_4, Duration::from_secs(60)),
        ("uniform-sampling miss law", criterion_5, Duration::from_secs(60)),
        ("efficiency dominance", criterion_6, Duration::from_secs(300)),
        ("curation pipeline", criterion_7, Duration::from_secs(300)),
        ("fps report", criterion_8, Duration::from_secs(60)),
        ("remote-policy golden", criterion_9, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = started.elapsed();
        let pass = result.pass && elapsed <= *limit;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} {} {name}: {} ({:.1}s, limit {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
