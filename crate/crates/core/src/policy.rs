//! Decision makers that drive an episode.
//!
//! Scripted policies read the ground-truth timeline through the context. They
//! are test instruments and synthetic experts, not contestants. The remote
//! policy forwards the conversation to an OpenAI-compatible chat endpoint.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::protocol::{render_tool_call, requested_frames, ToolCall};
use crate::videoworld::{
    answer_from_frames, splitmix64, BudgetConfig, Event, Frame, FrameAnswer, Observation, Question,
    SyntheticVideo, TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Policy,
    Observation,
}

/// One message of the running conversation. Observation entries keep the
/// structured frames next to their rendered text.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub role: Role,
    pub text: String,
    pub observation: Option<Observation>,
    /// Set on observations that answer a tool call.
    pub tool_call: Option<ToolCall>,
}

/// A student's failed attempt, shown to an expert asked to reflect on it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub calls: Vec<ToolCall>,
    pub answer: Option<String>,
}

impl FailedAttempt {
    pub fn render(&self) -> String {
        let mut out = String::from("Previous Trajectory (Wrong):");
        if self.calls.is_empty() {
            out.push_str("\nTool call: none");
        }
        for call in &self.calls {
            out.push_str(&format!("\nTool call: {}", render_tool_call(call)));
        }
        out.push_str(&format!("\nAnswer: {}", self.answer.as_deref().unwrap_or("none")));
        out
    }
}

/// Everything a policy sees when asked for its next turn.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub system_prompt: &'a str,
    /// Starts with the glance-plus-question observation, then alternates
    /// policy and observation entries.
    pub history: &'a [HistoryEntry],
    pub question: &'a Question,
    /// Ground truth, readable by scripted policies only.
    pub video: &'a SyntheticVideo,
    pub budget: &'a BudgetConfig,
    pub reflection: Option<&'a FailedAttempt>,
}

impl<'a> PolicyContext<'a> {
    pub fn observed_frames(&self) -> impl Iterator<Item = &'a Frame> + 'a {
        self.history
            .iter()
            .filter_map(|h| h.observation.as_ref())
            .flat_map(|o| o.frames.iter())
    }

    /// Tool calls issued so far, errored ones included.
    pub fn tool_calls_made(&self) -> u64 {
        self.history.iter().filter(|h| h.tool_call.is_some()).count() as u64
    }

    pub fn policy_turns(&self) -> usize {
        self.history.iter().filter(|h| h.role == Role::Policy).count()
    }

    /// The environment's response to the most recent tool call.
    pub fn last_tool_response(&self) -> Option<&'a Observation> {
        self.history
            .iter()
            .rev()
            .find(|h| h.tool_call.is_some())
            .and_then(|h| h.observation.as_ref())
    }

    fn calls_left(&self) -> u64 {
        self.budget.max_tool_calls.saturating_sub(self.tool_calls_made())
    }

    /// Decisive events no observed frame has landed in yet.
    fn uncovered_evidence(&self) -> Vec<&'a Event> {
        let frames: Vec<&Frame> = self.observed_frames().collect();
        self.video
            .evidence(self.question)
            .into_iter()
            .filter(|e| !frames.iter().any(|f| e.covers(f.timestamp)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub raw_text: String,
}

impl PolicyOutput {
    pub fn new(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("TRANSPORT({0})")]
    Transport(String),
    #[error("TIMEOUT")]
    Timeout,
    #[error("AUTH: {0}")]
    Auth(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        (**self).respond(ctx)
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        (**self).respond(ctx)
    }
}

// ---------------------------------------------------------------------------
// Turn text helpers

fn fmt_secs(t: f64) -> String {
    format!("{t:.2}")
}

fn zoom_turn(think: &str, call: &ToolCall) -> PolicyOutput {
    PolicyOutput::new(format!("<think>{think}</think>{}", render_tool_call(call)))
}

fn answer_turn(think: &str, label: &str) -> PolicyOutput {
    PolicyOutput::new(format!("<think>{think}</think><answer>{label}</answer>"))
}

fn reflection_answer_turn(think: &str, label: &str) -> PolicyOutput {
    PolicyOutput::new(format!("<think>{think}</think><answer>\\boxed{{{label}}}</answer>"))
}

fn subject_phrase(q: &Question) -> String {
    let t: Vec<String> = q.targets.iter().map(|t| t.replace('_', " ")).collect();
    match q.kind {
        TaskKind::Needle => format!("the {}", t.join(" ")),
        TaskKind::Count => format!("each '{}' repetition", t.join(" ")),
        TaskKind::Order => format!("the '{}' and '{}' events", t[0], t.get(1).cloned().unwrap_or_default()),
    }
}

/// The label a policy falls back on when its frames reveal nothing.
pub fn fallback_label(q: &Question) -> String {
    q.choices.first().map(|c| c.label.clone()).unwrap_or_default()
}

fn answer_or_guess<'a>(frames: impl IntoIterator<Item = &'a Frame>, q: &Question) -> (String, bool) {
    match answer_from_frames(frames, q) {
        FrameAnswer::Choice(l) => (l, true),
        FrameAnswer::Abstain => (fallback_label(q), false),
    }
}

fn describe_answer(q: &Question, label: &str, informed: bool) -> String {
    let text = q.text_for(label).unwrap_or(label);
    if informed {
        format!("The frames now show {}. The answer is {label}: {text}.", subject_phrase(q))
    } else {
        format!("The frames never showed {}, so I have to guess {label}.", subject_phrase(q))
    }
}

// ---------------------------------------------------------------------------
// Window planning on the evidence lattice

/// Decisive events of a generated question share one span, and their start
/// times differ by whole multiples of it, so a zoom at `k / span` fps whose
/// start sits on that lattice puts frames strictly inside every event.
struct ZoomPlan {
    call: ToolCall,
}

fn lattice_slots(first: &Event, last: &Event) -> u64 {
    ((last.end() - first.time) / first.span).round().max(1.0) as u64
}

/// Split evidence into consecutive groups that fit one zoom at `per_slot`
/// frames per event span.
fn group_evidence<'a>(events: &[&'a Event], budget: u64, per_slot: u64) -> Vec<Vec<&'a Event>> {
    let mut groups: Vec<Vec<&Event>> = Vec::new();
    for e in events {
        match groups.last_mut() {
            Some(g) if lattice_slots(g[0], e) * per_slot <= budget => g.push(e),
            _ => groups.push(vec![e]),
        }
    }
    groups
}

/// Plan a zoom over `group` with `per_slot` frames per event span, padded by
/// whole spans on both sides up to `max_frames` frames, kept inside the video.
fn aligned_zoom(group: &[&Event], per_slot: u64, max_frames: u64, video: &SyntheticVideo) -> Option<ZoomPlan> {
    let first = group.first()?;
    let last = group.last()?;
    let span = first.span;
    let slots = lattice_slots(first, last);
    if slots * per_slot > max_frames {
        return None;
    }
    let fps = per_slot as f64 / span;
    let mut pad = (max_frames / per_slot - slots) / 2;
    loop {
        let len = (slots + 2 * pad) as f64 * span;
        if len <= video.duration || pad == 0 {
            let mut start = first.time - pad as f64 * span;
            if start < 0.0 {
                start += (-start / span).ceil() * span;
            }
            let mut end = start + len;
            if end > video.duration {
                let back = ((end - video.duration) / span).ceil() * span;
                start -= back;
                end -= back;
            }
            let start = start.max(0.0);
            let end = end.min(video.duration);
            if end <= start {
                return None;
            }
            return Some(ZoomPlan {
                call: ToolCall::new(start, end, fps.min(video.native_fps)),
            });
        }
        pad -= 1;
    }
}

/// Direct-hit zoom on the first uncovered evidence group: the smallest fps
/// that resolves the events, padded to the full per-call budget.
fn direct_zoom(ctx: &PolicyContext<'_>, uncovered: &[&Event]) -> Option<ZoomPlan> {
    let budget = ctx.budget.per_call_budget;
    let groups = group_evidence(uncovered, budget, 1);
    aligned_zoom(groups.first()?, 1, budget, ctx.video)
}

fn evidence_hull(events: &[&Event]) -> (f64, f64) {
    let start = events.iter().map(|e| e.time).fold(f64::INFINITY, f64::min);
    let end = events.iter().map(|e| e.end()).fold(f64::NEG_INFINITY, f64::max);
    (start, end)
}

/// A window of the same length as `plan` that contains none of the evidence.
fn misplaced_window(ctx: &PolicyContext<'_>, plan: &ToolCall, attempt: u64) -> ToolCall {
    let evidence = ctx.video.evidence(ctx.question);
    let (lo, hi) = evidence_hull(&evidence);
    let len = plan.t_end - plan.t_start;
    let offset = len * (1.0 + attempt as f64);
    let duration = ctx.video.duration;
    let candidates = [hi + offset, lo - offset - len, hi + 1e-3, lo - len - 1e-3, 0.0, duration - len];
    let start = candidates
        .into_iter()
        .map(|s| s.clamp(0.0, (duration - len).max(0.0)))
        .find(|s| *s + len <= lo || *s >= hi)
        .unwrap_or(0.0);
    ToolCall::new(start, (start + len).min(duration), plan.fps)
}

fn explain_flaw(attempt: &FailedAttempt, q: &Question, video: &SyntheticVideo) -> String {
    if attempt.calls.is_empty() {
        return "it answered from the low-frame-rate glance without inspecting the decisive moment".into();
    }
    let evidence = video.evidence(q);
    let on_target = attempt
        .calls
        .iter()
        .any(|c| evidence.iter().any(|e| c.t_start < e.end() && e.time < c.t_end));
    if on_target && attempt.calls.iter().all(|c| c.fps < q.min_detect_fps) {
        "the fps was too low to resolve the event".into()
    } else if on_target {
        "its frames fell between the decisive moments".into()
    } else {
        "it focused on the wrong time segment".into()
    }
}

fn reflection_zoom_turn(ctx: &PolicyContext<'_>, attempt: &FailedAttempt, call: &ToolCall) -> PolicyOutput {
    let target = ctx.question.targets.join(" / ").replace('_', " ");
    let think = format!(
        "\nThe previous tool call was incorrect because {}.\nNow I will zoom in to inspect the motion of '{}' between {}s and {}s with higher temporal resolution.\n",
        explain_flaw(attempt, ctx.question, ctx.video),
        target,
        fmt_secs(call.t_start),
        fmt_secs(call.t_end)
    );
    zoom_turn(&think, call)
}

fn final_answer(ctx: &PolicyContext<'_>) -> PolicyOutput {
    let (label, informed) = answer_or_guess(ctx.observed_frames(), ctx.question);
    let think = describe_answer(ctx.question, &label, informed);
    if ctx.reflection.is_some() {
        reflection_answer_turn(&format!("In the corrected high-frame-rate clip, {think}"), &label)
    } else {
        answer_turn(&think, &label)
    }
}

// ---------------------------------------------------------------------------
// Scripted policies

/// One maximal zoom centered on the decisive event, then the answer.
#[derive(Debug, Clone, Default)]
pub struct DirectHit;

impl Policy for DirectHit {
    fn name(&self) -> &str {
        "direct_hit"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let made = ctx.tool_calls_made();
        let mut targets = ctx.uncovered_evidence();
        // a reflection always demonstrates the corrected call
        if ctx.reflection.is_some() && made == 0 && targets.is_empty() {
            targets = ctx.video.evidence(ctx.question);
        }
        if targets.is_empty() || ctx.calls_left() == 0 {
            return Ok(final_answer(ctx));
        }
        let Some(plan) = direct_zoom(ctx, &targets) else {
            return Ok(final_answer(ctx));
        };
        if let (Some(attempt), 0) = (ctx.reflection, made) {
            return Ok(reflection_zoom_turn(ctx, attempt, &plan.call));
        }
        let think = format!(
            "The glance does not resolve {}. I will zoom into {}s-{}s at {} fps, enough to catch it.",
            subject_phrase(ctx.question),
            fmt_secs(plan.call.t_start),
            fmt_secs(plan.call.t_end),
            plan.call.fps
        );
        Ok(zoom_turn(&think, &plan.call))
    }
}

/// A coarse scan of the glance gap holding the evidence, then a finer zoom
/// inside it when the scan missed.
#[derive(Debug, Clone, Default)]
pub struct Progressive;

impl Progressive {
    fn coarse_window(ctx: &PolicyContext<'_>, events: &[&Event]) -> Option<ToolCall> {
        let (lo, hi) = evidence_hull(events);
        let n = ctx.budget.glance_frames.max(1);
        let step = ctx.video.duration / n as f64;
        let glance_ts = |i: u64| (i as f64 + 0.5) * step;
        // last glance frame at or before lo, first at or after hi
        let start = (0..n).map(glance_ts).rfind(|t| *t <= lo).unwrap_or(0.0);
        let end = (0..n).map(glance_ts).find(|t| *t >= hi).unwrap_or(ctx.video.duration);
        if end <= start {
            return None;
        }
        let fps = (ctx.budget.per_call_budget as f64 / (end - start)).min(ctx.video.native_fps);
        Some(ToolCall::new(start, end, fps))
    }
}

impl Policy for Progressive {
    fn name(&self) -> &str {
        "progressive"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let uncovered = ctx.uncovered_evidence();
        if uncovered.is_empty() || ctx.calls_left() == 0 {
            return Ok(final_answer(ctx));
        }
        if ctx.tool_calls_made() == 0 {
            if let Some(call) = Self::coarse_window(ctx, &uncovered) {
                if requested_frames(&call) <= ctx.budget.per_call_budget {
                    let think = format!(
                        "Somewhere between {}s and {}s the glance may have skipped {}. I will scan that window coarsely at {} fps first.",
                        fmt_secs(call.t_start),
                        fmt_secs(call.t_end),
                        subject_phrase(ctx.question),
                        call.fps
                    );
                    return Ok(zoom_turn(&think, &call));
                }
            }
        }
        let budget = ctx.budget.per_call_budget;
        let fine_frames = (budget / 2).max(1);
        let groups = group_evidence(&uncovered, fine_frames, 2);
        let plan = aligned_zoom(&groups[0], 2, fine_frames, ctx.video).or_else(|| direct_zoom(ctx, &uncovered));
        let Some(plan) = plan else {
            return Ok(final_answer(ctx));
        };
        let think = format!(
            "The coarse scan did not resolve {}. I will zoom into {}s-{}s at a finer {} fps.",
            subject_phrase(ctx.question),
            fmt_secs(plan.call.t_start),
            fmt_secs(plan.call.t_end),
            plan.call.fps
        );
        Ok(zoom_turn(&think, &plan.call))
    }
}

/// How [`SelfRefine`] spoils its first request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misstep {
    /// Zoom on a segment that misses the evidence, then correct it.
    #[default]
    WrongSegment,
    /// Ask for more frames than the budget allows, then retry legally.
    OverBudget,
    /// Keep zooming on wrong segments until the call limit.
    NeverCorrect,
}

/// A deliberately flawed first request, recognized from the observation and
/// followed by a corrected one.
#[derive(Debug, Clone, Default)]
pub struct SelfRefine {
    pub misstep: Misstep,
}

impl SelfRefine {
    pub fn new(misstep: Misstep) -> Self {
        Self { misstep }
    }
}

impl Policy for SelfRefine {
    fn name(&self) -> &str {
        "self_refine"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let uncovered = ctx.uncovered_evidence();
        if uncovered.is_empty() || ctx.calls_left() == 0 {
            return Ok(final_answer(ctx));
        }
        let Some(plan) = direct_zoom(ctx, &uncovered) else {
            return Ok(final_answer(ctx));
        };
        let made = ctx.tool_calls_made();
        let misplace = made == 0 || self.misstep == Misstep::NeverCorrect;
        if misplace {
            let (call, think) = match self.misstep {
                Misstep::OverBudget if made == 0 => {
                    let over = ctx.budget.per_call_budget + 4;
                    let call = ToolCall::new(plan.call.t_start, plan.call.t_end, over as f64 / (plan.call.t_end - plan.call.t_start));
                    (call, format!("I want a dense look at {}s-{}s.", fmt_secs(call.t_start), fmt_secs(call.t_end)))
                }
                _ => {
                    let call = misplaced_window(ctx, &plan.call, made);
                    let think = format!(
                        "{} probably happens around {}s-{}s. Let me zoom there.",
                        subject_phrase(ctx.question),
                        fmt_secs(call.t_start),
                        fmt_secs(call.t_end)
                    );
                    (call, think)
                }
            };
            if let (Some(attempt), 0) = (ctx.reflection, made) {
                let think = format!(
                    "\nThe previous tool call was incorrect because {}.\n{think}\n",
                    explain_flaw(attempt, ctx.question, ctx.video)
                );
                return Ok(zoom_turn(&think, &call));
            }
            return Ok(zoom_turn(&think, &call));
        }
        let flaw = match ctx.last_tool_response().map(|o| o.is_error()) {
            Some(true) => "it was rejected by the environment",
            _ => "it focused on the wrong time segment",
        };
        let think = format!(
            "The previous tool call was incorrect because {flaw}. Now I will zoom in to inspect {} between {}s and {}s at {} fps.",
            subject_phrase(ctx.question),
            fmt_secs(plan.call.t_start),
            fmt_secs(plan.call.t_end),
            plan.call.fps
        );
        Ok(zoom_turn(&think, &plan.call))
    }
}

/// Answers from the glance alone.
#[derive(Debug, Clone, Default)]
pub struct NoTool;

impl Policy for NoTool {
    fn name(&self) -> &str {
        "no_tool"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let (label, informed) = answer_or_guess(ctx.observed_frames(), ctx.question);
        Ok(answer_turn(&describe_answer(ctx.question, &label, informed), &label))
    }
}

/// Never answers: every turn requests a full-budget clip at a pseudo-random
/// place, or more than the budget when `over_budget` is set.
#[derive(Debug, Clone, Default)]
pub struct AlwaysZoom {
    pub seed: u64,
    pub over_budget: bool,
}

impl Policy for AlwaysZoom {
    fn name(&self) -> &str {
        "always_zoom"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let h = splitmix64(self.seed ^ ctx.video.background_seed ^ (ctx.policy_turns() as u64).wrapping_mul(0x9E37));
        const FPS_LADDER: [f64; 6] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
        let fps = FPS_LADDER[(h % FPS_LADDER.len() as u64) as usize];
        let frames = ctx.budget.per_call_budget + if self.over_budget { 1 + h % 8 } else { 0 };
        let len = (frames as f64 / fps).min(ctx.video.duration);
        let room = (ctx.video.duration - len).max(0.0);
        let start = room * ((h >> 16) % 10_000) as f64 / 10_000.0;
        let call = ToolCall::new(start, start + len, fps);
        Ok(zoom_turn("More frames always help.", &call))
    }
}

/// Answers a pseudo-random choice without looking.
#[derive(Debug, Clone, Default)]
pub struct RandomAnswer {
    pub seed: u64,
}

impl Policy for RandomAnswer {
    fn name(&self) -> &str {
        "random_answer"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let choices = &ctx.question.choices;
        let h = splitmix64(self.seed ^ ctx.video.background_seed);
        let label = &choices[(h % choices.len().max(1) as u64) as usize].label;
        Ok(answer_turn("I will pick one of the options.", label))
    }
}

/// Replays fixed turn texts in order; answers with the last one when it runs
/// out. Useful for malformed-output and golden tests.
#[derive(Debug, Clone, Default)]
pub struct Scripted {
    pub turns: Vec<String>,
}

impl Policy for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let i = ctx.policy_turns().min(self.turns.len().saturating_sub(1));
        Ok(PolicyOutput::new(self.turns.get(i).cloned().unwrap_or_default()))
    }
}

// ---------------------------------------------------------------------------
// Remote chat-completions policy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Name of the environment variable that holds the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Requests allowed in flight at once, shared by every episode using this
    /// policy.
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 1.0,
            max_tokens: None,
            api_key_env: "GLANCE_ZOOM_API_KEY".into(),
            timeout_secs: 120,
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8000,
            max_in_flight: 8,
        }
    }
}

struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.cap {
            used = self.cv.wait(used).unwrap();
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

/// Forwards the conversation to an OpenAI-compatible endpoint and returns the
/// assistant text verbatim.
pub struct RemotePolicy {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    in_flight: Arc<InFlight>,
}

enum Attempt {
    Done(String),
    Retry(PolicyError),
    Fail(PolicyError),
}

impl RemotePolicy {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Arc::new(InFlight {
            cap: cfg.max_in_flight.max(1),
            used: Mutex::new(0),
            cv: Condvar::new(),
        });
        Self { cfg, agent, in_flight }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// Chat messages for a context: system prompt, then the history with
    /// observations as user turns and policy turns as assistant turns.
    pub fn messages(ctx: &PolicyContext<'_>) -> Vec<serde_json::Value> {
        let mut messages = vec![json!({"role": "system", "content": ctx.system_prompt})];
        for entry in ctx.history {
            let role = match entry.role {
                Role::Policy => "assistant",
                Role::Observation => "user",
            };
            messages.push(json!({"role": role, "content": entry.text}));
        }
        messages
    }

    fn request_body(&self, ctx: &PolicyContext<'_>) -> serde_json::Value {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": Self::messages(ctx),
            "temperature": self.cfg.temperature,
        });
        if let Some(max_tokens) = self.cfg.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    fn attempt(&self, key: &str, body: &serde_json::Value) -> Attempt {
        let _permit = self.in_flight.acquire();
        let result = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .header("Content-Type", "application/json")
            .send_json(body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(PolicyError::Timeout),
            Err(e) => return Attempt::Retry(PolicyError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(PolicyError::Timeout),
            Err(e) => return Attempt::Retry(PolicyError::Transport(e.to_string())),
        };
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(PolicyError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => return Attempt::Retry(PolicyError::Transport(format!("HTTP {status}"))),
            _ => return Attempt::Fail(PolicyError::Transport(format!("HTTP {status}: {text}"))),
        }
        let parsed: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Attempt::Fail(PolicyError::BadResponse(e.to_string())),
        };
        match parsed["choices"][0]["message"]["content"].as_str() {
            Some(content) => Attempt::Done(content.to_string()),
            None => Attempt::Fail(PolicyError::BadResponse("missing choices[0].message.content".into())),
        }
    }
}

impl Policy for RemotePolicy {
    fn name(&self) -> &str {
        "remote"
    }

    fn respond(&self, ctx: &PolicyContext<'_>) -> Result<PolicyOutput, PolicyError> {
        let key = std::env::var(&self.cfg.api_key_env)
            .map_err(|_| PolicyError::Auth(format!("environment variable {} is not set", self.cfg.api_key_env)))?;
        let body = self.request_body(ctx);
        let mut backoff = self.cfg.initial_backoff_ms;
        let mut attempt = 0;
        loop {
            match self.attempt(&key, &body) {
                Attempt::Done(text) => return Ok(PolicyOutput::new(text)),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.cfg.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("remote policy attempt {} failed: {e}; retrying in {backoff} ms", attempt + 1);
                    std::thread::sleep(Duration::from_millis(backoff));
                    backoff = (backoff * 2).min(self.cfg.max_backoff_ms);
                    attempt += 1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Selection by name

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    DirectHit,
    Progressive,
    SelfRefine {
        #[serde(default)]
        misstep: Misstep,
    },
    NoTool,
    AlwaysZoom {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        over_budget: bool,
    },
    RandomAnswer {
        #[serde(default)]
        seed: u64,
    },
    Remote(RemoteConfig),
}

impl PolicySpec {
    /// Parse a short name such as `direct_hit` or `self_refine`.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name.replace('-', "_").as_str() {
            "direct_hit" => Self::DirectHit,
            "progressive" => Self::Progressive,
            "self_refine" => Self::SelfRefine {
                misstep: Misstep::WrongSegment,
            },
            "no_tool" => Self::NoTool,
            "always_zoom" => Self::AlwaysZoom {
                seed: 0,
                over_budget: false,
            },
            "random_answer" | "random" => Self::RandomAnswer { seed: 0 },
            "remote" => Self::Remote(RemoteConfig::default()),
            _ => return None,
        })
    }

    pub fn build(&self) -> Box<dyn Policy> {
        match self {
            Self::DirectHit => Box::new(DirectHit),
            Self::Progressive => Box::new(Progressive),
            Self::SelfRefine { misstep } => Box::new(SelfRefine::new(*misstep)),
            Self::NoTool => Box::new(NoTool),
            Self::AlwaysZoom { seed, over_budget } => Box::new(AlwaysZoom {
                seed: *seed,
                over_budget: *over_budget,
            }),
            Self::RandomAnswer { seed } => Box::new(RandomAnswer { seed: *seed }),
            Self::Remote(cfg) => Box::new(RemotePolicy::new(cfg.clone())),
        }
    }
}
