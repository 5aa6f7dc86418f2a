//! The glance, zoom*, answer state machine.
//!
//! An episode opens with a uniform glance plus the question, then asks the
//! policy for turns. Tool calls are served by [`zoom`]; grammar violations and
//! rejected calls come back as error observations and the episode continues.
//! Observation turns are never trainable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{FailedAttempt, HistoryEntry, Policy, PolicyContext, PolicyError, Role};
use crate::prompts::{reasoning_prompt, reflection_prompt};
use crate::protocol::{extract_answer, parse_turn, Action, MalformedReason, ParsedTurn, ToolCall};
use crate::reward::RewardBreakdown;
use crate::videoworld::{uniform_glance, zoom, BudgetConfig, Observation, ObservationSource, Question, Task, ZoomError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub trainable: bool,
    pub frames_delivered: u64,
}

impl Turn {
    pub fn policy(text: impl Into<String>) -> Self {
        Self {
            role: Role::Policy,
            text: text.into(),
            trainable: true,
            frames_delivered: 0,
        }
    }

    pub fn observation(text: impl Into<String>, frames_delivered: u64) -> Self {
        Self {
            role: Role::Observation,
            text: text.into(),
            trainable: false,
            frames_delivered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TerminalReason {
    Answered,
    MaxTurns,
    MalformedLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OnMalformed {
    /// Reply with an error message and let the policy try again.
    #[default]
    ErrorObservation,
    /// End the episode at the first malformed turn.
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub budget: BudgetConfig,
    /// Policy turns allowed, the answer turn included.
    pub max_turns: u32,
    pub on_malformed: OnMalformed,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            budget: BudgetConfig::default(),
            max_turns: 5,
            on_malformed: OnMalformed::default(),
        }
    }
}

/// A tool call as served by the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call: ToolCall,
    pub frames_delivered: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub question: Question,
    pub turns: Vec<Turn>,
    /// Normalized answer label; `None` unless the episode ended with an answer.
    pub final_answer: Option<String>,
    /// Tool calls that reached the environment, rejected ones included.
    pub tool_calls_made: u64,
    /// Tool calls that delivered at least one frame.
    pub successful_tool_calls: u64,
    pub calls: Vec<CallRecord>,
    pub total_frames: u64,
    pub terminal_reason: TerminalReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
}

impl Trajectory {
    /// Re-parse every policy turn.
    pub fn parsed_policy_turns(&self) -> Vec<ParsedTurn> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Policy)
            .map(|t| parse_turn(&t.text))
            .collect()
    }

    /// Concatenation of the trainable turns' text.
    pub fn trainable_text(&self) -> String {
        self.turns.iter().filter(|t| t.trainable).map(|t| t.text.as_str()).collect()
    }

    /// Error observations the policy recovered from before answering.
    pub fn error_recoveries(&self) -> usize {
        if self.terminal_reason != TerminalReason::Answered {
            return 0;
        }
        self.calls.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Frames delivered over the whole episode, glance included.
pub fn total_frames(traj: &Trajectory) -> u64 {
    traj.turns
        .iter()
        .filter(|t| t.role == Role::Observation)
        .map(|t| t.frames_delivered)
        .sum()
}

/// Something the environment rejects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvError {
    Zoom(ZoomError),
    Format(MalformedReason),
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::Zoom(z) => z.code(),
            EnvError::Format(m) => m.code(),
        }
    }
}

pub fn error_message(err: &EnvError) -> String {
    match err {
        EnvError::Zoom(ZoomError::BudgetExceeded { requested, budget }) => {
            format!("Error: requested {requested} frames; (end_sec - start_sec) * fps <= {budget}.")
        }
        EnvError::Zoom(ZoomError::OutOfRange) => "Error: segment exceeds video duration.".into(),
        EnvError::Zoom(ZoomError::EmptySegment) => "Error: segment end must be greater than segment start.".into(),
        EnvError::Zoom(ZoomError::FpsTooHigh { native_fps }) => {
            format!("Error: requested fps exceeds the native frame rate of {native_fps} fps.")
        }
        EnvError::Format(MalformedReason::BadJson) => "Error: could not parse video_zoom JSON.".into(),
        EnvError::Format(MalformedReason::MissingThink) => "Error: wrap your reasoning in <think></think> tags.".into(),
        EnvError::Format(MalformedReason::BothActions) => {
            "Error: DO NOT include <answer> tags in a turn that calls <video_zoom>.".into()
        }
        EnvError::Format(MalformedReason::MultipleActions) => {
            "Error: give at most one <video_zoom> request or one <answer> per turn.".into()
        }
        EnvError::Format(MalformedReason::NoAction) => {
            "Error: end the turn with a <video_zoom> request or an <answer>.".into()
        }
        EnvError::Format(MalformedReason::UnclosedTag) => "Error: unbalanced or unclosed tag.".into(),
    }
}

/// Observation turn reporting a rejected request. Delivers no frames.
pub fn error_observation(err: &EnvError) -> Turn {
    Turn::observation(error_message(err), 0)
}

fn render_frames(header: String, obs: &Observation) -> String {
    let mut out = header;
    for f in &obs.frames {
        out.push('\n');
        out.push_str(&f.render());
    }
    out
}

/// Opening user message: the glance frames and the question.
pub fn render_opening(task: &Task, glance: &Observation) -> String {
    let header = format!(
        "Video duration: {:.2}s. {} frames sampled uniformly:",
        task.video.duration,
        glance.frames.len()
    );
    format!("{}\n{}", render_frames(header, glance), task.question.render())
}

fn render_clip(call: &ToolCall, obs: &Observation) -> String {
    let header = format!(
        "Clip [{:.2}s, {:.2}s] at {} fps, {} frames:",
        call.t_start,
        call.t_end,
        call.fps,
        obs.frames.len()
    );
    render_frames(header, obs)
}

fn cap_notice(n: u64) -> String {
    format!("\nYou have used all {n} tool calls. Do not call the tool again; give your final answer inside <answer></answer>.")
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("POLICY_FAILURE on task {task_id}: {source}")]
    PolicyFailure {
        task_id: String,
        /// Turns recorded before the failure; not usable for training.
        partial: Box<Trajectory>,
        #[source]
        source: PolicyError,
    },
}

/// How the policy is prompted.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum EpisodeMode {
    #[default]
    Standard,
    /// The policy corrects a failed attempt; it gets the reflection prompt and
    /// the attempt appended to the opening message. The recorded trajectory
    /// keeps the standard opening.
    Reflection(FailedAttempt),
}

pub fn run_episode<P: Policy + ?Sized>(policy: &P, task: &Task, cfg: &EpisodeConfig) -> Result<Trajectory, EpisodeError> {
    run_episode_with(policy, task, cfg, &EpisodeMode::Standard)
}

pub fn run_episode_with<P: Policy + ?Sized>(
    policy: &P,
    task: &Task,
    cfg: &EpisodeConfig,
    mode: &EpisodeMode,
) -> Result<Trajectory, EpisodeError> {
    let budget = cfg.budget;
    let glance = uniform_glance(&task.video, budget.glance_frames);
    let opening = render_opening(task, &glance);
    let (system_prompt, reflection, first_message) = match mode {
        EpisodeMode::Standard => (reasoning_prompt(budget.per_call_budget), None, opening.clone()),
        EpisodeMode::Reflection(attempt) => (
            reflection_prompt(budget.per_call_budget),
            Some(attempt),
            format!("{opening}\n{}", attempt.render()),
        ),
    };

    let mut traj = Trajectory {
        task_id: task.task_id.clone(),
        question: task.question.clone(),
        turns: vec![Turn::observation(opening, glance.frames.len() as u64)],
        final_answer: None,
        tool_calls_made: 0,
        successful_tool_calls: 0,
        calls: Vec::new(),
        total_frames: 0,
        terminal_reason: TerminalReason::MaxTurns,
        reward: None,
    };
    let mut history = vec![HistoryEntry {
        role: Role::Observation,
        text: first_message,
        observation: Some(glance),
        tool_call: None,
    }];

    for _ in 0..cfg.max_turns.max(1) {
        let ctx = PolicyContext {
            system_prompt: &system_prompt,
            history: &history,
            question: &task.question,
            video: &task.video,
            budget: &budget,
            reflection,
        };
        let output = match policy.respond(&ctx) {
            Ok(o) => o,
            Err(source) => {
                traj.total_frames = total_frames(&traj);
                return Err(EpisodeError::PolicyFailure {
                    task_id: task.task_id.clone(),
                    partial: Box::new(traj),
                    source,
                });
            }
        };
        let parsed = parse_turn(&output.raw_text);
        traj.turns.push(Turn::policy(output.raw_text.clone()));
        history.push(HistoryEntry {
            role: Role::Policy,
            text: output.raw_text,
            observation: None,
            tool_call: None,
        });

        match parsed.action {
            Action::Answer(text) => {
                traj.final_answer = Some(extract_answer(&text));
                traj.terminal_reason = TerminalReason::Answered;
                break;
            }
            Action::ToolUse(call) => {
                if traj.tool_calls_made >= budget.max_tool_calls {
                    traj.terminal_reason = TerminalReason::MaxTurns;
                    break;
                }
                traj.tool_calls_made += 1;
                let obs = zoom(&task.video, &call, &budget);
                let delivered = obs.frames.len() as u64;
                let mut text = match &obs.source {
                    ObservationSource::Error(e) => error_message(&EnvError::Zoom(*e)),
                    _ => render_clip(&call, &obs),
                };
                if traj.tool_calls_made == budget.max_tool_calls {
                    text.push_str(&cap_notice(budget.max_tool_calls));
                }
                traj.calls.push(CallRecord {
                    call,
                    frames_delivered: delivered,
                    error: match &obs.source {
                        ObservationSource::Error(e) => Some(e.code().to_string()),
                        _ => None,
                    },
                });
                if delivered > 0 {
                    traj.successful_tool_calls += 1;
                }
                traj.turns.push(Turn::observation(text.clone(), delivered));
                history.push(HistoryEntry {
                    role: Role::Observation,
                    text,
                    observation: Some(obs),
                    tool_call: Some(call),
                });
            }
            Action::Malformed(reason) => {
                if cfg.on_malformed == OnMalformed::Terminate {
                    traj.terminal_reason = TerminalReason::MalformedLimit;
                    break;
                }
                let turn = error_observation(&EnvError::Format(reason));
                history.push(HistoryEntry {
                    role: Role::Observation,
                    text: turn.text.clone(),
                    observation: None,
                    tool_call: None,
                });
                traj.turns.push(turn);
            }
        }
    }

    traj.total_frames = total_frames(&traj);
    Ok(traj)
}

/// Run one episode per task on a pool of `jobs` threads (0 = rayon default).
/// Results come back in task order.
pub fn run_batch<P: Policy + ?Sized>(
    policy: &P,
    tasks: &[Task],
    cfg: &EpisodeConfig,
    jobs: usize,
) -> Vec<Result<Trajectory, EpisodeError>> {
    let run = || tasks.par_iter().map(|t| run_episode(policy, t, cfg)).collect();
    if jobs == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}
