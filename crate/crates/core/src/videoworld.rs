//! Synthetic long videos.
//!
//! A [`SyntheticVideo`] is an event timeline. Frames carry symbolic content
//! tokens instead of pixels: a frame at time `t` lists the background scene and
//! every event whose span `[time, time + span)` contains `t`. Questions are
//! answerable exactly when the frames observed cover the decisive events.

use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{requested_frames, ToolCall};

pub const CHOICE_LABELS: [&str; 4] = ["A", "B", "C", "D"];

const NEEDLE_SUBJECTS: &[&str] = &["umbrella", "kite", "balloon", "lantern", "scarf", "hat", "bicycle", "suitcase"];
const COLORS: &[&str] = &["red", "blue", "green", "yellow", "purple", "orange", "white", "black"];
const DISTRACTOR_OBJECTS: &[&str] = &["car", "dog", "chair", "tree", "bus", "cat", "lamp", "bench", "boat", "sign"];
const REPEATED_ACTIONS: &[&str] = &["jump", "clap", "wave", "knock", "bounce", "nod"];
const ORDERED_ACTIONS: &[&str] = &["open_door", "pour_water", "light_candle", "ring_bell", "drop_cup", "close_window"];
const SCENES: &[&str] = &["kitchen", "street", "park", "office", "beach", "station", "garden", "hall"];
const SCENE_LENGTH_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Distractor,
    Needle,
    Repetition,
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub span: f64,
    pub kind: EventKind,
    pub payload: String,
}

impl Event {
    pub fn end(&self) -> f64 {
        self.time + self.span
    }

    pub fn covers(&self, t: f64) -> bool {
        self.time <= t && t < self.end()
    }

    pub fn center(&self) -> f64 {
        self.time + self.span / 2.0
    }

    fn overlaps(&self, other: &Event) -> bool {
        self.time < other.end() && other.time < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub duration: f64,
    pub native_fps: f64,
    pub events: Vec<Event>,
    pub background_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Needle,
    Count,
    Order,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Needle => "NEEDLE",
            TaskKind::Count => "COUNT",
            TaskKind::Order => "ORDER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub choices: Vec<Choice>,
    pub gold: String,
    pub kind: TaskKind,
    pub min_detect_fps: f64,
    /// Content tokens the question is about: the needle subject, the repeated
    /// action, or the two ordered actions.
    pub targets: Vec<String>,
}

impl Question {
    pub fn label_for(&self, text: &str) -> Option<&str> {
        self.choices.iter().find(|c| c.text == text).map(|c| c.label.as_str())
    }

    pub fn text_for(&self, label: &str) -> Option<&str> {
        self.choices.iter().find(|c| c.label == label).map(|c| c.text.as_str())
    }

    /// Question plus one `L: text` line per choice.
    pub fn render(&self) -> String {
        let mut out = format!("Question: {}\nChoices:", self.text);
        for c in &self.choices {
            out.push_str(&format!("\n{}: {}", c.label, c.text));
        }
        out
    }
}

/// A video paired with its question, as stored in a task corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub video: SyntheticVideo,
    pub question: Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestamp: f64,
    pub tokens: Vec<String>,
}

impl Frame {
    pub fn render(&self) -> String {
        format!("frame t={:.2}s: [{}]", self.timestamp, self.tokens.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ZoomError {
    BudgetExceeded { requested: u64, budget: u64 },
    OutOfRange,
    EmptySegment,
    FpsTooHigh { native_fps: f64 },
}

impl ZoomError {
    pub fn code(&self) -> &'static str {
        match self {
            ZoomError::BudgetExceeded { .. } => "BUDGET_EXCEEDED",
            ZoomError::OutOfRange => "OUT_OF_RANGE",
            ZoomError::EmptySegment => "EMPTY_SEGMENT",
            ZoomError::FpsTooHigh { .. } => "FPS_TOO_HIGH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObservationSource {
    Glance,
    Zoom,
    Error(ZoomError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frames: Vec<Frame>,
    pub source: ObservationSource,
}

impl Observation {
    pub fn is_error(&self) -> bool {
        matches!(self.source, ObservationSource::Error(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetConfig {
    pub glance_frames: u64,
    /// Maximum frames per zoom call.
    pub per_call_budget: u64,
    pub max_tool_calls: u64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            glance_frames: 64,
            per_call_budget: 16,
            max_tool_calls: 4,
        }
    }
}

impl BudgetConfig {
    pub fn total_cap(&self) -> u64 {
        self.glance_frames + self.max_tool_calls * self.per_call_budget
    }

    pub fn is_valid(&self) -> bool {
        self.glance_frames > 0 && self.per_call_budget > 0 && self.max_tool_calls > 0
    }
}

/// Relative weights of the three task kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindMix {
    pub needle: f64,
    pub count: f64,
    pub order: f64,
}

impl KindMix {
    pub fn only(kind: TaskKind) -> Self {
        let mut mix = Self {
            needle: 0.0,
            count: 0.0,
            order: 0.0,
        };
        match kind {
            TaskKind::Needle => mix.needle = 1.0,
            TaskKind::Count => mix.count = 1.0,
            TaskKind::Order => mix.order = 1.0,
        }
        mix
    }

    fn pick(&self, rng: &mut impl Rng) -> TaskKind {
        let total = self.needle + self.count + self.order;
        let x = rng.random::<f64>() * total;
        if x < self.needle {
            TaskKind::Needle
        } else if x < self.needle + self.count {
            TaskKind::Count
        } else {
            TaskKind::Order
        }
    }
}

impl Default for KindMix {
    fn default() -> Self {
        Self::only(TaskKind::Needle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub duration: f64,
    pub n_distractors: usize,
    pub kind_mix: KindMix,
    /// Span of a needle event, and of each ordered action.
    pub needle_span: f64,
    /// Inclusive range for the number of repetitions in a COUNT task.
    pub count_reps: (u32, u32),
    /// Repetition rate of a COUNT task; each repetition lasts `1 / rate`.
    pub count_rate_hz: f64,
    /// Largest offset, in multiples of `needle_span`, between two ordered
    /// actions.
    pub order_max_gap: u32,
    pub native_fps: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            duration: 3600.0,
            n_distractors: 24,
            kind_mix: KindMix::default(),
            needle_span: 2.0,
            count_reps: (3, 8),
            count_rate_hz: 1.0,
            order_max_gap: 8,
            native_fps: 30.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("INVALID_PARAMS: {0}")]
    InvalidParams(String),
}

fn invalid(msg: impl Into<String>) -> GenError {
    GenError::InvalidParams(msg.into())
}

fn centis(x: f64) -> f64 {
    (x * 100.0).floor() / 100.0
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl GenParams {
    fn validate(&self) -> Result<(), GenError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        if !(self.native_fps.is_finite() && self.native_fps > 0.0) {
            return Err(invalid("native_fps must be positive"));
        }
        let mix = self.kind_mix;
        if [mix.needle, mix.count, mix.order].iter().any(|w| !w.is_finite() || *w < 0.0)
            || mix.needle + mix.count + mix.order <= 0.0
        {
            return Err(invalid("kind mix weights must be non-negative with a positive sum"));
        }
        if !(self.needle_span > 0.0 && self.needle_span < self.duration) {
            return Err(invalid("needle_span must lie in (0, duration)"));
        }
        if 1.0 / self.needle_span > self.native_fps {
            return Err(invalid("needle_span is shorter than one native frame"));
        }
        if mix.count > 0.0 {
            let (lo, hi) = self.count_reps;
            if lo == 0 || lo > hi {
                return Err(invalid("count_reps must be a non-empty range of positive counts"));
            }
            if !(self.count_rate_hz > 0.0 && self.count_rate_hz <= self.native_fps) {
                return Err(invalid("count_rate_hz must lie in (0, native_fps]"));
            }
            if hi as f64 / self.count_rate_hz > self.duration {
                return Err(invalid("repetitions do not fit in the video"));
            }
        }
        if mix.order > 0.0 {
            if self.order_max_gap == 0 {
                return Err(invalid("order_max_gap must be at least 1"));
            }
            if (self.order_max_gap + 1) as f64 * self.needle_span > self.duration {
                return Err(invalid("ordered actions do not fit in the video"));
            }
        }
        Ok(())
    }
}

fn shuffled_choices(rng: &mut impl Rng, gold_text: String, mut others: Vec<String>) -> (Vec<Choice>, String) {
    others.truncate(CHOICE_LABELS.len() - 1);
    others.push(gold_text.clone());
    others.shuffle(rng);
    let choices: Vec<Choice> = CHOICE_LABELS
        .iter()
        .zip(others)
        .map(|(l, t)| Choice {
            label: l.to_string(),
            text: t,
        })
        .collect();
    let gold = choices.iter().find(|c| c.text == gold_text).unwrap().label.clone();
    (choices, gold)
}

fn order_text(first: &str, second: &str) -> String {
    format!("{first} before {second}")
}

/// Generate one video with its question. Deterministic in `seed`.
pub fn generate(params: &GenParams, seed: u64) -> Result<(SyntheticVideo, Question), GenError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = params.duration;
    let kind = params.kind_mix.pick(&mut rng);
    let mut events = Vec::new();

    let question = match kind {
        TaskKind::Needle => {
            let subject = *NEEDLE_SUBJECTS.choose(&mut rng).unwrap();
            let colors: Vec<&str> = COLORS.choose_multiple(&mut rng, 4).copied().collect();
            let span = params.needle_span;
            let time = centis(rng.random_range(0.0..=(duration - span)));
            events.push(Event {
                time,
                span,
                kind: EventKind::Needle,
                payload: format!("{subject}:{}", colors[0]),
            });
            let (choices, gold) = shuffled_choices(
                &mut rng,
                colors[0].to_string(),
                colors[1..].iter().map(|c| c.to_string()).collect(),
            );
            Question {
                text: format!("What color is the {subject} that briefly appears in the video?"),
                choices,
                gold,
                kind,
                min_detect_fps: 1.0 / span,
                targets: vec![subject.to_string()],
            }
        }
        TaskKind::Count => {
            let action = *REPEATED_ACTIONS.choose(&mut rng).unwrap();
            let (lo, hi) = params.count_reps;
            let reps = rng.random_range(lo..=hi);
            let span = 1.0 / params.count_rate_hz;
            let start = centis(rng.random_range(0.0..=(duration - reps as f64 * span)));
            for k in 0..reps {
                events.push(Event {
                    time: start + k as f64 * span,
                    span,
                    kind: EventKind::Repetition,
                    payload: format!("{action}#{}", k + 1),
                });
            }
            let base = reps.saturating_sub(rng.random_range(0..4)).max(1);
            let gold_text = reps.to_string();
            let others = (base..base + 4).filter(|n| *n != reps).map(|n| n.to_string()).collect();
            let (choices, gold) = shuffled_choices(&mut rng, gold_text, others);
            Question {
                text: format!("How many times does the person {} in the video?", action.replace('_', " ")),
                choices,
                gold,
                kind,
                min_detect_fps: params.count_rate_hz,
                targets: vec![action.to_string()],
            }
        }
        TaskKind::Order => {
            let picked: Vec<&str> = ORDERED_ACTIONS.choose_multiple(&mut rng, 2).copied().collect();
            let (x, y) = (picked[0], picked[1]);
            let span = params.needle_span;
            let gap = rng.random_range(1..=params.order_max_gap) as f64 * span;
            let first_time = centis(rng.random_range(0.0..=(duration - gap - span)));
            let x_first = rng.random_bool(0.5);
            let (first, second) = if x_first { (x, y) } else { (y, x) };
            events.push(Event {
                time: first_time,
                span,
                kind: EventKind::Action,
                payload: first.to_string(),
            });
            events.push(Event {
                time: first_time + gap,
                span,
                kind: EventKind::Action,
                payload: second.to_string(),
            });
            let gold_text = order_text(first, second);
            let others = vec![
                order_text(second, first),
                format!("{x} and {y} at the same time"),
                format!("neither {x} nor {y}"),
            ];
            let (choices, gold) = shuffled_choices(&mut rng, gold_text, others);
            Question {
                text: format!(
                    "In which order do the events '{}' and '{}' happen?",
                    x.replace('_', " "),
                    y.replace('_', " ")
                ),
                choices,
                gold,
                kind,
                min_detect_fps: 1.0 / span,
                targets: vec![x.to_string(), y.to_string()],
            }
        }
    };

    let max_span = (duration / 4.0).min(30.0).max(1.0_f64.min(duration));
    let mut distractors: Vec<Event> = Vec::with_capacity(params.n_distractors);
    for _ in 0..params.n_distractors {
        let mut placed = false;
        for _attempt in 0..1000 {
            let span = centis(rng.random_range((max_span / 30.0)..=max_span)).max(0.01);
            if span >= duration {
                continue;
            }
            let time = centis(rng.random_range(0.0..=(duration - span)));
            let object = *DISTRACTOR_OBJECTS.choose(&mut rng).unwrap();
            let color = *COLORS.choose(&mut rng).unwrap();
            let candidate = Event {
                time,
                span,
                kind: EventKind::Distractor,
                payload: format!("{object}:{color}"),
            };
            if distractors.iter().all(|d| !d.overlaps(&candidate)) {
                distractors.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(invalid(format!(
                "cannot place {} non-overlapping distractors in {duration} s",
                params.n_distractors
            )));
        }
    }
    events.extend(distractors);
    events.sort_by(|a, b| a.time.total_cmp(&b.time));

    let video = SyntheticVideo {
        duration,
        native_fps: params.native_fps,
        events,
        background_seed: rng.random(),
    };
    Ok((video, question))
}

/// Generate `count` tasks. Task `i` uses a seed derived from `(seed, i)`.
pub fn generate_corpus(params: &GenParams, count: usize, seed: u64) -> Result<Vec<Task>, GenError> {
    (0..count)
        .map(|i| {
            let task_seed = splitmix64(seed ^ splitmix64(i as u64));
            generate(params, task_seed).map(|(video, question)| Task {
                task_id: format!("s{seed}-{i:06}"),
                video,
                question,
            })
        })
        .collect()
}

impl SyntheticVideo {
    pub fn scene_at(&self, t: f64) -> &'static str {
        let block = (t.max(0.0) / SCENE_LENGTH_S).floor() as u64;
        let h = splitmix64(self.background_seed ^ splitmix64(block));
        SCENES[(h % SCENES.len() as u64) as usize]
    }

    pub fn frame_at(&self, t: f64) -> Frame {
        let mut tokens = vec![format!("scene:{}", self.scene_at(t))];
        tokens.extend(self.events.iter().filter(|e| e.covers(t)).map(|e| e.payload.clone()));
        Frame { timestamp: t, tokens }
    }

    /// The events a question is about.
    pub fn evidence(&self, question: &Question) -> Vec<&Event> {
        self.events
            .iter()
            .filter(|e| match question.kind {
                TaskKind::Needle => {
                    e.kind == EventKind::Needle
                        && e.payload.split(':').next() == question.targets.first().map(String::as_str)
                }
                TaskKind::Count => {
                    e.kind == EventKind::Repetition
                        && e.payload.split('#').next() == question.targets.first().map(String::as_str)
                }
                TaskKind::Order => e.kind == EventKind::Action && question.targets.contains(&e.payload),
            })
            .collect()
    }
}

/// `n` frames at the midpoints of `n` equal slices of the video.
pub fn uniform_glance(video: &SyntheticVideo, n: u64) -> Observation {
    let n = n.max(1);
    let step = video.duration / n as f64;
    Observation {
        frames: (0..n).map(|i| video.frame_at((i as f64 + 0.5) * step)).collect(),
        source: ObservationSource::Glance,
    }
}

fn zoom_frames(video: &SyntheticVideo, call: &ToolCall, budget: &BudgetConfig) -> Result<Vec<Frame>, ZoomError> {
    // written so that NaN endpoints land here too
    let nonempty = call.t_end.partial_cmp(&call.t_start) == Some(std::cmp::Ordering::Greater);
    if !nonempty || !(call.fps.is_finite() && call.fps > 0.0) {
        return Err(ZoomError::EmptySegment);
    }
    if call.t_start < 0.0 || call.t_end > video.duration {
        return Err(ZoomError::OutOfRange);
    }
    if call.fps > video.native_fps {
        return Err(ZoomError::FpsTooHigh {
            native_fps: video.native_fps,
        });
    }
    let requested = requested_frames(call);
    if requested > budget.per_call_budget {
        return Err(ZoomError::BudgetExceeded {
            requested,
            budget: budget.per_call_budget,
        });
    }
    Ok((0..requested)
        .map(|k| {
            let t = (call.t_start + (k as f64 + 0.5) / call.fps).min(call.t_end);
            video.frame_at(t)
        })
        .collect())
}

/// Serve a high-fps clip. Violations come back as an error observation.
pub fn zoom(video: &SyntheticVideo, call: &ToolCall, budget: &BudgetConfig) -> Observation {
    match zoom_frames(video, call, budget) {
        Ok(frames) => Observation {
            frames,
            source: ObservationSource::Zoom,
        },
        Err(e) => Observation {
            frames: Vec::new(),
            source: ObservationSource::Error(e),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameAnswer {
    Choice(String),
    Abstain,
}

impl FrameAnswer {
    pub fn label(&self) -> Option<&str> {
        match self {
            FrameAnswer::Choice(l) => Some(l),
            FrameAnswer::Abstain => None,
        }
    }
}

fn nearest_count_label(question: &Question, count: u32) -> Option<String> {
    question
        .choices
        .iter()
        .filter_map(|c| c.text.parse::<u32>().ok().map(|n| (n.abs_diff(count), n, &c.label)))
        .min_by_key(|(d, n, _)| (*d, *n))
        .map(|(_, _, l)| l.clone())
}

/// What a set of frames reveals about a question.
///
/// NEEDLE needs one frame inside the needle span. COUNT reports the number of
/// distinct repetitions seen, so partial coverage undercounts. ORDER needs both
/// actions seen.
pub fn answer_from_frames<'a>(frames: impl IntoIterator<Item = &'a Frame>, question: &Question) -> FrameAnswer {
    let target = |i: usize| question.targets.get(i).map(String::as_str).unwrap_or("");
    match question.kind {
        TaskKind::Needle => {
            let prefix = format!("{}:", target(0));
            for frame in frames {
                if let Some(attr) = frame.tokens.iter().find_map(|t| t.strip_prefix(&prefix)) {
                    if let Some(label) = question.label_for(attr) {
                        return FrameAnswer::Choice(label.to_string());
                    }
                }
            }
            FrameAnswer::Abstain
        }
        TaskKind::Count => {
            let prefix = format!("{}#", target(0));
            let mut seen: Vec<&str> = frames
                .into_iter()
                .flat_map(|f| f.tokens.iter())
                .filter_map(|t| t.strip_prefix(&prefix))
                .collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.is_empty() {
                return FrameAnswer::Abstain;
            }
            nearest_count_label(question, seen.len() as u32).map_or(FrameAnswer::Abstain, FrameAnswer::Choice)
        }
        TaskKind::Order => {
            let (x, y) = (target(0), target(1));
            let mut first_x: Option<f64> = None;
            let mut first_y: Option<f64> = None;
            for frame in frames {
                for token in &frame.tokens {
                    let slot = if token == x {
                        &mut first_x
                    } else if token == y {
                        &mut first_y
                    } else {
                        continue;
                    };
                    *slot = Some(slot.map_or(frame.timestamp, |t| t.min(frame.timestamp)));
                }
            }
            match (first_x, first_y) {
                (Some(tx), Some(ty)) => {
                    let text = if tx < ty { order_text(x, y) } else { order_text(y, x) };
                    question
                        .label_for(&text)
                        .map_or(FrameAnswer::Abstain, |l| FrameAnswer::Choice(l.to_string()))
                }
                _ => FrameAnswer::Abstain,
            }
        }
    }
}

/// Ground-truth answer from a native-fps sampling of the video.
///
/// Frames that carry no event token cannot change the answer, so only the
/// native-fps grid points inside event spans are materialized.
pub fn dense_oracle(video: &SyntheticVideo, question: &Question) -> String {
    let step = 1.0 / video.native_fps;
    let mut frames = Vec::new();
    for event in video.evidence(question) {
        let first = ((event.time / step) - 0.5).ceil().max(0.0) as u64;
        let mut k = first;
        loop {
            let t = (k as f64 + 0.5) * step;
            if t >= event.end() || t >= video.duration {
                break;
            }
            if event.covers(t) {
                frames.push(video.frame_at(t));
            }
            k += 1;
        }
    }
    answer_from_frames(&frames, question)
        .label()
        .map(str::to_string)
        .unwrap_or_default()
}

/// Probability that `n` uniform glance frames miss a needle of length `span`
/// placed uniformly in a video of length `duration`.
pub fn analytic_miss_probability(n: u64, span: f64, duration: f64) -> f64 {
    (1.0 - n as f64 * span / duration).max(0.0)
}
