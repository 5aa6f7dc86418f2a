//! Trajectory reward: weighted accuracy, format and conditional tool bonus.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::Trajectory;
use crate::protocol::{extract_answer, validate_format};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward weights must be finite and non-negative: {0:?}")]
    NegativeWeight(RewardWeights),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_acc: f64,
    pub w_fmt: f64,
    pub w_tool: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_acc: 0.9,
            w_fmt: 0.1,
            w_tool: 0.5,
        }
    }
}

impl RewardWeights {
    /// The ablation without the tool bonus.
    pub fn without_tool() -> Self {
        Self {
            w_tool: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let ok = [self.w_acc, self.w_fmt, self.w_tool].iter().all(|w| w.is_finite() && *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(RewardError::NegativeWeight(*self))
        }
    }

    pub fn combine(&self, r_acc: u8, r_fmt: u8, r_tool: u8) -> f64 {
        self.w_acc * f64::from(r_acc) + self.w_fmt * f64::from(r_fmt) + self.w_tool * f64::from(r_tool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: u8,
    pub r_fmt: u8,
    pub r_tool: u8,
    pub total: f64,
}

/// 1 iff the trajectory answered and its normalized answer equals `gold`.
pub fn accuracy_reward(traj: &Trajectory, gold: &str) -> u8 {
    match &traj.final_answer {
        Some(a) => u8::from(extract_answer(a) == extract_answer(gold)),
        None => 0,
    }
}

/// 1 iff every policy turn is well formed and the last one answers.
pub fn format_reward(traj: &Trajectory) -> u8 {
    u8::from(validate_format(&traj.parsed_policy_turns()).ok)
}

/// 1 iff the answer is correct and at least one tool call delivered frames.
pub fn tool_reward(traj: &Trajectory, r_acc: u8) -> u8 {
    u8::from(r_acc == 1 && traj.successful_tool_calls >= 1)
}

pub fn total_reward(traj: &Trajectory, gold: &str, weights: &RewardWeights) -> RewardBreakdown {
    let r_acc = accuracy_reward(traj, gold);
    let r_fmt = format_reward(traj);
    let r_tool = tool_reward(traj, r_acc);
    RewardBreakdown {
        r_acc,
        r_fmt,
        r_tool,
        total: weights.combine(r_acc, r_fmt, r_tool),
    }
}

/// Score a trajectory against its own question's gold label and store the result.
pub fn score(traj: &mut Trajectory, weights: &RewardWeights) -> RewardBreakdown {
    let gold = traj.question.gold.clone();
    let r = total_reward(traj, &gold, weights);
    traj.reward = Some(r);
    r
}

/// Every component combination the conditional bonus allows.
pub fn feasible_components() -> Vec<(u8, u8, u8)> {
    let mut out = Vec::new();
    for r_acc in 0..=1 {
        for r_fmt in 0..=1 {
            for r_tool in 0..=1 {
                if r_tool == 1 && r_acc == 0 {
                    continue;
                }
                out.push((r_acc, r_fmt, r_tool));
            }
        }
    }
    out
}
