//! Group-relative advantages and the masked clipped surrogate.
//!
//! Works on per-token log-probabilities supplied by a trainer. Tokens whose
//! mask is false (observation text) contribute exactly nothing. Losses are
//! token means over masked tokens, pooled across the batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::Turn;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("GROUP_TOO_SMALL: need at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("NO_TRAINABLE_TOKENS in rollout {0}")]
    NoTrainableTokens(String),
    #[error("EMPTY_BATCH: no group carries a gradient signal")]
    EmptyBatch,
    #[error("rollout {rollout}: {field} has {got} entries, token_count is {expected}")]
    Shape {
        rollout: String,
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("group {0}: advantages not computed")]
    MissingAdvantages(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedRollout {
    #[serde(default)]
    pub rollout_id: String,
    pub token_count: usize,
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    /// True on policy-generated tokens.
    pub mask: Vec<bool>,
    pub reward: f64,
    /// Per-token entropy proxy supplied by the trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<Vec<f64>>,
}

impl TokenizedRollout {
    pub fn check_shape(&self) -> Result<(), GrpoError> {
        let n = self.token_count;
        let lens = [
            ("logp_new", self.logp_new.len()),
            ("logp_old", self.logp_old.len()),
            ("logp_ref", self.logp_ref.len()),
            ("mask", self.mask.len()),
            ("entropy", self.entropy.as_ref().map_or(n, Vec::len)),
        ];
        for (field, got) in lens {
            if got != n {
                return Err(GrpoError::Shape {
                    rollout: self.rollout_id.clone(),
                    field,
                    expected: n,
                    got,
                });
            }
        }
        Ok(())
    }

    pub fn trained_tokens(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    fn masked_count(&self) -> Result<usize, GrpoError> {
        self.check_shape()?;
        match self.trained_tokens() {
            0 => Err(GrpoError::NoTrainableTokens(self.rollout_id.clone())),
            m => Ok(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub rollouts: Vec<TokenizedRollout>,
    #[serde(default)]
    pub advantages: Vec<f64>,
    #[serde(default)]
    pub degenerate: bool,
}

impl RolloutGroup {
    pub fn new(prompt_id: impl Into<String>, rollouts: Vec<TokenizedRollout>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            rollouts,
            advantages: Vec::new(),
            degenerate: false,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn compute_advantages(&mut self, convention: StdConvention) -> Result<(), GrpoError> {
        let adv = group_advantages(&self.rewards(), convention)?;
        self.advantages = adv.values;
        self.degenerate = adv.degenerate;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_coef: f64,
    pub entropy_coef: f64,
    pub std_convention: StdConvention,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            clip_low: 0.2,
            clip_high: 0.27,
            kl_coef: 0.001,
            entropy_coef: 0.001,
            std_convention: StdConvention::Population,
        }
    }
}

impl ObjectiveConfig {
    pub fn is_valid(&self) -> bool {
        self.clip_low >= 0.0 && self.clip_high >= 0.0 && self.kl_coef >= 0.0 && self.entropy_coef >= 0.0
    }

    fn clamp(&self, ratio: f64) -> f64 {
        ratio.clamp(1.0 - self.clip_low, 1.0 + self.clip_high)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub values: Vec<f64>,
    /// All rewards equal: no gradient signal.
    pub degenerate: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64], convention: StdConvention) -> f64 {
    let mu = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    let denom = match convention {
        StdConvention::Population => xs.len() as f64,
        StdConvention::Sample => (xs.len() - 1) as f64,
    };
    (ss / denom).sqrt()
}

/// Standardize rewards within a group.
pub fn group_advantages(rewards: &[f64], convention: StdConvention) -> Result<Advantages, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let mu = mean(rewards);
    let sigma = std_dev(rewards, convention);
    let all_equal = rewards.iter().all(|r| *r == rewards[0]);
    if all_equal || sigma <= 1e-12 * mu.abs().max(1.0) {
        return Ok(Advantages {
            values: vec![0.0; rewards.len()],
            degenerate: true,
        });
    }
    Ok(Advantages {
        values: rewards.iter().map(|r| (r - mu) / sigma).collect(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: usize,
}

/// Drop degenerate groups. Advantages must already be computed.
pub fn dynamic_sample_filter(groups: Vec<RolloutGroup>) -> (Vec<RolloutGroup>, FilterReport) {
    let total = groups.len();
    let kept: Vec<RolloutGroup> = groups.into_iter().filter(|g| !g.degenerate).collect();
    let report = FilterReport {
        kept: kept.len(),
        dropped: total - kept.len(),
    };
    if kept.is_empty() {
        log::warn!("EMPTY_BATCH: all {total} groups are degenerate");
    }
    (kept, report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    /// Mean of `per_token` over masked tokens.
    pub loss: f64,
    /// Zero on unmasked tokens.
    pub per_token: Vec<f64>,
}

/// −min(ρ·A, clamp(ρ)·A) per masked token, with ρ = exp(logp_new − logp_old).
pub fn masked_surrogate(r: &TokenizedRollout, advantage: f64, cfg: &ObjectiveConfig) -> Result<Surrogate, GrpoError> {
    let m = r.masked_count()?;
    let per_token: Vec<f64> = (0..r.token_count)
        .map(|t| {
            if !r.mask[t] {
                return 0.0;
            }
            let ratio = (r.logp_new[t] - r.logp_old[t]).exp();
            -(ratio * advantage).min(cfg.clamp(ratio) * advantage)
        })
        .collect();
    let loss = per_token.iter().sum::<f64>() / m as f64;
    Ok(Surrogate { loss, per_token })
}

/// d loss / d logp_new for [`masked_surrogate`]. At a kink the unclipped
/// branch's derivative is used.
pub fn surrogate_gradient(r: &TokenizedRollout, advantage: f64, cfg: &ObjectiveConfig) -> Result<Vec<f64>, GrpoError> {
    let m = r.masked_count()? as f64;
    Ok((0..r.token_count)
        .map(|t| {
            if !r.mask[t] {
                return 0.0;
            }
            let ratio = (r.logp_new[t] - r.logp_old[t]).exp();
            if ratio * advantage <= cfg.clamp(ratio) * advantage {
                -ratio * advantage / m
            } else {
                0.0
            }
        })
        .collect())
}

fn k3(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp() - d - 1.0
}

/// Masked mean of the k3 estimator exp(d) − d − 1 with d = logp_ref − logp_new.
pub fn kl_term(r: &TokenizedRollout) -> Result<f64, GrpoError> {
    let m = r.masked_count()?;
    let sum: f64 = (0..r.token_count)
        .filter(|t| r.mask[*t])
        .map(|t| k3(r.logp_new[t], r.logp_ref[t]))
        .sum();
    Ok(sum / m as f64)
}

pub fn kl_gradient(r: &TokenizedRollout) -> Result<Vec<f64>, GrpoError> {
    let m = r.masked_count()? as f64;
    Ok((0..r.token_count)
        .map(|t| {
            if r.mask[t] {
                (1.0 - (r.logp_ref[t] - r.logp_new[t]).exp()) / m
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub policy_loss: f64,
    pub kl: f64,
    pub entropy_proxy: f64,
    /// policy_loss + β·kl − entropy_coef·entropy_proxy
    pub total: f64,
    pub tokens_trained: usize,
    pub groups_kept: usize,
}

#[derive(Default)]
struct Sums {
    policy: f64,
    kl: f64,
    entropy: f64,
    tokens: usize,
}

fn group_sums(g: &RolloutGroup, cfg: &ObjectiveConfig) -> Result<Sums, GrpoError> {
    if g.advantages.len() != g.rollouts.len() {
        return Err(GrpoError::MissingAdvantages(g.prompt_id.clone()));
    }
    let mut s = Sums::default();
    for (r, adv) in g.rollouts.iter().zip(&g.advantages) {
        let sur = masked_surrogate(r, *adv, cfg)?;
        for t in (0..r.token_count).filter(|t| r.mask[*t]) {
            s.policy += sur.per_token[t];
            s.kl += k3(r.logp_new[t], r.logp_ref[t]);
            s.entropy += r.entropy.as_ref().map_or(0.0, |e| e[t]);
        }
        s.tokens += r.trained_tokens();
    }
    Ok(s)
}

/// Token-mean objective over already filtered groups. Groups are evaluated in
/// parallel and merged in input order, so the result does not depend on
/// scheduling.
pub fn objective(groups: &[RolloutGroup], cfg: &ObjectiveConfig) -> Result<ObjectiveReport, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let sums: Vec<Sums> = groups
        .par_iter()
        .map(|g| group_sums(g, cfg))
        .collect::<Result<_, _>>()?;
    let mut total = Sums::default();
    for s in sums {
        total.policy += s.policy;
        total.kl += s.kl;
        total.entropy += s.entropy;
        total.tokens += s.tokens;
    }
    let n = total.tokens as f64;
    let policy_loss = total.policy / n;
    let kl = total.kl / n;
    let entropy_proxy = total.entropy / n;
    Ok(ObjectiveReport {
        policy_loss,
        kl,
        entropy_proxy,
        total: policy_loss + cfg.kl_coef * kl - cfg.entropy_coef * entropy_proxy,
        tokens_trained: total.tokens,
        groups_kept: groups.len(),
    })
}

/// d total / d logp_new for every token of every rollout, in input order.
pub fn objective_gradient(groups: &[RolloutGroup], cfg: &ObjectiveConfig) -> Result<Vec<Vec<Vec<f64>>>, GrpoError> {
    let report = objective(groups, cfg)?;
    let n = report.tokens_trained as f64;
    groups
        .iter()
        .map(|g| {
            g.rollouts
                .iter()
                .zip(&g.advantages)
                .map(|(r, adv)| {
                    // per-rollout gradients are means over m tokens; rescale to the pooled mean
                    let m = r.masked_count()? as f64;
                    let sur = surrogate_gradient(r, *adv, cfg)?;
                    let kl = kl_gradient(r)?;
                    Ok(sur.iter().zip(&kl).map(|(s, k)| (s + cfg.kl_coef * k) * m / n).collect())
                })
                .collect()
        })
        .collect()
}

/// Turn-level mask expanded to tokens. `token_len` stands in for a tokenizer.
pub fn mask_from_turns(turns: &[Turn], token_len: impl Fn(&str) -> usize) -> Vec<bool> {
    turns
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.trainable, token_len(&t.text)))
        .collect()
}

// ---------------------------------------------------------------------------
// Invariant checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub prompt_id: String,
    pub degenerate: bool,
    pub violations: Vec<String>,
}

impl GroupCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Distance of a token's ratio from both clip bounds; gradients are only
/// compared away from the kinks.
fn near_kink(r: &TokenizedRollout, t: usize, cfg: &ObjectiveConfig, margin: f64) -> bool {
    let ratio = (r.logp_new[t] - r.logp_old[t]).exp();
    (ratio - (1.0 - cfg.clip_low)).abs() < margin || (ratio - (1.0 + cfg.clip_high)).abs() < margin
}

/// Largest relative error between the analytic gradients ([`surrogate_gradient`]
/// and [`kl_gradient`]) and central differences with step `h` of their losses,
/// over masked non-kink tokens.
///
/// The two terms are checked separately: on a clipped token the β-scaled KL
/// gradient alone is too small to survive the roundoff of a combined loss.
/// Errors are relative to max(|analytic|, |numeric|, 1e-8).
pub fn finite_difference_error(r: &TokenizedRollout, advantage: f64, cfg: &ObjectiveConfig, h: f64) -> Result<f64, GrpoError> {
    let sur = surrogate_gradient(r, advantage, cfg)?;
    let kl = kl_gradient(r)?;
    let mut worst: f64 = 0.0;
    let mut probe = r.clone();
    for t in 0..r.token_count {
        if !r.mask[t] || near_kink(r, t, cfg, 1e-4) {
            continue;
        }
        let x = r.logp_new[t];
        probe.logp_new[t] = x + h;
        let (sur_up, kl_up) = (masked_surrogate(&probe, advantage, cfg)?.loss, kl_term(&probe)?);
        probe.logp_new[t] = x - h;
        let (sur_down, kl_down) = (masked_surrogate(&probe, advantage, cfg)?.loss, kl_term(&probe)?);
        probe.logp_new[t] = x;
        for (analytic, numeric) in [
            (sur[t], (sur_up - sur_down) / (2.0 * h)),
            (kl[t], (kl_up - kl_down) / (2.0 * h)),
        ] {
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

/// Recompute every invariant on one group.
pub fn check_group(group: &RolloutGroup, cfg: &ObjectiveConfig) -> GroupCheck {
    let mut violations = Vec::new();
    let mut check = GroupCheck {
        prompt_id: group.prompt_id.clone(),
        degenerate: false,
        violations: Vec::new(),
    };
    for r in &group.rollouts {
        if let Err(e) = r.masked_count() {
            violations.push(e.to_string());
        }
        let finite = r.logp_new.iter().chain(&r.logp_old).chain(&r.logp_ref).all(|x| x.is_finite()) && r.reward.is_finite();
        if !finite {
            violations.push(format!("rollout {}: non-finite value", r.rollout_id));
        }
    }
    if !violations.is_empty() {
        check.violations = violations;
        return check;
    }

    let adv = match group_advantages(&group.rewards(), cfg.std_convention) {
        Ok(a) => a,
        Err(e) => {
            check.violations.push(e.to_string());
            return check;
        }
    };
    check.degenerate = adv.degenerate;
    if !adv.degenerate {
        let mu = mean(&adv.values);
        let sd = std_dev(&adv.values, cfg.std_convention);
        if mu.abs() >= 1e-9 {
            violations.push(format!("advantage mean {mu:e} is not 0"));
        }
        if (sd - 1.0).abs() >= 1e-9 {
            violations.push(format!("advantage std {sd} is not 1"));
        }
    }
    if !group.advantages.is_empty() {
        let stored_ok = group.advantages.len() == adv.values.len()
            && group.advantages.iter().zip(&adv.values).all(|(a, b)| (a - b).abs() < 1e-9);
        if !stored_ok {
            violations.push("stored advantages differ from recomputed ones".into());
        }
    }

    for (r, a) in group.rollouts.iter().zip(&adv.values) {
        let id = &r.rollout_id;
        let (Ok(base), Ok(kl)) = (masked_surrogate(r, *a, cfg), kl_term(r)) else {
            continue;
        };
        // unmasked tokens must not move anything
        let mut perturbed = r.clone();
        for t in (0..r.token_count).filter(|t| !r.mask[*t]) {
            perturbed.logp_new[t] += 3.0 + t as f64;
        }
        let same = masked_surrogate(&perturbed, *a, cfg).map(|s| s == base).unwrap_or(false)
            && kl_term(&perturbed).map(|k| k == kl).unwrap_or(false);
        if !same {
            violations.push(format!("rollout {id}: unmasked tokens change the loss"));
        }
        for (t, term) in base.per_token.iter().enumerate() {
            if !r.mask[t] && *term != 0.0 {
                violations.push(format!("rollout {id}: token {t} is unmasked but contributes"));
            }
            if r.mask[t] && *a != 0.0 {
                let effective = -term / a;
                let bad = (*a > 0.0 && effective > 1.0 + cfg.clip_high + 1e-12)
                    || (*a < 0.0 && effective < 1.0 - cfg.clip_low - 1e-12);
                if bad {
                    violations.push(format!("rollout {id}: token {t} exceeds the clip bound"));
                }
            }
        }
        if let Ok(err) = finite_difference_error(r, *a, cfg, 1e-6) {
            if err > 1e-5 {
                violations.push(format!("rollout {id}: gradient differs from finite differences by {err:e}"));
            }
        }
    }
    check.violations = violations;
    check
}

/// Random groups with ratios spread across both clip bounds, for checks and demos.
pub fn synthetic_groups(seed: u64, groups: usize, n: usize, max_tokens: usize) -> Vec<RolloutGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..groups)
        .map(|g| {
            let rollouts = (0..n)
                .map(|i| {
                    let len = rng.random_range(2..=max_tokens.max(2));
                    let logp_old: Vec<f64> = (0..len).map(|_| rng.random_range(-6.0..-0.05)).collect();
                    let logp_new: Vec<f64> = logp_old.iter().map(|o| o + rng.random_range(-0.5..0.5)).collect();
                    let logp_ref: Vec<f64> = logp_old.iter().map(|o| o + rng.random_range(-0.3..0.3)).collect();
                    let mut mask: Vec<bool> = (0..len).map(|_| rng.random_bool(0.7)).collect();
                    mask[0] = true;
                    let entropy = Some((0..len).map(|_| rng.random_range(0.0..3.0)).collect());
                    const REWARDS: [f64; 6] = [0.0, 0.1, 0.9, 1.0, 1.4, 1.5];
                    TokenizedRollout {
                        rollout_id: format!("g{g}-r{i}"),
                        token_count: len,
                        logp_new,
                        logp_old,
                        logp_ref,
                        mask,
                        reward: REWARDS[rng.random_range(0..REWARDS.len())],
                        entropy,
                    }
                })
                .collect();
            RolloutGroup::new(format!("p{g}"), rollouts)
        })
        .collect()
}
