//! History-selection rules.
//!
//! At evaluation time the answer-selection kinds (`as_conf`, `as_uncer`,
//! `as_combine`) drop a predicted answer whose score falls on the wrong side
//! of a threshold; the boundary itself counts as keep. At training time the
//! same kinds include a predicted answer with probability `lambda_valid`
//! instead. `coin_flip` and `ramp` are the random-mixing baselines, which
//! only have a training-time schedule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::Scores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Gold,
    NoPred,
    AllPred,
    CoinFlip,
    Ramp,
    AsConf,
    AsUncer,
    AsCombine,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Gold,
        PolicyKind::NoPred,
        PolicyKind::AllPred,
        PolicyKind::CoinFlip,
        PolicyKind::Ramp,
        PolicyKind::AsConf,
        PolicyKind::AsUncer,
        PolicyKind::AsCombine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Gold => "gold",
            PolicyKind::NoPred => "no_pred",
            PolicyKind::AllPred => "all_pred",
            PolicyKind::CoinFlip => "coin_flip",
            PolicyKind::Ramp => "ramp",
            PolicyKind::AsConf => "as_conf",
            PolicyKind::AsUncer => "as_uncer",
            PolicyKind::AsCombine => "as_combine",
        }
    }

    /// True for the confidence/uncertainty answer-selection kinds.
    pub fn is_selective(self) -> bool {
        matches!(
            self,
            PolicyKind::AsConf | PolicyKind::AsUncer | PolicyKind::AsCombine
        )
    }

    /// The score a selective kind thresholds on, oriented so that higher
    /// means "more likely correct" except for `as_uncer`, which uses the
    /// raw uncertainty.
    pub fn selection_score(self, s: Scores) -> Option<f64> {
        match self {
            PolicyKind::AsConf => Some(s.s_conf),
            PolicyKind::AsUncer => Some(s.s_uncer),
            PolicyKind::AsCombine => Some(combined_score(s)),
            _ => None,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown policy kind `{s}`")))
    }
}

/// A history-composition rule and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct SelectionPolicy {
    pub kind: PolicyKind,
    pub threshold: f64,
    pub lambda_rand: f64,
    /// Most recent turns kept in history; `None` keeps all.
    pub history_window: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    kind: PolicyKind,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default = "default_lambda")]
    lambda_rand: f64,
    #[serde(default)]
    history_window: Option<usize>,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_lambda() -> f64 {
    0.5
}

impl TryFrom<RawPolicy> for SelectionPolicy {
    type Error = Error;

    fn try_from(raw: RawPolicy) -> Result<Self> {
        SelectionPolicy::new(raw.kind, raw.threshold)?
            .with_lambda_rand(raw.lambda_rand)
            .map(|p| p.with_window(raw.history_window))
    }
}

impl SelectionPolicy {
    pub fn new(kind: PolicyKind, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return domain(format!("threshold {threshold} outside [0, 1]"));
        }
        Ok(SelectionPolicy {
            kind,
            threshold,
            lambda_rand: default_lambda(),
            history_window: None,
        })
    }

    /// A policy whose threshold is irrelevant.
    pub fn of(kind: PolicyKind) -> Self {
        SelectionPolicy::new(kind, default_threshold()).expect("default threshold is valid")
    }

    pub fn with_lambda_rand(mut self, lambda_rand: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda_rand) {
            return domain(format!("lambda_rand {lambda_rand} outside [0, 1]"));
        }
        self.lambda_rand = lambda_rand;
        Ok(self)
    }

    pub fn with_window(mut self, history_window: Option<usize>) -> Self {
        self.history_window = history_window;
        self
    }

    pub fn with_threshold(self, threshold: f64) -> Result<Self> {
        let mut p = SelectionPolicy::new(self.kind, threshold)?;
        p.lambda_rand = self.lambda_rand;
        p.history_window = self.history_window;
        Ok(p)
    }
}

/// Mean of confidence and one minus uncertainty.
pub fn combined_score(s: Scores) -> f64 {
    0.5 * (s.s_conf + (1.0 - s.s_uncer))
}

/// Whether a predicted answer stays in the history at evaluation time.
pub fn eval_keep(s: Scores, policy: &SelectionPolicy) -> Result<bool> {
    let t = policy.threshold;
    match policy.kind {
        PolicyKind::AsConf => Ok(s.s_conf >= t),
        PolicyKind::AsUncer => Ok(s.s_uncer <= t),
        PolicyKind::AsCombine => Ok(combined_score(s) >= t),
        PolicyKind::AllPred | PolicyKind::Gold => Ok(true),
        PolicyKind::NoPred => Ok(false),
        PolicyKind::CoinFlip | PolicyKind::Ramp => domain(format!(
            "`{}` is a training-time rule with no evaluation filter",
            policy.kind
        )),
    }
}

/// Probability of including a predicted answer when training.
pub fn lambda_valid(s: Scores, kind: PolicyKind) -> Result<f64> {
    match kind {
        PolicyKind::AsConf => Ok(s.s_conf),
        PolicyKind::AsUncer => Ok(1.0 - s.s_uncer),
        PolicyKind::AsCombine => Ok(combined_score(s)),
        other => domain(format!(
            "`{other}` has no score-based inclusion probability"
        )),
    }
}

/// Bernoulli draw with probability `lambda_valid`.
pub fn train_include<R: Rng + ?Sized>(
    s: Scores,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<bool> {
    let lambda = lambda_valid(s, policy.kind)?;
    Ok(rng.random::<f64>() < lambda)
}

/// Probability of using the predicted answer at a training step for the
/// random-mixing baselines: constant one half for `coin_flip`, a linear
/// ramp from 0 to 1 for `ramp`.
pub fn baseline_schedule(kind: PolicyKind, step: usize, total_steps: usize) -> Result<f64> {
    if step >= total_steps {
        return domain(format!("step {step} outside 0..{total_steps}"));
    }
    match kind {
        PolicyKind::CoinFlip => Ok(0.5),
        PolicyKind::Ramp if total_steps == 1 => Ok(1.0),
        PolicyKind::Ramp => Ok(step as f64 / (total_steps - 1) as f64),
        other => domain(format!("`{other}` has no sampling schedule")),
    }
}

/// Mean of the schedule over all steps.
pub fn mean_schedule(kind: PolicyKind, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return domain("schedule needs at least one step");
    }
    let mut sum = 0.0;
    for step in 0..total_steps {
        sum += baseline_schedule(kind, step, total_steps)?;
    }
    Ok(sum / total_steps as f64)
}

/// Median of `scores` (mean of the middle pair for even counts) shifted by
/// `offset` and clamped to `[0, 1]`.
pub fn median_threshold(scores: &[f64], offset: f64) -> Result<f64> {
    if scores.is_empty() {
        return domain("median of an empty score list");
    }
    if !(-0.25..=0.25).contains(&offset) {
        return domain(format!("threshold offset {offset} outside [-0.25, 0.25]"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return domain("median of NaN scores");
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok((median + offset).clamp(0.0, 1.0))
}
