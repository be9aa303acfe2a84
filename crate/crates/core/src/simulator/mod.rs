//! A synthetic conversational QA world.
//!
//! Dialogues are sequences of gold spans over a context of `K` positions.
//! The synthetic model "knows" the answer to a turn with a probability that
//! rises with every correct answer in its history and falls with every wrong
//! one, and drops further when the history it sees is composed differently
//! from the one it was trained on. When it knows, its logits peak sharply on
//! the gold span; otherwise they peak weakly on a wrong span that does not
//! overlap gold. Gaussian noise shared by all passes, plus independent noise
//! per pass, stands in for dropout.
//!
//! Every random draw comes from a substream keyed by
//! `(seed, purpose, replicate, dialogue, turn)`, so different policies run
//! over the same dialogue see the same draws and differ only through their
//! history decisions.

mod experiment;
mod oracle;

pub use experiment::{
    mask_count_spread, run_experiment, threshold_sweep, Experiment, ExperimentConfig,
    PairedDifference, PolicyRun, PolicySummary, ReplicateRun, SweepRow, TurnOutcome,
};
pub use oracle::oracle_expected_f1;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{LogitRecord, Span};
use crate::pipeline::{History, TurnInput, TurnModel};
use crate::policy::{mean_schedule, PolicyKind, SelectionPolicy};

/// Steps used to average the `ramp` schedule when modelling its exposure to
/// gold answers during training.
const RAMP_STEPS: usize = 100;

/// Longest gold or wrong span the world draws.
pub const MAX_SPAN_LEN: usize = 3;

/// History composition the synthetic model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Each policy is evaluated with the model trained for it.
    #[default]
    Matched,
    Gold,
    NoPred,
    AllPred,
    /// Trained with score-based answer selection.
    As,
}

/// Parameters of the synthetic world and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimProfile {
    pub context_len: usize,
    pub turns_per_dialogue: usize,
    pub p_know_base: f64,
    pub delta_correct: f64,
    pub delta_wrong: f64,
    pub sharpness_known: f64,
    pub sharpness_unknown: f64,
    pub noise_sigma_base: f64,
    pub noise_sigma_mc: f64,
    pub miscal_scale: f64,
    pub n_mc_passes: usize,
    pub regime: Regime,
    pub mismatch_penalty: f64,
}

impl Default for SimProfile {
    fn default() -> Self {
        SimProfile {
            context_len: 32,
            turns_per_dialogue: 5,
            p_know_base: 0.65,
            delta_correct: 0.10,
            delta_wrong: 0.20,
            sharpness_known: 6.0,
            sharpness_unknown: 1.5,
            noise_sigma_base: 0.5,
            noise_sigma_mc: 0.5,
            miscal_scale: 1.0,
            n_mc_passes: 10,
            regime: Regime::Matched,
            mismatch_penalty: 0.15,
        }
    }
}

impl SimProfile {
    /// A world whose scores are close to calibrated at temperature 1 in
    /// both modes. Sharper and noisier than the default, which is
    /// underconfident.
    pub fn calibrated() -> Self {
        SimProfile {
            sharpness_known: 8.5,
            sharpness_unknown: 2.0,
            noise_sigma_base: 0.8,
            noise_sigma_mc: 0.3,
            ..SimProfile::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_len < 4 {
            return domain(format!(
                "context_len must be >= 4, got {}",
                self.context_len
            ));
        }
        if self.turns_per_dialogue < 1 {
            return domain("turns_per_dialogue must be >= 1");
        }
        if !(self.p_know_base > 0.0 && self.p_know_base < 1.0) {
            return domain(format!("p_know_base {} outside (0, 1)", self.p_know_base));
        }
        let non_negative = [
            ("delta_correct", self.delta_correct),
            ("delta_wrong", self.delta_wrong),
            ("noise_sigma_base", self.noise_sigma_base),
            ("noise_sigma_mc", self.noise_sigma_mc),
            ("mismatch_penalty", self.mismatch_penalty),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return domain(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.sharpness_unknown > 0.0 && self.sharpness_known > self.sharpness_unknown) {
            return domain("need sharpness_known > sharpness_unknown > 0");
        }
        if !(self.miscal_scale > 0.0 && self.miscal_scale.is_finite()) {
            return domain(format!(
                "miscal_scale must be > 0, got {}",
                self.miscal_scale
            ));
        }
        if self.n_mc_passes < 1 {
            return domain("n_mc_passes must be >= 1");
        }
        Ok(())
    }

    /// True when every logit is a deterministic function of the know state.
    pub fn is_noiseless(&self) -> bool {
        self.noise_sigma_base == 0.0 && self.noise_sigma_mc == 0.0
    }
}

/// What the synthetic model reads off its history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HistorySummary {
    pub n_correct_incl: usize,
    pub n_wrong_incl: usize,
    pub composition_mismatch: bool,
}

/// Probability that the model knows the answer given its history.
pub fn p_know(profile: &SimProfile, summary: &HistorySummary) -> f64 {
    let mismatch = if summary.composition_mismatch {
        profile.mismatch_penalty
    } else {
        0.0
    };
    (profile.p_know_base + profile.delta_correct * summary.n_correct_incl as f64
        - profile.delta_wrong * summary.n_wrong_incl as f64
        - mismatch)
        .clamp(0.01, 0.99)
}

// Substream purposes.
pub(crate) const STREAM_DIALOGUE: u64 = 1;
pub(crate) const STREAM_TURN: u64 = 2;
pub(crate) const STREAM_POLICY: u64 = 3;
pub(crate) const STREAM_MISMATCH: u64 = 4;
pub(crate) const STREAM_RESCORE: u64 = 5;
pub(crate) const STREAM_RECORDS: u64 = 6;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for a `(seed, key...)` tuple.
pub fn substream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &k in key {
        h = splitmix(h ^ splitmix(k));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Draws a dialogue of `turns_per_dialogue` gold spans, each 1 to 3 tokens.
pub fn gen_dialogue<R: Rng + ?Sized>(
    profile: &SimProfile,
    dialogue_id: &str,
    rng: &mut R,
) -> Result<Vec<TurnInput>> {
    profile.validate()?;
    let k = profile.context_len;
    Ok((1..=profile.turns_per_dialogue)
        .map(|i| {
            let len = rng.random_range(1..=MAX_SPAN_LEN);
            let start = rng.random_range(0..=k - len);
            TurnInput {
                dialogue_id: dialogue_id.to_string(),
                turn_index: i as u32,
                question_id: format!("{dialogue_id}/q{i}"),
                gold: Span {
                    start,
                    end: start + len - 1,
                },
            }
        })
        .collect())
}

/// Every span of length 1 to 3 inside the context that shares no position
/// with `gold`.
pub fn wrong_spans(context_len: usize, gold: Span) -> Vec<Span> {
    let mut out = Vec::new();
    for len in 1..=MAX_SPAN_LEN {
        for start in 0..=context_len.saturating_sub(len) {
            let s = Span {
                start,
                end: start + len - 1,
            };
            if s.end < context_len && s.overlap(&gold) == 0 {
                out.push(s);
            }
        }
    }
    out
}

/// Hidden state of one synthetic turn before pass noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTurn {
    pub know: bool,
    pub target: Span,
    pub base_start: Vec<f64>,
    pub base_end: Vec<f64>,
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated as finite and >= 0")
}

/// Draws the know state, target span and shared base logits.
///
/// The number of draws does not depend on `p_know`, so two calls on equal
/// generators stay in lockstep whatever their histories.
pub fn draw_latent<R: Rng + ?Sized>(
    profile: &SimProfile,
    gold: Span,
    p_know: f64,
    rng: &mut R,
) -> Result<LatentTurn> {
    let k = profile.context_len;
    if gold.end >= k {
        return domain(format!("gold span {gold:?} outside context of length {k}"));
    }
    let u: f64 = rng.random();
    let candidates = wrong_spans(k, gold);
    if candidates.is_empty() {
        return domain("context too small for a non-overlapping wrong span");
    }
    let wrong = candidates[rng.random_range(0..candidates.len())];
    let know = u < p_know;
    let (target, sharpness) = if know {
        (gold, profile.sharpness_known)
    } else {
        (wrong, profile.sharpness_unknown)
    };
    let noise = gaussian(profile.noise_sigma_base);
    let mut base = |peak: usize| -> Vec<f64> {
        (0..k)
            .map(|i| {
                let indicator = if i == peak { sharpness } else { 0.0 };
                indicator + noise.sample(rng)
            })
            .collect()
    };
    let base_start = base(target.start);
    let base_end = base(target.end);
    Ok(LatentTurn {
        know,
        target,
        base_start,
        base_end,
    })
}

/// Adds per-pass noise to the base logits and applies the miscalibration
/// scale: one deterministic pass, then `n_mc_passes` dropout passes.
pub fn emit_record<R: Rng + ?Sized>(
    profile: &SimProfile,
    latent: &LatentTurn,
    dialogue_id: &str,
    turn_index: u32,
    gold: Span,
    rng: &mut R,
) -> Result<LogitRecord> {
    let noise = gaussian(profile.noise_sigma_mc);
    let c = profile.miscal_scale;
    let mut pass =
        |base: &[f64]| -> Vec<f64> { base.iter().map(|b| (b + noise.sample(rng)) * c).collect() };
    let det_start = pass(&latent.base_start);
    let det_end = pass(&latent.base_end);
    let mut mc_start = Vec::with_capacity(profile.n_mc_passes);
    let mut mc_end = Vec::with_capacity(profile.n_mc_passes);
    for _ in 0..profile.n_mc_passes {
        mc_start.push(pass(&latent.base_start));
        mc_end.push(pass(&latent.base_end));
    }
    LogitRecord::new(
        dialogue_id,
        turn_index,
        gold,
        det_start,
        det_end,
        mc_start,
        mc_end,
    )
}

/// One synthetic prediction and whether the model knew the answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTurn {
    pub record: LogitRecord,
    pub know: bool,
}

/// Draws one turn's logits given what the history looks like.
pub fn synth_predict<R: Rng + ?Sized>(
    profile: &SimProfile,
    turn: &TurnInput,
    summary: &HistorySummary,
    rng: &mut R,
) -> Result<SynthTurn> {
    let latent = draw_latent(profile, turn.gold, p_know(profile, summary), rng)?;
    let record = emit_record(
        profile,
        &latent,
        &turn.dialogue_id,
        turn.turn_index,
        turn.gold,
        rng,
    )?;
    Ok(SynthTurn {
        record,
        know: latent.know,
    })
}

/// Probability that a turn's history differs in composition from training.
///
/// Only turns with a non-empty history can be mismatched.
pub(crate) fn mismatch_probability(regime: Regime, policy: &SelectionPolicy) -> Result<f64> {
    let kind = policy.kind;
    let gold_exposure = || -> Result<f64> {
        Ok(match kind {
            PolicyKind::CoinFlip => 1.0 - policy.lambda_rand,
            PolicyKind::Ramp => 1.0 - mean_schedule(PolicyKind::Ramp, RAMP_STEPS)?,
            _ => 0.0,
        })
    };
    let mismatched = match regime {
        Regime::Matched => return gold_exposure(),
        Regime::Gold => kind != PolicyKind::Gold,
        Regime::NoPred => kind != PolicyKind::NoPred,
        Regime::AllPred => kind != PolicyKind::AllPred,
        Regime::As => !kind.is_selective(),
    };
    Ok(if mismatched { 1.0 } else { 0.0 })
}

/// The synthetic model as a [`TurnModel`] for one dialogue.
pub struct SimModel<'a> {
    profile: &'a SimProfile,
    seed: u64,
    replicate: u64,
    dialogue: u64,
    mismatch_p: f64,
    golds: HashMap<String, Span>,
    knows: Vec<bool>,
}

impl<'a> SimModel<'a> {
    pub fn new(
        profile: &'a SimProfile,
        policy: &SelectionPolicy,
        turns: &[TurnInput],
        seed: u64,
        replicate: u64,
        dialogue: u64,
    ) -> Result<Self> {
        Ok(SimModel {
            profile,
            seed,
            replicate,
            dialogue,
            mismatch_p: mismatch_probability(profile.regime, policy)?,
            golds: turns
                .iter()
                .map(|t| (t.question_id.clone(), t.gold))
                .collect(),
            knows: Vec::with_capacity(turns.len()),
        })
    }

    /// Know states drawn so far, in turn order.
    pub fn knows(&self) -> &[bool] {
        &self.knows
    }

    fn summarize(&self, turn: &TurnInput, history: &History) -> HistorySummary {
        let mut summary = HistorySummary::default();
        for (i, answer) in history.answers() {
            let gold = self.golds.get(&history.turns[i].question_id);
            if gold == Some(&answer) {
                summary.n_correct_incl += 1;
            } else {
                summary.n_wrong_incl += 1;
            }
        }
        if !history.is_empty() && self.mismatch_p > 0.0 {
            summary.composition_mismatch = self.mismatch_p >= 1.0 || {
                let mut rng = substream(
                    self.seed,
                    &[
                        STREAM_MISMATCH,
                        self.replicate,
                        self.dialogue,
                        u64::from(turn.turn_index),
                    ],
                );
                rng.random::<f64>() < self.mismatch_p
            };
        }
        summary
    }
}

impl TurnModel for SimModel<'_> {
    fn predict(&mut self, turn: &TurnInput, history: &History) -> Result<LogitRecord> {
        let summary = self.summarize(turn, history);
        let mut rng = substream(
            self.seed,
            &[
                STREAM_TURN,
                self.replicate,
                self.dialogue,
                u64::from(turn.turn_index),
            ],
        );
        let out = synth_predict(self.profile, turn, &summary, &mut rng)?;
        self.knows.push(out.know);
        Ok(out.record)
    }
}

/// Gold turns of dialogue `dialogue` in replicate `replicate`.
pub fn dialogue_turns(
    profile: &SimProfile,
    seed: u64,
    replicate: u64,
    dialogue: u64,
) -> Result<Vec<TurnInput>> {
    let mut rng = substream(seed, &[STREAM_DIALOGUE, replicate, dialogue]);
    gen_dialogue(profile, &format!("r{replicate}-d{dialogue}"), &mut rng)
}

/// Logit records for `n_dialogues` dialogues, every turn predicted with an
/// empty history. Turns are in dialogue order.
pub fn synthetic_records(
    profile: &SimProfile,
    n_dialogues: u64,
    seed: u64,
) -> Result<Vec<LogitRecord>> {
    let mut out = Vec::with_capacity(n_dialogues as usize * profile.turns_per_dialogue);
    for d in 0..n_dialogues {
        for turn in dialogue_turns(profile, seed, 0, d)? {
            let mut rng = substream(seed, &[STREAM_RECORDS, d, u64::from(turn.turn_index)]);
            let summary = HistorySummary::default();
            out.push(synth_predict(profile, &turn, &summary, &mut rng)?.record);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::score_turn;

    #[test]
    fn seeded_dialogues_are_reproducible_and_in_bounds() {
        let profile = SimProfile {
            context_len: 16,
            turns_per_dialogue: 3,
            ..SimProfile::default()
        };
        let a = dialogue_turns(&profile, 7, 0, 0).unwrap();
        let b = dialogue_turns(&profile, 7, 0, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for seed in 0..200 {
            for t in dialogue_turns(&profile, seed, 0, 0).unwrap() {
                assert!(t.gold.start <= t.gold.end && t.gold.end < 16);
                assert!(t.gold.len() <= MAX_SPAN_LEN);
            }
        }
    }

    #[test]
    fn different_seeds_rarely_collide() {
        let profile = SimProfile {
            context_len: 16,
            turns_per_dialogue: 3,
            ..SimProfile::default()
        };
        let spans = |seed| -> Vec<Span> {
            dialogue_turns(&profile, seed, 0, 0)
                .unwrap()
                .into_iter()
                .map(|t| t.gold)
                .collect()
        };
        let collisions = (0..1000u64)
            .filter(|&s| spans(s) == spans(s + 1000))
            .count();
        // 42 possible spans per turn, so an exact 3-turn collision has
        // probability well under 1e-4.
        assert!(collisions <= 1, "{collisions} collisions");
    }

    #[test]
    fn tiny_context_rejected() {
        let profile = SimProfile {
            context_len: 3,
            ..SimProfile::default()
        };
        let mut rng = substream(0, &[]);
        assert!(gen_dialogue(&profile, "d", &mut rng).is_err());
    }

    #[test]
    fn p_know_formula() {
        let neutral = SimProfile {
            delta_correct: 0.0,
            delta_wrong: 0.0,
            ..SimProfile::default()
        };
        for (c, w) in [(0, 0), (3, 1), (0, 4)] {
            let s = HistorySummary {
                n_correct_incl: c,
                n_wrong_incl: w,
                composition_mismatch: false,
            };
            assert_eq!(p_know(&neutral, &s), 0.65);
        }
        let profile = SimProfile {
            p_know_base: 0.7,
            delta_wrong: 0.2,
            ..SimProfile::default()
        };
        let s = HistorySummary {
            n_correct_incl: 0,
            n_wrong_incl: 2,
            composition_mismatch: false,
        };
        assert!((p_know(&profile, &s) - 0.3).abs() < 1e-12);
        let worst = HistorySummary {
            n_correct_incl: 0,
            n_wrong_incl: 20,
            composition_mismatch: true,
        };
        assert_eq!(p_know(&profile, &worst), 0.01);
    }

    #[test]
    fn wrong_spans_never_touch_gold() {
        let gold = Span { start: 3, end: 5 };
        let spans = wrong_spans(10, gold);
        assert!(!spans.is_empty());
        assert!(spans.iter().all(|s| s.overlap(&gold) == 0 && s.end < 10));
    }

    #[test]
    fn known_turns_are_more_confident() {
        let profile = SimProfile {
            sharpness_known: 6.0,
            sharpness_unknown: 1.0,
            noise_sigma_base: 0.5,
            noise_sigma_mc: 0.5,
            ..SimProfile::default()
        };
        let turn = TurnInput {
            dialogue_id: "d".into(),
            turn_index: 1,
            question_id: "q".into(),
            gold: Span { start: 4, end: 5 },
        };
        let (mut known, mut unknown) = (Vec::new(), Vec::new());
        for i in 0..10_000u64 {
            let mut rng = substream(99, &[i]);
            let out = synth_predict(&profile, &turn, &HistorySummary::default(), &mut rng).unwrap();
            let s = score_turn(&out.record, 1.0, 1.0).unwrap().s_conf;
            if out.know {
                known.push(s);
            } else {
                unknown.push(s);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!known.is_empty() && !unknown.is_empty());
        assert!(mean(&known) > mean(&unknown));
    }

    #[test]
    fn miscalibration_scales_every_logit() {
        let base = SimProfile::default();
        let scaled = SimProfile {
            miscal_scale: 2.0,
            ..SimProfile::default()
        };
        let turn = &dialogue_turns(&base, 1, 0, 0).unwrap()[0];
        let a = synth_predict(
            &base,
            turn,
            &HistorySummary::default(),
            &mut substream(5, &[]),
        )
        .unwrap();
        let b = synth_predict(
            &scaled,
            turn,
            &HistorySummary::default(),
            &mut substream(5, &[]),
        )
        .unwrap();
        assert_eq!(a.record.scaled(2.0).unwrap(), b.record);
    }

    #[test]
    fn profile_validation() {
        assert!(SimProfile::default().validate().is_ok());
        let bad = SimProfile {
            sharpness_known: 1.0,
            sharpness_unknown: 2.0,
            ..SimProfile::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimProfile {
            n_mc_passes: 0,
            ..SimProfile::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn profile_json_uses_defaults() {
        let p: SimProfile =
            serde_json::from_str(r#"{"miscal_scale": 2.0, "regime": "gold"}"#).unwrap();
        assert_eq!(p.miscal_scale, 2.0);
        assert_eq!(p.regime, Regime::Gold);
        assert_eq!(p.context_len, 32);
        assert!(serde_json::from_str::<SimProfile>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn synthetic_records_are_ordered_and_reproducible() {
        let profile = SimProfile::calibrated();
        let a = synthetic_records(&profile, 4, 11).unwrap();
        assert_eq!(a, synthetic_records(&profile, 4, 11).unwrap());
        assert_ne!(a, synthetic_records(&profile, 4, 12).unwrap());
        assert_eq!(a.len(), 20);
        assert_eq!(a[0].dialogue_id(), "r0-d0");
        assert_eq!(a[19].dialogue_id(), "r0-d3");
        let turns: Vec<u32> = a[..5].iter().map(|r| r.turn_index()).collect();
        assert_eq!(turns, [1, 2, 3, 4, 5]);
    }
}
