//! Exact expected F1 on tiny noiseless worlds, by enumeration.
//!
//! Without noise the scores of a turn depend only on whether the model knew
//! the answer, so a separating threshold keeps exactly the known turns. The
//! expectation is then a finite sum over all `2^T` know sequences, each
//! weighted by the product of its history-dependent Bernoulli
//! probabilities. This path shares nothing with the Monte Carlo driver
//! beyond the profile itself.

use super::{wrong_spans, Regime, SimProfile, MAX_SPAN_LEN};
use crate::error::{domain, Result};
use crate::model::{LogitRecord, Span};
use crate::pipeline::{token_f1, RunOptions};
use crate::policy::{eval_keep, PolicyKind, SelectionPolicy};
use crate::scoring::score_turn;

const MAX_TURNS: usize = 3;

/// Noiseless logits peaking at position 0; scores do not depend on where
/// the peak is.
fn noiseless_record(profile: &SimProfile, sharpness: f64) -> Result<LogitRecord> {
    let k = profile.context_len;
    let c = profile.miscal_scale;
    let mut v = vec![0.0; k];
    v[0] = sharpness * c;
    LogitRecord::new(
        "oracle",
        1,
        Span { start: 0, end: 0 },
        v.clone(),
        v.clone(),
        vec![v.clone(); profile.n_mc_passes],
        vec![v; profile.n_mc_passes],
    )
}

/// Expected F1 of a wrong prediction, averaged over every gold span the
/// world can draw and every wrong span drawn for it.
fn expected_wrong_f1(k: usize) -> f64 {
    // Gold lengths are uniform, then starts are uniform given the length.
    let mut total = 0.0;
    for len in 1..=MAX_SPAN_LEN {
        let starts = k - len + 1;
        let mut sum = 0.0;
        for start in 0..starts {
            let gold = Span {
                start,
                end: start + len - 1,
            };
            let wrong = wrong_spans(k, gold);
            sum += wrong.iter().map(|w| token_f1(*w, gold)).sum::<f64>() / wrong.len() as f64;
        }
        total += sum / starts as f64;
    }
    total / MAX_SPAN_LEN as f64
}

fn oracle_mismatch(regime: Regime, kind: PolicyKind) -> Result<bool> {
    Ok(match (regime, kind) {
        (_, PolicyKind::CoinFlip | PolicyKind::Ramp) => {
            return domain(format!("`{kind}` has a random history and no exact oracle"))
        }
        (Regime::Matched, _) => false,
        (Regime::Gold, k) => k != PolicyKind::Gold,
        (Regime::NoPred, k) => k != PolicyKind::NoPred,
        (Regime::AllPred, k) => k != PolicyKind::AllPred,
        (Regime::As, k) => !k.is_selective(),
    })
}

/// Exact expected turn-level mean F1 for each policy.
///
/// Requires a noiseless profile with at most three turns, and for selective
/// policies a threshold that keeps known turns and drops unknown ones.
pub fn oracle_expected_f1(
    profile: &SimProfile,
    policies: &[SelectionPolicy],
    opts: &RunOptions,
) -> Result<Vec<(PolicyKind, f64)>> {
    profile.validate()?;
    let turns = profile.turns_per_dialogue;
    if turns > MAX_TURNS {
        return domain(format!(
            "oracle enumerates at most {MAX_TURNS} turns, got {turns}"
        ));
    }
    if !profile.is_noiseless() {
        return domain("oracle needs noise_sigma_base = noise_sigma_mc = 0");
    }
    let known = score_turn(
        &noiseless_record(profile, profile.sharpness_known)?,
        opts.tau_conf,
        opts.tau_uncer,
    )?
    .scores();
    let unknown = score_turn(
        &noiseless_record(profile, profile.sharpness_unknown)?,
        opts.tau_conf,
        opts.tau_uncer,
    )?
    .scores();
    let wrong_f1 = expected_wrong_f1(profile.context_len);

    policies
        .iter()
        .map(|policy| {
            let kind = policy.kind;
            let mismatch = oracle_mismatch(profile.regime, kind)?;
            if kind.is_selective() && !(eval_keep(known, policy)? && !eval_keep(unknown, policy)?) {
                return domain(format!(
                    "threshold {} of `{kind}` does not separate known from unknown turns",
                    policy.threshold
                ));
            }
            let mut expected = 0.0;
            for outcome in 0..(1u32 << turns) {
                let knows: Vec<bool> = (0..turns).map(|i| outcome >> i & 1 == 1).collect();
                let mut prob = 1.0;
                let mut f1 = 0.0;
                for i in 0..turns {
                    let first = match policy.history_window {
                        Some(w) => i.saturating_sub(w),
                        None => 0,
                    };
                    let prior = &knows[first..i];
                    let (correct, wrong) = match kind {
                        PolicyKind::Gold => (prior.len(), 0),
                        PolicyKind::NoPred => (0, 0),
                        PolicyKind::AllPred => {
                            let c = prior.iter().filter(|&&k| k).count();
                            (c, prior.len() - c)
                        }
                        _ => (prior.iter().filter(|&&k| k).count(), 0),
                    };
                    let penalty = if mismatch && !prior.is_empty() {
                        profile.mismatch_penalty
                    } else {
                        0.0
                    };
                    let p = (profile.p_know_base + profile.delta_correct * correct as f64
                        - profile.delta_wrong * wrong as f64
                        - penalty)
                        .clamp(0.01, 0.99);
                    if knows[i] {
                        prob *= p;
                        f1 += 1.0;
                    } else {
                        prob *= 1.0 - p;
                        f1 += wrong_f1;
                    }
                }
                expected += prob * f1 / turns as f64;
            }
            Ok((kind, expected))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(turns: usize) -> SimProfile {
        SimProfile {
            context_len: 8,
            turns_per_dialogue: turns,
            p_know_base: 0.6,
            delta_correct: 0.1,
            delta_wrong: 0.2,
            sharpness_known: 6.0,
            sharpness_unknown: 1.5,
            noise_sigma_base: 0.0,
            noise_sigma_mc: 0.0,
            n_mc_passes: 2,
            ..SimProfile::default()
        }
    }

    #[test]
    fn single_turn_closed_form() {
        let profile = tiny(1);
        let out = oracle_expected_f1(
            &profile,
            &[SelectionPolicy::of(PolicyKind::AllPred)],
            &RunOptions::default(),
        )
        .unwrap();
        let wrong = expected_wrong_f1(8);
        assert_eq!(wrong, 0.0);
        assert!((out[0].1 - (0.6 + 0.4 * wrong)).abs() < 1e-15);
    }

    #[test]
    fn two_turn_hand_enumeration() {
        // Selective policy with perfect separation: turn 2 gets +0.1 after a
        // known turn 1 and nothing after an unknown one.
        //   KK: 0.6 * 0.7 -> F1 1
        //   KU: 0.6 * 0.3 -> F1 1/2
        //   UK: 0.4 * 0.6 -> F1 1/2
        //   UU: 0.4 * 0.4 -> F1 0
        let expected = 0.42 + 0.5 * (0.18 + 0.24);
        let policy = SelectionPolicy::new(PolicyKind::AsUncer, 0.5).unwrap();
        let out = oracle_expected_f1(&tiny(2), &[policy], &RunOptions::default()).unwrap();
        assert!((out[0].1 - expected).abs() < 1e-12, "{}", out[0].1);

        // All predictions: an unknown turn 1 costs 0.2 on turn 2.
        //   KK: 0.6 * 0.7, KU: 0.6 * 0.3, UK: 0.4 * 0.4, UU: 0.4 * 0.6
        let expected = 0.42 + 0.5 * (0.18 + 0.16);
        let out = oracle_expected_f1(
            &tiny(2),
            &[SelectionPolicy::of(PolicyKind::AllPred)],
            &RunOptions::default(),
        )
        .unwrap();
        assert!((out[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_noise_long_dialogues_and_bad_thresholds() {
        let opts = RunOptions::default();
        let all = [SelectionPolicy::of(PolicyKind::AllPred)];
        assert!(oracle_expected_f1(&tiny(4), &all, &opts).is_err());
        let noisy = SimProfile {
            noise_sigma_mc: 0.1,
            ..tiny(2)
        };
        assert!(oracle_expected_f1(&noisy, &all, &opts).is_err());
        let keep_all = SelectionPolicy::new(PolicyKind::AsUncer, 1.0).unwrap();
        assert!(oracle_expected_f1(&tiny(2), &[keep_all], &opts).is_err());
        assert!(oracle_expected_f1(
            &tiny(2),
            &[SelectionPolicy::of(PolicyKind::CoinFlip)],
            &opts
        )
        .is_err());
    }

    #[test]
    fn neutral_world_equalizes_policies() {
        let profile = SimProfile {
            delta_correct: 0.0,
            delta_wrong: 0.0,
            mismatch_penalty: 0.0,
            ..tiny(3)
        };
        let policies = [
            SelectionPolicy::of(PolicyKind::Gold),
            SelectionPolicy::of(PolicyKind::NoPred),
            SelectionPolicy::of(PolicyKind::AllPred),
            SelectionPolicy::new(PolicyKind::AsConf, 0.7).unwrap(),
        ];
        let out = oracle_expected_f1(&profile, &policies, &RunOptions::default()).unwrap();
        for (_, f1) in &out {
            assert!((f1 - 0.6).abs() < 1e-12);
        }
    }
}
