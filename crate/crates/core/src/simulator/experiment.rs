use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    dialogue_turns, draw_latent, emit_record, p_know, substream, HistorySummary, SimModel,
    SimProfile, STREAM_POLICY, STREAM_RESCORE, STREAM_TURN,
};
use crate::error::{domain, Result};
use crate::pipeline::{run_dialogue, RunOptions};
use crate::policy::{median_threshold, PolicyKind, SelectionPolicy};
use crate::scoring::score_turn;

/// Replicate index reserved for the pilot split that fixes thresholds.
const PILOT_REPLICATE: u64 = u64::MAX;

/// How an experiment is run, independent of the world it runs in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_dialogues: usize,
    pub replicates: usize,
    pub seed: u64,
    pub tau_conf: f64,
    pub tau_uncer: f64,
    /// Added to the pilot median when deriving a threshold.
    pub threshold_offset: f64,
    /// Dialogues in the pilot split used for median thresholds.
    pub pilot_dialogues: usize,
    /// Explicit thresholds; selective kinds not listed use the pilot median.
    pub thresholds: BTreeMap<PolicyKind, f64>,
    pub lambda_rand: f64,
    pub history_window: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_dialogues: 200,
            replicates: 20,
            seed: 42,
            tau_conf: 1.0,
            tau_uncer: 1.0,
            threshold_offset: 0.0,
            pilot_dialogues: 200,
            thresholds: BTreeMap::new(),
            lambda_rand: 0.5,
            history_window: None,
        }
    }
}

impl ExperimentConfig {
    fn run_options(&self) -> RunOptions {
        RunOptions {
            tau_conf: self.tau_conf,
            tau_uncer: self.tau_uncer,
            ..RunOptions::default()
        }
    }
}

/// Compact per-turn outcome kept from a simulated dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub turn_index: u32,
    pub s_conf: f64,
    pub s_uncer: f64,
    pub correct: bool,
    pub kept: bool,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRun {
    pub replicate: usize,
    /// Turn-level mean F1 over all dialogues of the replicate.
    pub mean_f1: f64,
    pub dialogues: Vec<Vec<TurnOutcome>>,
}

impl ReplicateRun {
    pub fn turns(&self) -> impl Iterator<Item = &TurnOutcome> {
        self.dialogues.iter().flatten()
    }

    /// Mean F1 of turns with the given index.
    pub fn mean_f1_at(&self, turn_index: u32) -> Option<f64> {
        mean(
            self.turns()
                .filter(|t| t.turn_index == turn_index)
                .map(|t| t.f1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: SelectionPolicy,
    pub replicates: Vec<ReplicateRun>,
}

impl PolicyRun {
    pub fn kind(&self) -> PolicyKind {
        self.policy.kind
    }

    pub fn replicate_means(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r.mean_f1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub threshold: Option<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub replicates: usize,
}

/// Mean and spread of `a - b` over paired replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub mean: f64,
    pub std: f64,
    pub std_err: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub profile: SimProfile,
    pub config: ExperimentConfig,
    pub runs: Vec<PolicyRun>,
}

impl Experiment {
    pub fn run(&self, kind: PolicyKind) -> Option<&PolicyRun> {
        self.runs.iter().find(|r| r.kind() == kind)
    }

    pub fn summary(&self) -> Vec<PolicySummary> {
        self.runs
            .iter()
            .map(|run| {
                let means = run.replicate_means();
                let (mean_f1, std_f1) = mean_std(&means);
                PolicySummary {
                    policy: run.kind(),
                    threshold: run.kind().is_selective().then_some(run.policy.threshold),
                    mean_f1,
                    std_f1,
                    replicates: means.len(),
                }
            })
            .collect()
    }

    /// Paired difference of replicate mean F1, `a - b`.
    pub fn paired_difference(&self, a: PolicyKind, b: PolicyKind) -> Result<PairedDifference> {
        let (Some(ra), Some(rb)) = (self.run(a), self.run(b)) else {
            return domain(format!("experiment lacks `{a}` or `{b}`"));
        };
        let diffs: Vec<f64> = ra
            .replicate_means()
            .iter()
            .zip(rb.replicate_means())
            .map(|(x, y)| x - y)
            .collect();
        Ok(paired(&diffs))
    }

    /// Paired difference of mean F1 restricted to one turn index.
    pub fn paired_difference_at_turn(
        &self,
        a: PolicyKind,
        b: PolicyKind,
        turn_index: u32,
    ) -> Result<PairedDifference> {
        let (Some(ra), Some(rb)) = (self.run(a), self.run(b)) else {
            return domain(format!("experiment lacks `{a}` or `{b}`"));
        };
        let diffs: Vec<f64> = ra
            .replicates
            .iter()
            .zip(&rb.replicates)
            .filter_map(|(x, y)| Some(x.mean_f1_at(turn_index)? - y.mean_f1_at(turn_index)?))
            .collect();
        Ok(paired(&diffs))
    }

    /// Writes `policy,replicate,mean_f1` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            policy: &'a str,
            replicate: usize,
            mean_f1: f64,
        }
        let mut writer = csv::Writer::from_writer(out);
        if self.runs.is_empty() {
            writer.write_record(["policy", "replicate", "mean_f1"])?;
        }
        for run in &self.runs {
            for rep in &run.replicates {
                writer.serialize(Row {
                    policy: run.kind().name(),
                    replicate: rep.replicate,
                    mean_f1: rep.mean_f1,
                })?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum / n as f64)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, var.sqrt())
}

fn paired(diffs: &[f64]) -> PairedDifference {
    let (mean, std) = mean_std(diffs);
    PairedDifference {
        mean,
        std,
        std_err: std / (diffs.len() as f64).sqrt(),
        n: diffs.len(),
    }
}

fn simulate_dialogue(
    profile: &SimProfile,
    policy: &SelectionPolicy,
    cfg: &ExperimentConfig,
    replicate: u64,
    dialogue: u64,
) -> Result<Vec<TurnOutcome>> {
    let turns = dialogue_turns(profile, cfg.seed, replicate, dialogue)?;
    let mut model = SimModel::new(profile, policy, &turns, cfg.seed, replicate, dialogue)?;
    let mut rng = substream(cfg.seed, &[STREAM_POLICY, replicate, dialogue]);
    let result = run_dialogue(&mut model, &turns, policy, &cfg.run_options(), &mut rng)?;
    Ok(result
        .per_turn
        .iter()
        .map(|t| TurnOutcome {
            turn_index: t.turn_index,
            s_conf: t.score.s_conf,
            s_uncer: t.score.s_uncer,
            correct: t.score.correct,
            kept: t.kept,
            f1: t.f1,
        })
        .collect())
}

fn simulate_replicate(
    profile: &SimProfile,
    policy: &SelectionPolicy,
    cfg: &ExperimentConfig,
    replicate: usize,
) -> Result<ReplicateRun> {
    let dialogues = (0..cfg.n_dialogues as u64)
        .map(|d| simulate_dialogue(profile, policy, cfg, replicate as u64, d))
        .collect::<Result<Vec<_>>>()?;
    let mean_f1 = mean(dialogues.iter().flatten().map(|t| t.f1)).unwrap_or(0.0);
    Ok(ReplicateRun {
        replicate,
        mean_f1,
        dialogues,
    })
}

/// Scores of a keep-everything pilot split, used to fix median thresholds.
pub(crate) fn pilot_outcomes(
    profile: &SimProfile,
    cfg: &ExperimentConfig,
) -> Result<Vec<TurnOutcome>> {
    let policy = SelectionPolicy::of(PolicyKind::AllPred).with_window(cfg.history_window);
    let outcomes = (0..cfg.pilot_dialogues as u64)
        .into_par_iter()
        .map(|d| simulate_dialogue(profile, &policy, cfg, PILOT_REPLICATE, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(outcomes.into_iter().flatten().collect())
}

/// Threshold for a selective kind: explicit if configured, else the pilot
/// median plus the configured offset.
pub(crate) fn resolve_threshold(
    kind: PolicyKind,
    cfg: &ExperimentConfig,
    pilot: &mut Option<Vec<TurnOutcome>>,
    profile: &SimProfile,
) -> Result<f64> {
    if let Some(&t) = cfg.thresholds.get(&kind) {
        return Ok(t);
    }
    if pilot.is_none() {
        *pilot = Some(pilot_outcomes(profile, cfg)?);
    }
    let scores: Vec<f64> = pilot
        .as_ref()
        .expect("pilot filled above")
        .iter()
        .filter_map(|t| {
            kind.selection_score(crate::model::Scores {
                s_conf: t.s_conf,
                s_uncer: t.s_uncer,
            })
        })
        .collect();
    median_threshold(&scores, cfg.threshold_offset)
}

fn build_policy(
    kind: PolicyKind,
    threshold: Option<f64>,
    cfg: &ExperimentConfig,
) -> Result<SelectionPolicy> {
    let base = match threshold {
        Some(t) => SelectionPolicy::new(kind, t)?,
        None => SelectionPolicy::of(kind),
    };
    Ok(base
        .with_lambda_rand(cfg.lambda_rand)?
        .with_window(cfg.history_window))
}

/// Runs every policy over the same seeded dialogues.
///
/// Replicates run in parallel; results are ordered by replicate index, so
/// the output does not depend on thread count.
pub fn run_experiment(
    profile: &SimProfile,
    policies: &[PolicyKind],
    cfg: &ExperimentConfig,
) -> Result<Experiment> {
    profile.validate()?;
    if cfg.replicates == 0 || cfg.n_dialogues == 0 {
        return domain("experiment needs at least one replicate and one dialogue");
    }
    let mut pilot = None;
    let mut resolved = Vec::with_capacity(policies.len());
    for &kind in policies {
        let threshold = if kind.is_selective() {
            Some(resolve_threshold(kind, cfg, &mut pilot, profile)?)
        } else {
            None
        };
        resolved.push(build_policy(kind, threshold, cfg)?);
    }

    let runs = resolved
        .into_iter()
        .map(|policy| {
            let replicates = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| simulate_replicate(profile, &policy, cfg, r))
                .collect::<Result<Vec<_>>>()?;
            Ok(PolicyRun { policy, replicates })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Experiment {
        profile: profile.clone(),
        config: cfg.clone(),
        runs,
    })
}

/// One point of an F1-versus-threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: PolicyKind,
    pub threshold: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Mean F1 of a selective kind at each threshold.
pub fn threshold_sweep(
    profile: &SimProfile,
    kind: PolicyKind,
    thresholds: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepRow>> {
    if !kind.is_selective() {
        return domain(format!("cannot sweep thresholds of `{kind}`"));
    }
    thresholds
        .iter()
        .map(|&t| {
            let mut c = cfg.clone();
            c.thresholds.insert(kind, t);
            let exp = run_experiment(profile, &[kind], &c)?;
            let (mean_f1, std_f1) = mean_std(&exp.runs[0].replicate_means());
            Ok(SweepRow {
                policy: kind,
                threshold: t,
                mean_f1,
                std_f1,
            })
        })
        .collect()
}

/// Average over turns of the standard deviation of the uncertainty score
/// across `rescorings` independent sets of dropout passes.
///
/// The know state, target and shared base logits of each turn are fixed;
/// only the per-pass noise is redrawn.
pub fn mask_count_spread(
    profile: &SimProfile,
    n_turns: usize,
    rescorings: usize,
    seed: u64,
) -> Result<f64> {
    profile.validate()?;
    if n_turns == 0 || rescorings < 2 {
        return domain("need at least one turn and two rescorings");
    }
    let spreads = (0..n_turns as u64)
        .into_par_iter()
        .map(|i| {
            let turns = dialogue_turns(profile, seed, 0, i)?;
            let turn = &turns[0];
            let mut rng = substream(seed, &[STREAM_TURN, 0, i, 1]);
            let latent = draw_latent(
                profile,
                turn.gold,
                p_know(profile, &HistorySummary::default()),
                &mut rng,
            )?;
            let scores = (0..rescorings as u64)
                .map(|j| {
                    let mut rng = substream(seed, &[STREAM_RESCORE, i, j]);
                    let record = emit_record(
                        profile,
                        &latent,
                        &turn.dialogue_id,
                        turn.turn_index,
                        turn.gold,
                        &mut rng,
                    )?;
                    Ok(score_turn(&record, 1.0, 1.0)?.s_uncer)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(mean_std(&scores).1)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(spreads.iter().sum::<f64>() / spreads.len() as f64)
}
