//! Turn-by-turn evaluation of a dialogue under a history policy.
//!
//! Each turn sees a history assembled from the decisions made on earlier
//! turns only. Questions are always carried forward; whether the answer of a
//! prior turn is carried depends on the policy and on that turn's keep
//! decision.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnswerSource, HistoryEntry, LogitRecord, Span, TurnScore};
use crate::policy::{baseline_schedule, eval_keep, train_include, PolicyKind, SelectionPolicy};
use crate::scoring::score_turn;

/// What the model is asked about at one turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnInput {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub question_id: String,
    pub gold: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryTurn {
    pub question_id: String,
    pub answer: Option<Span>,
    pub source: AnswerSource,
}

/// Prior turns handed to the model, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    pub turns: Vec<HistoryTurn>,
}

impl History {
    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn answers(&self) -> impl Iterator<Item = (usize, Span)> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.answer.map(|a| (i, a)))
    }
}

/// Builds the history for the next turn from the entries of prior turns.
pub fn assemble_history(prior: &[HistoryEntry], policy: &SelectionPolicy) -> History {
    let skip = match policy.history_window {
        Some(w) => prior.len().saturating_sub(w),
        None => 0,
    };
    let turns = prior[skip..]
        .iter()
        .map(|e| {
            let answer = match policy.kind {
                PolicyKind::NoPred => None,
                PolicyKind::Gold
                | PolicyKind::AllPred
                | PolicyKind::CoinFlip
                | PolicyKind::Ramp => e.answer,
                PolicyKind::AsConf | PolicyKind::AsUncer | PolicyKind::AsCombine => {
                    e.answer.filter(|_| e.kept)
                }
            };
            HistoryTurn {
                question_id: e.question_id.clone(),
                answer,
                source: e.source,
            }
        })
        .collect();
    History { turns }
}

/// Token-position F1 between two inclusive spans.
pub fn token_f1(pred: Span, gold: Span) -> f64 {
    let overlap = pred.overlap(&gold);
    2.0 * overlap as f64 / (pred.len() + gold.len()) as f64
}

/// Produces one turn's logits given the assembled history.
pub trait TurnModel {
    fn predict(&mut self, turn: &TurnInput, history: &History) -> Result<LogitRecord>;
}

impl<F> TurnModel for F
where
    F: FnMut(&TurnInput, &History) -> Result<LogitRecord>,
{
    fn predict(&mut self, turn: &TurnInput, history: &History) -> Result<LogitRecord> {
        self(turn, history)
    }
}

/// Evaluation filters deterministically; training samples inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phase {
    #[default]
    Eval,
    Train {
        step: usize,
        total_steps: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub tau_conf: f64,
    pub tau_uncer: f64,
    pub phase: Phase,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            tau_conf: 1.0,
            tau_uncer: 1.0,
            phase: Phase::Eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnResult {
    pub turn_index: u32,
    pub score: TurnScore,
    /// Whether this turn's predicted answer goes into later histories.
    pub kept: bool,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueResult {
    pub dialogue_id: String,
    pub per_turn: Vec<TurnResult>,
    pub mean_f1: f64,
}

/// Runs one dialogue turn by turn.
///
/// In [`Phase::Eval`] the random-mixing baselines are evaluated like
/// `all_pred`. `rng` is only drawn from in [`Phase::Train`].
pub fn run_dialogue<M, R>(
    model: &mut M,
    turns: &[TurnInput],
    policy: &SelectionPolicy,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<DialogueResult>
where
    M: TurnModel + ?Sized,
    R: Rng + ?Sized,
{
    let Some(first) = turns.first() else {
        return crate::error::domain("dialogue has no turns");
    };
    let mut entries: Vec<HistoryEntry> = Vec::with_capacity(turns.len());
    let mut per_turn = Vec::with_capacity(turns.len());

    for turn in turns {
        let history = assemble_history(&entries, policy);
        let wrap = |source: Error| Error::Turn {
            dialogue_id: turn.dialogue_id.clone(),
            turn_index: turn.turn_index,
            source: Box::new(source),
        };
        let record = model.predict(turn, &history).map_err(wrap)?;
        let mut score = score_turn(&record, opts.tau_conf, opts.tau_uncer).map_err(wrap)?;
        // The model's own gold may differ from the caller's; the caller wins.
        score.correct = score.pred == turn.gold;

        let (entry, kept) = next_entry(turn, &score, policy, opts.phase, rng).map_err(wrap)?;
        entries.push(entry);
        per_turn.push(TurnResult {
            turn_index: turn.turn_index,
            f1: token_f1(score.pred, turn.gold),
            score,
            kept,
        });
    }

    let mean_f1 = per_turn.iter().map(|t| t.f1).sum::<f64>() / per_turn.len() as f64;
    Ok(DialogueResult {
        dialogue_id: first.dialogue_id.clone(),
        per_turn,
        mean_f1,
    })
}

fn next_entry<R: Rng + ?Sized>(
    turn: &TurnInput,
    score: &TurnScore,
    policy: &SelectionPolicy,
    phase: Phase,
    rng: &mut R,
) -> Result<(HistoryEntry, bool)> {
    let predicted = |kept| HistoryEntry {
        question_id: turn.question_id.clone(),
        answer: Some(score.pred),
        source: AnswerSource::Predicted,
        kept,
    };
    let gold = HistoryEntry {
        question_id: turn.question_id.clone(),
        answer: Some(turn.gold),
        source: AnswerSource::Gold,
        kept: true,
    };
    let scores = score.scores();
    Ok(match (policy.kind, phase) {
        (PolicyKind::Gold, _) => (gold, true),
        (PolicyKind::CoinFlip | PolicyKind::Ramp, Phase::Eval) => (predicted(true), true),
        (PolicyKind::CoinFlip, Phase::Train { .. }) => {
            if rng.random::<f64>() < policy.lambda_rand {
                (predicted(true), true)
            } else {
                (gold, false)
            }
        }
        (PolicyKind::Ramp, Phase::Train { step, total_steps }) => {
            let lambda = baseline_schedule(PolicyKind::Ramp, step, total_steps)?;
            if rng.random::<f64>() < lambda {
                (predicted(true), true)
            } else {
                (gold, false)
            }
        }
        (kind, Phase::Train { .. }) if kind.is_selective() => {
            let keep = train_include(scores, policy, rng)?;
            (predicted(keep), keep)
        }
        _ => {
            let keep = eval_keep(scores, policy)?;
            (predicted(keep), keep)
        }
    })
}

/// Aggregation key for report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    All,
    Turn(u32),
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::All => f.write_str("all"),
            Group::Turn(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    None,
    TurnIndex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub group: Group,
    /// Number of turns in the group.
    pub count: usize,
    pub mean_f1: f64,
}

/// Turn-level mean F1, overall or per turn index.
pub fn aggregate(results: &[DialogueResult], group_by: GroupBy) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<Group, (usize, f64)> = BTreeMap::new();
    for turn in results.iter().flat_map(|r| &r.per_turn) {
        let key = match group_by {
            GroupBy::None => Group::All,
            GroupBy::TurnIndex => Group::Turn(turn.turn_index),
        };
        let slot = groups.entry(key).or_default();
        slot.0 += 1;
        slot.1 += turn.f1;
    }
    groups
        .into_iter()
        .map(|(group, (count, sum))| AggregateRow {
            group,
            count,
            mean_f1: sum / count as f64,
        })
        .collect()
}

/// One line of the `policy,group,count,mean_f1` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    pub group: String,
    pub count: usize,
    pub mean_f1: f64,
}

impl ReportRow {
    pub fn new(policy: &str, row: &AggregateRow) -> Self {
        ReportRow {
            policy: policy.to_string(),
            group: row.group.to_string(),
            count: row.count,
            mean_f1: row.mean_f1,
        }
    }
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    if rows.is_empty() {
        writer.write_record(["policy", "group", "count", "mean_f1"])?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn span(s: usize, e: usize) -> Span {
        Span { start: s, end: e }
    }

    fn entry(q: &str, a: Span, kept: bool) -> HistoryEntry {
        HistoryEntry {
            question_id: q.into(),
            answer: Some(a),
            source: AnswerSource::Predicted,
            kept,
        }
    }

    #[test]
    fn first_turn_history_is_empty() {
        for kind in PolicyKind::ALL {
            assert!(assemble_history(&[], &SelectionPolicy::of(kind)).is_empty());
        }
    }

    #[test]
    fn all_pred_keeps_every_answer() {
        let prior = [entry("q1", span(0, 1), true), entry("q2", span(2, 2), true)];
        let h = assemble_history(&prior, &SelectionPolicy::of(AllPred));
        assert_eq!(h.turns.len(), 2);
        assert_eq!(h.turns[0].answer, Some(span(0, 1)));
        assert_eq!(h.turns[1].answer, Some(span(2, 2)));
    }

    #[test]
    fn selective_drops_unkept_answers_but_keeps_questions() {
        let prior = [
            entry("q1", span(0, 1), false),
            entry("q2", span(2, 2), true),
        ];
        let h = assemble_history(&prior, &SelectionPolicy::of(AsUncer));
        assert_eq!(h.turns[0].question_id, "q1");
        assert_eq!(h.turns[0].answer, None);
        assert_eq!(h.turns[1].answer, Some(span(2, 2)));

        let none = assemble_history(&prior, &SelectionPolicy::of(NoPred));
        assert_eq!(none.turns.len(), 2);
        assert!(none.answers().next().is_none());
    }

    #[test]
    fn window_keeps_most_recent() {
        let prior = [
            entry("q1", span(0, 0), true),
            entry("q2", span(1, 1), true),
            entry("q3", span(2, 2), true),
        ];
        let policy = SelectionPolicy::of(AllPred).with_window(Some(2));
        let h = assemble_history(&prior, &policy);
        let ids: Vec<_> = h.turns.iter().map(|t| t.question_id.as_str()).collect();
        assert_eq!(ids, ["q2", "q3"]);
        let zero = assemble_history(&prior, &SelectionPolicy::of(AllPred).with_window(Some(0)));
        assert!(zero.is_empty());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(token_f1(span(3, 5), span(3, 5)), 1.0);
        assert_eq!(token_f1(span(0, 1), span(1, 2)), 0.5);
        assert_eq!(token_f1(span(0, 1), span(4, 6)), 0.0);
    }

    #[test]
    fn turn_model_errors_name_the_turn() {
        let turns = [TurnInput {
            dialogue_id: "d9".into(),
            turn_index: 4,
            question_id: "q".into(),
            gold: span(0, 0),
        }];
        let mut failing = |_: &TurnInput, _: &History| -> Result<LogitRecord> {
            Err(Error::Domain("boom".into()))
        };
        let err = run_dialogue(
            &mut failing,
            &turns,
            &SelectionPolicy::of(AllPred),
            &RunOptions::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Turn { turn_index: 4, ref dialogue_id, .. } if dialogue_id == "d9")
        );
        assert!(run_dialogue(
            &mut failing,
            &[],
            &SelectionPolicy::of(AllPred),
            &RunOptions::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .is_err());
    }

    #[test]
    fn aggregate_groups() {
        let result = |id: &str, f1s: &[f64]| DialogueResult {
            dialogue_id: id.into(),
            per_turn: f1s
                .iter()
                .enumerate()
                .map(|(i, &f1)| TurnResult {
                    turn_index: i as u32 + 1,
                    score: TurnScore {
                        pred: span(0, 0),
                        s_conf: 0.5,
                        s_uncer: 0.5,
                        p_start: vec![0.5, 0.5],
                        p_end: vec![0.5, 0.5],
                        correct: false,
                    },
                    kept: true,
                    f1,
                })
                .collect(),
            mean_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        };
        let a = result("a", &[1.0, 0.0]);
        let single = aggregate(std::slice::from_ref(&a), GroupBy::None);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].mean_f1, a.mean_f1);

        let b = result("b", &[0.5, 1.0, 0.25]);
        let rows = aggregate(&[a, b], GroupBy::TurnIndex);
        assert_eq!(rows.len(), 3);
        assert_eq!(
            (rows[0].group, rows[0].count, rows[0].mean_f1),
            (Group::Turn(1), 2, 0.75)
        );
        assert_eq!((rows[1].count, rows[1].mean_f1), (2, 0.5));
        assert_eq!((rows[2].count, rows[2].mean_f1), (1, 0.25));

        let mut buf = Vec::new();
        let report: Vec<_> = rows.iter().map(|r| ReportRow::new("all_pred", r)).collect();
        write_report_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("policy,group,count,mean_f1"));
        assert_eq!(text.lines().nth(1), Some("all_pred,1,2,0.75"));
    }
}
