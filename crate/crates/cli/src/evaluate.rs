use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use anyhow::Result;
use convcal::config::Config;
use convcal::pipeline::{write_report_csv, ReportRow};
use convcal::simulator::substream;
use convcal::{
    aggregate, median_threshold, run_dialogue, score_turn, DialogueResult, Error, GroupBy, History,
    LogitRecord, PolicyKind, RunOptions, Scores, SelectionPolicy, TurnInput,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{EvaluateArgs, GroupArg};
use crate::io::{open_output, read_all, write_json};

/// Records of one dialogue in turn order.
struct Dialogue {
    id: String,
    turns: Vec<LogitRecord>,
}

/// Groups records by dialogue in order of first appearance and checks that
/// each dialogue has turns `1..=n` exactly once.
fn group(records: Vec<LogitRecord>) -> Result<Vec<Dialogue>, Error> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dialogues: Vec<Dialogue> = Vec::new();
    for r in records {
        let i = *index.entry(r.dialogue_id().to_string()).or_insert_with(|| {
            dialogues.push(Dialogue {
                id: r.dialogue_id().to_string(),
                turns: Vec::new(),
            });
            dialogues.len() - 1
        });
        dialogues[i].turns.push(r);
    }
    for d in &mut dialogues {
        d.turns.sort_by_key(|r| r.turn_index());
        for (expected, r) in (1u32..).zip(&d.turns) {
            if r.turn_index() != expected {
                return Err(Error::Domain(format!(
                    "dialogue `{}`: expected turn {expected}, found turn {} (turn indices must run 1..n without gaps or repeats)",
                    d.id,
                    r.turn_index()
                )));
            }
        }
    }
    Ok(dialogues)
}

/// Replays one dialogue; the dumped logits do not depend on the history.
fn replay(
    d: &Dialogue,
    policy: &SelectionPolicy,
    opts: &RunOptions,
) -> convcal::Result<DialogueResult> {
    let inputs: Vec<TurnInput> = d
        .turns
        .iter()
        .map(|r| TurnInput {
            dialogue_id: d.id.clone(),
            turn_index: r.turn_index(),
            question_id: format!("{}/q{}", d.id, r.turn_index()),
            gold: r.gold(),
        })
        .collect();
    let mut model = |t: &TurnInput, _: &History| Ok(d.turns[t.turn_index as usize - 1].clone());
    // Evaluation never draws from the generator.
    let mut rng = substream(0, &[]);
    run_dialogue(&mut model, &inputs, policy, opts, &mut rng)
}

fn scores_of(records: &[LogitRecord], opts: &RunOptions) -> convcal::Result<Vec<Scores>> {
    records
        .par_iter()
        .map(|r| Ok(score_turn(r, opts.tau_conf, opts.tau_uncer)?.scores()))
        .collect()
}

#[derive(Serialize)]
struct PolicyEntry {
    policy: PolicyKind,
    threshold: Option<f64>,
    count: usize,
    mean_f1: f64,
}

#[derive(Serialize)]
struct Summary {
    dialogues: usize,
    turns: usize,
    tau_conf: f64,
    tau_uncer: f64,
    policies: Vec<PolicyEntry>,
}

pub fn run(args: &EvaluateArgs, config: &Config, strict: bool) -> Result<()> {
    let opts = RunOptions {
        tau_conf: args.tau.tau_conf.unwrap_or(config.scoring.tau_conf),
        tau_uncer: args.tau.tau_uncer.unwrap_or(config.scoring.tau_uncer),
        ..RunOptions::default()
    };
    let kinds: Vec<PolicyKind> = if args.policy.is_empty() {
        vec![config.policy.map_or(PolicyKind::AllPred, |p| p.kind)]
    } else {
        args.policy.clone()
    };
    let records = read_all(&args.input, strict)?;
    let turns = records.len();

    // Scores behind median thresholds, computed once if needed.
    let mut median_source: Option<Vec<Scores>> = None;
    let mut median_scores = |path: Option<&Path>| -> Result<Vec<Scores>> {
        if let Some(s) = &median_source {
            return Ok(s.clone());
        }
        let s = match path {
            Some(p) => scores_of(&read_all(p, strict)?, &opts)?,
            None => scores_of(&records, &opts)?,
        };
        median_source = Some(s.clone());
        Ok(s)
    };

    let mut policies = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let base = config
            .policy
            .filter(|p| p.kind == kind)
            .unwrap_or_else(|| SelectionPolicy::of(kind));
        if !kind.is_selective() {
            policies.push(base);
            continue;
        }
        let configured = config
            .policy
            .filter(|p| p.kind == kind)
            .map(|p| p.threshold);
        let threshold = match (args.threshold, args.threshold_from.as_deref(), configured) {
            (Some(t), _, _) => t,
            (None, Some("median"), _) | (None, None, None) => {
                median_of(kind, &median_scores(None)?, args.threshold_offset)?
            }
            (None, Some(path), _) => median_of(
                kind,
                &median_scores(Some(Path::new(path)))?,
                args.threshold_offset,
            )?,
            (None, None, Some(t)) => t,
        };
        policies.push(base.with_threshold(threshold)?);
    }

    let dialogues = group(records)?;
    let group_by = match args.group_by {
        GroupArg::None => GroupBy::None,
        GroupArg::Turn => GroupBy::TurnIndex,
    };
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for policy in &policies {
        let results = dialogues
            .par_iter()
            .map(|d| replay(d, policy, &opts))
            .collect::<convcal::Result<Vec<_>>>()?;
        let name = policy.kind.name();
        for row in aggregate(&results, group_by) {
            rows.push(ReportRow::new(name, &row));
        }
        let overall = aggregate(&results, GroupBy::None);
        let (count, mean_f1) = overall.first().map_or((0, 0.0), |r| (r.count, r.mean_f1));
        entries.push(PolicyEntry {
            policy: policy.kind,
            threshold: policy.kind.is_selective().then_some(policy.threshold),
            count,
            mean_f1,
        });
    }

    let mut out = open_output(args.out.as_deref())?;
    write_report_csv(&rows, &mut out)?;
    out.flush()?;
    if let Some(path) = &args.summary {
        write_json(
            path,
            &Summary {
                dialogues: dialogues.len(),
                turns,
                tau_conf: opts.tau_conf,
                tau_uncer: opts.tau_uncer,
                policies: entries,
            },
        )?;
    }
    Ok(())
}

fn median_of(kind: PolicyKind, scores: &[Scores], offset: f64) -> convcal::Result<f64> {
    let values: Vec<f64> = scores
        .iter()
        .filter_map(|&s| kind.selection_score(s))
        .collect();
    median_threshold(&values, offset)
}
