use std::io::Write;

use anyhow::Result;
use convcal::config::Config;
use convcal::score_turn;
use serde::Serialize;

use crate::args::ScoreArgs;
use crate::io::{open_output, records};

#[derive(Serialize)]
struct ScoreLine<'a> {
    dialogue_id: &'a str,
    turn_index: u32,
    s_conf: f64,
    s_uncer: f64,
    pred_start: usize,
    pred_end: usize,
    correct: bool,
}

/// Streams one output line per input record, in input order.
pub fn run(args: &ScoreArgs, config: &Config, strict: bool) -> Result<()> {
    let tau_conf = args.tau.tau_conf.unwrap_or(config.scoring.tau_conf);
    let tau_uncer = args.tau.tau_uncer.unwrap_or(config.scoring.tau_uncer);
    let mut out = open_output(args.out.as_deref())?;
    for record in records(&args.input, strict)? {
        let record = record?;
        let s = score_turn(&record, tau_conf, tau_uncer)?;
        serde_json::to_writer(
            &mut out,
            &ScoreLine {
                dialogue_id: record.dialogue_id(),
                turn_index: record.turn_index(),
                s_conf: s.s_conf,
                s_uncer: s.s_uncer,
                pred_start: s.pred.start,
                pred_end: s.pred.end,
                correct: s.correct,
            },
        )?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
