//! Calibrated selection of predicted answers for conversational question
//! answering.
//!
//! A conversational QA model answers each turn with the earlier questions
//! and answers as context. At deployment the earlier answers are the
//! model's own predictions, and wrong ones poison later turns. This crate
//! scores every prediction by confidence and by MC-dropout uncertainty,
//! calibrates those scores with temperature scaling, and decides which
//! predicted answers may enter the history of later turns.
//!
//! The crate is model agnostic: it consumes [`LogitRecord`]s (raw start/end
//! logits from one deterministic pass plus `N` dropout passes), either
//! dumped from a real model or produced by the [`simulator`].
//!
//! | module | purpose |
//! |---|---|
//! | [`model`] | domain types and the JSONL record format |
//! | [`scoring`] | softmax, confidence, MC aggregation, entropy uncertainty |
//! | [`calibration`] | reliability bins, ECE/UCE, temperature fitting |
//! | [`policy`] | threshold filtering, training-time sampling, schedules |
//! | [`pipeline`] | history assembly, dialogue runs, span F1, reports |
//! | [`simulator`] | synthetic QA world, paired experiments, exact oracle |
//! | [`config`] | the JSON configuration file |
//!
//! ```
//! use convcal::{score_turn, LogitRecord, Span};
//!
//! let sharp = vec![8.0, 0.0, 0.0, 0.0];
//! let record = LogitRecord::new(
//!     "dialogue-1",
//!     1,
//!     Span { start: 0, end: 0 },
//!     sharp.clone(),
//!     sharp.clone(),
//!     vec![sharp.clone(); 3],
//!     vec![sharp; 3],
//! )?;
//! let score = score_turn(&record, 1.0, 1.0)?;
//! assert!(score.correct);
//! assert!(score.s_conf > 0.99 && score.s_uncer < 0.05);
//! # Ok::<(), convcal::Error>(())
//! ```
//!
//! The guide under `book/` walks through each stage; its code listings are
//! compiled and run as doctests of this crate.

pub mod calibration;
pub mod config;
mod error;
pub mod model;
pub mod pipeline;
pub mod policy;
pub mod scoring;
pub mod simulator;

pub use calibration::{
    bin_stats, calibration_report, expected_error, fit_temperature, reliability_rows, BinStats,
    CalibrationReport, ScoreMode, TemperatureFit, TemperatureGrid,
};
pub use error::{Error, Result};
pub use model::{
    parse_record, serialize_record, AnswerSource, HistoryEntry, LogitRecord, RecordReader, Scores,
    Span, TurnScore,
};
pub use pipeline::{
    aggregate, assemble_history, run_dialogue, token_f1, DialogueResult, GroupBy, History,
    RunOptions, TurnInput, TurnModel,
};
pub use policy::{
    baseline_schedule, eval_keep, median_threshold, train_include, PolicyKind, SelectionPolicy,
};
pub use scoring::{confidence, mc_aggregate, score_turn, softmax, uncertainty};

// Every chapter of the guide, so `cargo test --doc` runs its listings.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
