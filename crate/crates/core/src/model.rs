//! Domain types shared by every stage, and the JSONL wire format for
//! [`LogitRecord`].
//!
//! A record holds one turn's raw model output over a context of `K` token
//! positions: one deterministic (dropout off) start/end logit pair plus `N`
//! stochastic passes with dropout active. Spans are inclusive on both ends,
//! so `start == end` is a one-token answer.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Keys of the wire format, in emission order.
pub const RECORD_KEYS: [&str; 9] = [
    "dialogue_id",
    "turn_index",
    "context_len",
    "gold_start",
    "gold_end",
    "det_start_logits",
    "det_end_logits",
    "mc_start_logits",
    "mc_end_logits",
];

/// Inclusive token span `[start, end]` over a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return crate::error::domain(format!("span start {start} exceeds end {end}"));
        }
        Ok(Span { start, end })
    }

    /// Number of token positions covered.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    /// Inclusive spans always cover at least one position.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of positions shared with `other`.
    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

/// One turn's raw model output.
///
/// Immutable once built; every constructor path validates the invariants,
/// so holding a `LogitRecord` means it is well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    dialogue_id: String,
    turn_index: u32,
    gold: Span,
    det_start: Vec<f64>,
    det_end: Vec<f64>,
    mc_start: Vec<Vec<f64>>,
    mc_end: Vec<Vec<f64>>,
}

struct Violation {
    field: &'static str,
    message: String,
}

fn violation<T>(field: &'static str, message: impl Into<String>) -> Result<T, Violation> {
    Err(Violation {
        field,
        message: message.into(),
    })
}

impl LogitRecord {
    /// Builds a record, checking every invariant. `K` is the length of the
    /// deterministic start vector.
    pub fn new(
        dialogue_id: impl Into<String>,
        turn_index: u32,
        gold: Span,
        det_start: Vec<f64>,
        det_end: Vec<f64>,
        mc_start: Vec<Vec<f64>>,
        mc_end: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let record = LogitRecord {
            dialogue_id: dialogue_id.into(),
            turn_index,
            gold,
            det_start,
            det_end,
            mc_start,
            mc_end,
        };
        let context_len = record.det_start.len();
        record
            .validate(context_len)
            .map_err(|v| Error::Domain(format!("`{}`: {}", v.field, v.message)))?;
        Ok(record)
    }

    fn validate(&self, context_len: usize) -> Result<(), Violation> {
        if self.turn_index < 1 {
            return violation("turn_index", "must be >= 1");
        }
        if context_len < 2 {
            return violation("context_len", format!("must be >= 2, got {context_len}"));
        }
        if self.gold.start > self.gold.end {
            return violation(
                "gold_end",
                format!(
                    "gold_start {} exceeds gold_end {}",
                    self.gold.start, self.gold.end
                ),
            );
        }
        if self.gold.end >= context_len {
            return violation(
                "gold_end",
                format!(
                    "{} is outside context of length {context_len}",
                    self.gold.end
                ),
            );
        }
        check_vector("det_start_logits", &self.det_start, context_len)?;
        check_vector("det_end_logits", &self.det_end, context_len)?;
        if self.mc_start.is_empty() {
            return violation("mc_start_logits", "needs at least one pass");
        }
        if self.mc_start.len() != self.mc_end.len() {
            return violation(
                "mc_end_logits",
                format!(
                    "{} passes but mc_start_logits has {}",
                    self.mc_end.len(),
                    self.mc_start.len()
                ),
            );
        }
        for pass in &self.mc_start {
            check_vector("mc_start_logits", pass, context_len)?;
        }
        for pass in &self.mc_end {
            check_vector("mc_end_logits", pass, context_len)?;
        }
        Ok(())
    }

    pub fn dialogue_id(&self) -> &str {
        &self.dialogue_id
    }

    pub fn turn_index(&self) -> u32 {
        self.turn_index
    }

    /// Number of context positions `K`.
    pub fn context_len(&self) -> usize {
        self.det_start.len()
    }

    pub fn gold(&self) -> Span {
        self.gold
    }

    pub fn det_start_logits(&self) -> &[f64] {
        &self.det_start
    }

    pub fn det_end_logits(&self) -> &[f64] {
        &self.det_end
    }

    pub fn mc_start_logits(&self) -> &[Vec<f64>] {
        &self.mc_start
    }

    pub fn mc_end_logits(&self) -> &[Vec<f64>] {
        &self.mc_end
    }

    /// Number of dropout passes `N`.
    pub fn passes(&self) -> usize {
        self.mc_start.len()
    }

    /// Returns a copy with every logit multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let scale = |v: &[f64]| v.iter().map(|x| x * factor).collect::<Vec<_>>();
        LogitRecord::new(
            self.dialogue_id.clone(),
            self.turn_index,
            self.gold,
            scale(&self.det_start),
            scale(&self.det_end),
            self.mc_start.iter().map(|p| scale(p)).collect(),
            self.mc_end.iter().map(|p| scale(p)).collect(),
        )
    }

    /// Returns a copy with a different gold span.
    pub fn with_gold(&self, gold: Span) -> Result<Self> {
        let mut copy = self.clone();
        copy.gold = gold;
        copy.validate(copy.context_len())
            .map_err(|v| Error::Domain(format!("`{}`: {}", v.field, v.message)))?;
        Ok(copy)
    }
}

fn check_vector(field: &'static str, v: &[f64], context_len: usize) -> Result<(), Violation> {
    if v.len() != context_len {
        return violation(
            field,
            format!(
                "length {} does not match context_len {context_len}",
                v.len()
            ),
        );
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return violation(field, format!("non-finite entry {bad}"));
    }
    Ok(())
}

#[derive(Serialize)]
struct WireOut<'a> {
    dialogue_id: &'a str,
    turn_index: u32,
    context_len: usize,
    gold_start: usize,
    gold_end: usize,
    det_start_logits: &'a [f64],
    det_end_logits: &'a [f64],
    mc_start_logits: &'a [Vec<f64>],
    mc_end_logits: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct WireIn {
    dialogue_id: String,
    turn_index: u32,
    context_len: usize,
    gold_start: usize,
    gold_end: usize,
    det_start_logits: Vec<f64>,
    det_end_logits: Vec<f64>,
    mc_start_logits: Vec<Vec<f64>>,
    mc_end_logits: Vec<Vec<f64>>,
}

/// Serializes a record as a single JSON line (no trailing newline).
///
/// Floats use the shortest representation that parses back to the same
/// `f64`, so the round trip is exact.
pub fn serialize_record(r: &LogitRecord) -> String {
    let wire = WireOut {
        dialogue_id: &r.dialogue_id,
        turn_index: r.turn_index,
        context_len: r.context_len(),
        gold_start: r.gold.start,
        gold_end: r.gold.end,
        det_start_logits: &r.det_start,
        det_end_logits: &r.det_end,
        mc_start_logits: &r.mc_start,
        mc_end_logits: &r.mc_end,
    };
    serde_json::to_string(&wire).expect("record serialization is infallible")
}

/// Parses one JSONL line. `line` is the 1-based line number used in errors.
///
/// Unknown keys are an error when `strict`; otherwise they are logged and
/// ignored.
pub fn parse_record(text: &str, line: usize, strict: bool) -> Result<LogitRecord> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(Error::Parse {
            line,
            message: "expected a JSON object".into(),
        });
    };
    check_keys(&map, line, strict)?;
    let wire: WireIn = serde_json::from_value(Value::Object(map)).map_err(|e| {
        let message = e.to_string();
        let field = RECORD_KEYS
            .iter()
            .find(|k| message.contains(&format!("`{k}`")))
            .copied()
            .unwrap_or("record");
        Error::Schema {
            line,
            field: field.to_string(),
            message,
        }
    })?;

    let schema = |v: Violation| Error::Schema {
        line,
        field: v.field.to_string(),
        message: v.message,
    };
    if wire.gold_start > wire.gold_end {
        return Err(schema(Violation {
            field: "gold_end",
            message: format!(
                "gold_start {} exceeds gold_end {}",
                wire.gold_start, wire.gold_end
            ),
        }));
    }
    let record = LogitRecord {
        dialogue_id: wire.dialogue_id,
        turn_index: wire.turn_index,
        gold: Span {
            start: wire.gold_start,
            end: wire.gold_end,
        },
        det_start: wire.det_start_logits,
        det_end: wire.det_end_logits,
        mc_start: wire.mc_start_logits,
        mc_end: wire.mc_end_logits,
    };
    record.validate(wire.context_len).map_err(schema)?;
    Ok(record)
}

fn check_keys(map: &Map<String, Value>, line: usize, strict: bool) -> Result<()> {
    for key in map.keys() {
        if RECORD_KEYS.contains(&key.as_str()) {
            continue;
        }
        if strict {
            return Err(Error::Schema {
                line,
                field: key.clone(),
                message: "unknown key".into(),
            });
        }
        log::warn!("line {line}: ignoring unknown key `{key}`");
    }
    Ok(())
}

/// Streams records from a JSONL source, one line at a time.
///
/// Blank lines are skipped. Each item carries its own line number in the
/// error on failure.
pub struct RecordReader<R> {
    inner: R,
    line: usize,
    strict: bool,
    buf: String,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R, strict: bool) -> Self {
        RecordReader {
            inner,
            line: 0,
            strict,
            buf: String::new(),
        }
    }

    /// Line number of the most recently read line.
    pub fn line(&self) -> usize {
        self.line
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<LogitRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line += 1;
                    let text = self.buf.trim();
                    if text.is_empty() {
                        continue;
                    }
                    return Some(parse_record(text, self.line, self.strict));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

/// The combined per-turn scores a selection rule looks at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s_conf: f64,
    pub s_uncer: f64,
}

/// Calibrated scores and the prediction for one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnScore {
    pub pred: Span,
    pub s_conf: f64,
    pub s_uncer: f64,
    /// MC-aggregated start distribution.
    pub p_start: Vec<f64>,
    /// MC-aggregated end distribution.
    pub p_end: Vec<f64>,
    /// Exact span match against gold.
    pub correct: bool,
}

impl TurnScore {
    pub fn scores(&self) -> Scores {
        Scores {
            s_conf: self.s_conf,
            s_uncer: self.s_uncer,
        }
    }
}

/// Where a history answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Gold,
    Predicted,
}

/// One prior turn as seen when assembling history.
///
/// When `kept` is false only the question survives into the history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub question_id: String,
    pub answer: Option<Span>,
    pub source: AnswerSource,
    pub kept: bool,
}
