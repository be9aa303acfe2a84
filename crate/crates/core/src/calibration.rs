//! Reliability binning, ECE/UCE, and temperature fitting.
//!
//! Scores are grouped into `M` equal-width bins over `[0, 1]`. In confidence
//! mode a bin's hit rate is its accuracy and the expected error is ECE; in
//! uncertainty mode the hit rate is the error rate and the result is UCE.
//! A score lying exactly on an interior edge belongs to the upper bin, and
//! the last bin is closed on the right.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::LogitRecord;
use crate::scoring::score_turn;

/// Which score a calibration statistic is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Confidence,
    Uncertainty,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Confidence => "confidence",
            ScoreMode::Uncertainty => "uncertainty",
        }
    }

    /// The binary outcome each score is meant to predict: correctness for
    /// confidence, error for uncertainty.
    pub fn hit(self, correct: bool) -> bool {
        match self {
            ScoreMode::Confidence => correct,
            ScoreMode::Uncertainty => !correct,
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" | "conf" => Ok(ScoreMode::Confidence),
            "uncertainty" | "uncer" => Ok(ScoreMode::Uncertainty),
            other => domain(format!("unknown score mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean score in the bin (0 when empty).
    pub mean_score: f64,
    /// Accuracy or error rate in the bin (0 when empty).
    pub hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mode: ScoreMode,
    pub bins: Vec<BinStats>,
    pub n: usize,
    /// ECE or UCE depending on `mode`.
    pub error: f64,
    pub temperature: f64,
}

fn bin_index(score: f64, bins: usize) -> usize {
    ((score * bins as f64).floor() as usize).min(bins - 1)
}

/// Per-bin counts, mean scores and hit rates.
pub fn bin_stats(scores: &[f64], hits: &[bool], bins: usize) -> Result<Vec<BinStats>> {
    if bins < 1 {
        return domain("need at least one bin");
    }
    if scores.len() != hits.len() {
        return domain(format!(
            "{} scores but {} outcomes",
            scores.len(),
            hits.len()
        ));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return domain(format!("score {bad} outside [0, 1]"));
    }
    let mut count = vec![0usize; bins];
    let mut score_sum = vec![0.0; bins];
    let mut hit_sum = vec![0usize; bins];
    for (&s, &h) in scores.iter().zip(hits) {
        let b = bin_index(s, bins);
        count[b] += 1;
        score_sum[b] += s;
        hit_sum[b] += usize::from(h);
    }
    Ok((0..bins)
        .map(|m| {
            let c = count[m];
            let (mean_score, hit_rate) = if c == 0 {
                (0.0, 0.0)
            } else {
                (score_sum[m] / c as f64, hit_sum[m] as f64 / c as f64)
            };
            BinStats {
                lo: m as f64 / bins as f64,
                hi: (m + 1) as f64 / bins as f64,
                count: c,
                mean_score,
                hit_rate,
            }
        })
        .collect())
}

/// Count-weighted mean absolute gap between hit rate and mean score.
pub fn expected_error(bins: &[BinStats], n: usize) -> Result<f64> {
    if n == 0 {
        return domain("expected calibration error of zero samples");
    }
    let total: usize = bins.iter().map(|b| b.count).sum();
    if total != n {
        return domain(format!("bin counts sum to {total}, expected {n}"));
    }
    Ok(bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.hit_rate - b.mean_score).abs())
        .sum())
}

/// Bins and scores a set of `(score, correct)` pairs in one go.
pub fn calibration_report(
    scores: &[f64],
    correct: &[bool],
    mode: ScoreMode,
    bins: usize,
    temperature: f64,
) -> Result<CalibrationReport> {
    let hits: Vec<bool> = correct.iter().map(|&c| mode.hit(c)).collect();
    let stats = bin_stats(scores, &hits, bins)?;
    let error = expected_error(&stats, scores.len())?;
    Ok(CalibrationReport {
        mode,
        bins: stats,
        n: scores.len(),
        error,
        temperature,
    })
}

/// Candidate temperatures `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for TemperatureGrid {
    fn default() -> Self {
        TemperatureGrid {
            lo: 0.05,
            hi: 2.0,
            step: 0.05,
        }
    }
}

impl TemperatureGrid {
    pub fn candidates(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.step > 0.0 && self.hi >= self.lo) {
            return domain(format!(
                "invalid temperature grid lo={} hi={} step={}",
                self.lo, self.hi, self.step
            ));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        // Rounding keeps grid points such as 1.0 exact.
        Ok((0..count)
            .map(|i| ((self.lo + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

/// Error and accuracy at one candidate temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau: f64,
    pub error: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub tau: f64,
    pub report: CalibrationReport,
    pub curve: Vec<GridPoint>,
}

fn report_at(
    records: &[LogitRecord],
    mode: ScoreMode,
    tau: f64,
    bins: usize,
) -> Result<(CalibrationReport, f64)> {
    let mut scores = Vec::with_capacity(records.len());
    let mut correct = Vec::with_capacity(records.len());
    for r in records {
        let s = score_turn(r, tau, tau)?;
        scores.push(match mode {
            ScoreMode::Confidence => s.s_conf,
            ScoreMode::Uncertainty => s.s_uncer,
        });
        correct.push(s.correct);
    }
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / records.len() as f64;
    Ok((
        calibration_report(&scores, &correct, mode, bins, tau)?,
        accuracy,
    ))
}

/// Scans the grid and keeps the temperature with the lowest ECE or UCE.
///
/// Ties are resolved by distance to `tau = 1`, then by the smaller `tau`, so
/// the result does not depend on evaluation order.
pub fn fit_temperature(
    records: &[LogitRecord],
    mode: ScoreMode,
    grid: &TemperatureGrid,
    bins: usize,
) -> Result<TemperatureFit> {
    if records.is_empty() {
        return domain("cannot fit a temperature on zero records");
    }
    let candidates = grid.candidates()?;
    let evaluated: Vec<(CalibrationReport, f64)> = candidates
        .par_iter()
        .map(|&tau| report_at(records, mode, tau, bins))
        .collect::<Result<_>>()?;

    let curve: Vec<GridPoint> = evaluated
        .iter()
        .map(|(report, accuracy)| GridPoint {
            tau: report.temperature,
            error: report.error,
            accuracy: *accuracy,
        })
        .collect();

    let (report, _) = evaluated
        .into_iter()
        .min_by(|(a, _), (b, _)| rank(a, b))
        .expect("grid has at least one candidate");
    Ok(TemperatureFit {
        tau: report.temperature,
        report,
        curve,
    })
}

fn rank(a: &CalibrationReport, b: &CalibrationReport) -> Ordering {
    a.error
        .total_cmp(&b.error)
        .then(
            (a.temperature - 1.0)
                .abs()
                .total_cmp(&(b.temperature - 1.0).abs()),
        )
        .then(a.temperature.total_cmp(&b.temperature))
}

/// One row of a reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_score: f64,
    pub hit_rate: f64,
    pub gap: f64,
}

pub fn reliability_rows(report: &CalibrationReport) -> Vec<ReliabilityRow> {
    let mut rows: Vec<ReliabilityRow> = report
        .bins
        .iter()
        .map(|b| ReliabilityRow {
            lo: b.lo,
            hi: b.hi,
            count: b.count,
            mean_score: b.mean_score,
            hit_rate: b.hit_rate,
            gap: b.hit_rate - b.mean_score,
        })
        .collect();
    rows.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    rows
}

/// Writes rows as CSV with header `lo,hi,count,mean_score,hit_rate,gap`.
pub fn write_reliability_csv<W: Write>(rows: &[ReliabilityRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        writer.write_record(["lo", "hi", "count", "mean_score", "hit_rate", "gap"])?;
    }
    writer.flush()?;
    Ok(())
}
