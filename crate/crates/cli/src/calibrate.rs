use std::fs;
use std::io::Write;

use anyhow::{Context, Result};
use convcal::calibration::{write_reliability_csv, GridPoint};
use convcal::config::Config;
use convcal::{fit_temperature, reliability_rows, CalibrationReport, ScoreMode};
use serde::Serialize;

use crate::args::{CalibrateArgs, ModeArg};
use crate::io::{open_output, parse_range, read_all, write_json};

#[derive(Serialize)]
struct Report<'a> {
    mode: ScoreMode,
    tau: f64,
    error: f64,
    error_at_unit_temperature: Option<f64>,
    n: usize,
    report: &'a CalibrationReport,
    curve: &'a [GridPoint],
}

pub fn run(args: &CalibrateArgs, config: &Config, strict: bool) -> Result<()> {
    let grid = match &args.grid {
        Some(text) => parse_range(text)?,
        None => config.calibration.grid(),
    };
    let bins = args.bins.unwrap_or(config.calibration.bins);
    let modes: &[ScoreMode] = match args.mode {
        ModeArg::Confidence => &[ScoreMode::Confidence],
        ModeArg::Uncertainty => &[ScoreMode::Uncertainty],
        ModeArg::Both => &[ScoreMode::Confidence, ScoreMode::Uncertainty],
    };
    let records = read_all(&args.input, strict)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }

    let mut stdout = match args.out_dir {
        Some(_) => None,
        None => Some(open_output(None)?),
    };
    for &mode in modes {
        let fit = fit_temperature(&records, mode, &grid, bins)?;
        let report = Report {
            mode,
            tau: fit.tau,
            error: fit.report.error,
            error_at_unit_temperature: fit.curve.iter().find(|g| g.tau == 1.0).map(|g| g.error),
            n: fit.report.n,
            report: &fit.report,
            curve: &fit.curve,
        };
        log::info!(
            "{}: tau {} error {:.4}",
            mode.name(),
            fit.tau,
            fit.report.error
        );
        match (&args.out_dir, stdout.as_mut()) {
            (Some(dir), _) => {
                write_json(
                    &dir.join(format!("calibration_{}.json", mode.name())),
                    &report,
                )?;
                let csv = dir.join(format!("reliability_{}.csv", mode.name()));
                let mut out = open_output(Some(&csv))?;
                write_reliability_csv(&reliability_rows(&fit.report), &mut out)?;
                out.flush()?;
            }
            (None, Some(out)) => {
                serde_json::to_writer(&mut *out, &report)?;
                writeln!(out)?;
            }
            (None, None) => unreachable!("stdout opened when no directory is given"),
        }
    }
    if let Some(mut out) = stdout {
        out.flush()?;
    }
    Ok(())
}
