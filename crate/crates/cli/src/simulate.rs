use std::io::Write;

use anyhow::Result;
use convcal::config::Config;
use convcal::simulator::{
    oracle_expected_f1, run_experiment, synthetic_records, threshold_sweep, ExperimentConfig,
    PolicySummary, SimProfile, SweepRow,
};
use convcal::{serialize_record, Error, PolicyKind, RunOptions, SelectionPolicy};
use serde::Serialize;

use crate::args::SimulateArgs;
use crate::io::{open_output, parse_range, write_json};

/// Inclusive threshold points `lo, lo + step, ..., <= hi`, all in `[0, 1]`.
fn sweep_points(text: &str) -> Result<Vec<f64>, Error> {
    let r = parse_range(text)?;
    if !(0.0 <= r.lo && r.lo <= r.hi && r.hi <= 1.0 && r.step > 0.0) {
        return Err(Error::Config(format!(
            "sweep range `{text}` must satisfy 0 <= lo <= hi <= 1 and step > 0"
        )));
    }
    let n = ((r.hi - r.lo) / r.step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((r.lo + i as f64 * r.step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Serialize)]
struct OracleRow {
    policy: PolicyKind,
    threshold: Option<f64>,
    mc_mean_f1: f64,
    mc_std_f1: f64,
    oracle_f1: Option<f64>,
}

#[derive(Serialize)]
struct Paired {
    a: PolicyKind,
    b: PolicyKind,
    mean: f64,
    std_err: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    profile: &'a SimProfile,
    experiment: &'a ExperimentConfig,
    policies: Vec<PolicySummary>,
    paired_vs_all_pred: Vec<Paired>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<&'a [OracleRow]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<&'a [SweepRow]>,
}

pub fn run(args: &SimulateArgs, config: &Config) -> Result<()> {
    let profile = &config.simulator.profile;
    let mut cfg = config.simulator.experiment.clone();
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(d) = args.dialogues {
        cfg.n_dialogues = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let kinds: Vec<PolicyKind> = if args.policies.is_empty() {
        PolicyKind::ALL.to_vec()
    } else {
        args.policies.clone()
    };

    if let Some(path) = &args.dump_records {
        let mut out = open_output(Some(path))?;
        for record in synthetic_records(profile, cfg.n_dialogues as u64, cfg.seed)? {
            writeln!(out, "{}", serialize_record(&record))?;
        }
        out.flush()?;
        return Ok(());
    }

    let mut out = open_output(args.out.as_deref())?;
    if let Some(range) = &args.sweep_threshold {
        let points = sweep_points(range)?;
        let mut rows = Vec::new();
        for &kind in kinds.iter().filter(|k| k.is_selective()) {
            rows.extend(threshold_sweep(profile, kind, &points, &cfg)?);
        }
        if rows.is_empty() {
            return Err(Error::Config("--sweep-threshold needs a selective policy".into()).into());
        }
        write_csv(&rows, &mut out)?;
        if let Some(path) = &args.summary {
            let summary = Summary {
                profile,
                experiment: &cfg,
                policies: Vec::new(),
                paired_vs_all_pred: Vec::new(),
                oracle: None,
                sweep: Some(&rows),
            };
            write_json(path, &summary)?;
        }
        out.flush()?;
        return Ok(());
    }

    let exp = run_experiment(profile, &kinds, &cfg)?;
    let summaries = exp.summary();
    let paired = if kinds.contains(&PolicyKind::AllPred) {
        kinds
            .iter()
            .filter(|&&k| k != PolicyKind::AllPred)
            .map(|&k| {
                let d = exp.paired_difference(k, PolicyKind::AllPred)?;
                Ok(Paired {
                    a: k,
                    b: PolicyKind::AllPred,
                    mean: d.mean,
                    std_err: d.std_err,
                })
            })
            .collect::<convcal::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let oracle_rows = if args.oracle {
        let resolved: Vec<SelectionPolicy> = exp.runs.iter().map(|r| r.policy).collect();
        let exact: Vec<SelectionPolicy> = resolved
            .iter()
            .copied()
            .filter(|p| !matches!(p.kind, PolicyKind::CoinFlip | PolicyKind::Ramp))
            .collect();
        let opts = RunOptions {
            tau_conf: cfg.tau_conf,
            tau_uncer: cfg.tau_uncer,
            ..RunOptions::default()
        };
        let values = oracle_expected_f1(profile, &exact, &opts)?;
        let rows: Vec<OracleRow> = summaries
            .iter()
            .map(|s| OracleRow {
                policy: s.policy,
                threshold: s.threshold,
                mc_mean_f1: s.mean_f1,
                mc_std_f1: s.std_f1,
                oracle_f1: values.iter().find(|(k, _)| *k == s.policy).map(|v| v.1),
            })
            .collect();
        write_csv(&rows, &mut out)?;
        Some(rows)
    } else {
        exp.write_csv(&mut out)?;
        None
    };
    out.flush()?;

    if let Some(path) = &args.summary {
        let summary = Summary {
            profile,
            experiment: &cfg,
            policies: summaries,
            paired_vs_all_pred: paired,
            oracle: oracle_rows.as_deref(),
            sweep: None,
        };
        write_json(path, &summary)?;
    }
    Ok(())
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
