//! Statistical-auditor experiment: honest counts, Monte-Carlo estimates
//! (parallel, per-record streams), one martingale fold, and the two
//! evasion sweeps.

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use gauntlet_core::martingale::{
    honest_count, record_mc_seed, run_audit_with_estimates, sweep_inflation, sweep_offset,
    AuditConfig, AuditTrajectory, ReportStrategy, ZScalePolicy,
};
use gauntlet_core::tokenizer::McEstimate;

use crate::config::{ResolvedConfig, StatParams, StrategyKind, SweepParams};
use crate::manifest::{config_digest, OutputWriter, RunManifest};
use crate::svg::{chart, Mark, Series};

pub fn audit_config(p: &StatParams) -> AuditConfig {
    AuditConfig {
        alpha: p.alpha,
        lambda0: p.lambda0,
        n_mc: p.n_mc,
        z_scale: match p.z_scale {
            Some(s) => ZScalePolicy::Fixed(s),
            None => ZScalePolicy::PrefixPercentile {
                prefix: p.calibration_prefix,
            },
        },
    }
}

fn strategy(p: &StatParams) -> ReportStrategy {
    match p.strategy {
        StrategyKind::Honest => ReportStrategy::Honest,
        StrategyKind::Periodic => ReportStrategy::Periodic {
            period: p.period,
            amount: p.amount,
        },
        StrategyKind::PeriodicOffset => ReportStrategy::PeriodicWithOffset {
            period: p.period,
            amount: p.amount,
            offset: p.offset,
        },
    }
}

#[derive(Serialize)]
struct AuditSummary {
    n_records: usize,
    z_scale_used: f64,
    threshold: f64,
    flagged_at: Option<usize>,
    final_m: f64,
    max_z: f64,
    total_honest: u64,
    total_reported: u64,
    net_inflation_tokens: i64,
    net_inflation_percent: f64,
}

fn trajectory_csv(traj: &AuditTrajectory) -> Result<Vec<u8>> {
    let rows = (0..traj.len()).map(|i| {
        let flagged = traj.flagged_at.map(|f| i >= f).unwrap_or(false);
        vec![
            (i + 1).to_string(),
            traj.honest[i].to_string(),
            traj.reported[i].to_string(),
            traj.estimate[i].to_string(),
            traj.z[i].to_string(),
            traj.z_clipped[i].to_string(),
            traj.m[i].to_string(),
            traj.in_calibration[i].to_string(),
            flagged.to_string(),
        ]
    });
    crate::csv_bytes(
        &[
            "index",
            "honest",
            "reported",
            "estimate",
            "z",
            "z_clipped",
            "m",
            "in_calibration",
            "flagged",
        ],
        rows,
    )
}

pub fn run(cfg: &ResolvedConfig, wants_sweep: bool) -> Result<RunManifest> {
    let (digest, inputs) = config_digest(cfg)?;
    let p = cfg.raw.stat.as_ref().expect("validated stat block");
    let seed = cfg.raw.seed;
    let vocab = crate::load_vocabulary(&cfg.vocabulary_path())?;
    let corpus = crate::load_corpus(cfg, &vocab)?;

    let honest: Vec<u64> = corpus
        .records
        .par_iter()
        .map(|r| honest_count(&vocab, r).with_context(|| format!("counting record {}", r.id)))
        .collect::<Result<_>>()?;
    // parallel twin of the sequential estimator: same per-record streams
    let estimates: Vec<McEstimate> = corpus
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            vocab
                .mc_expected_count(&r.reasoning, p.n_mc, record_mc_seed(seed, i))
                .with_context(|| format!("estimating record {}", r.id))
        })
        .collect::<Result<_>>()?;

    let acfg = audit_config(p);
    let mut out = OutputWriter::new(&cfg.output_dir)?;

    if wants_sweep {
        match cfg.raw.sweep.as_ref().expect("validated sweep block") {
            SweepParams::Inflation { amounts, period } => {
                let sweep = sweep_inflation(&honest, &estimates, amounts, *period, &acfg)?;
                let rows = sweep.rows.iter().map(|r| {
                    vec![
                        r.amount.to_string(),
                        r.flagged.to_string(),
                        crate::fmt_opt(r.flagged_at.map(|i| i + 1)),
                    ]
                });
                out.write(
                    "sweep_inflation.csv",
                    &crate::csv_bytes(&["amount", "flagged", "flagged_at"], rows)?,
                )?;
                out.write_json("sweep.json", &sweep)?;
                if cfg.raw.svg {
                    let pts: Vec<(f64, f64)> = sweep
                        .rows
                        .iter()
                        .map(|r| (r.amount as f64, if r.flagged { 1.0 } else { 0.0 }))
                        .collect();
                    out.write(
                        "sweep.svg",
                        chart(
                            "martingale flag by inflation amount",
                            "amount per spike",
                            "flagged",
                            &[Series {
                                label: format!("period {period}"),
                                mark: Mark::Line,
                                points: pts,
                            }],
                        )
                        .as_bytes(),
                    )?;
                }
            }
            SweepParams::Offset {
                offsets,
                amount,
                period,
            } => {
                let sweep = sweep_offset(&honest, &estimates, *amount, *period, offsets, &acfg)?;
                let rows = sweep.rows.iter().map(|r| {
                    vec![
                        r.offset.to_string(),
                        r.flagged.to_string(),
                        crate::fmt_opt(r.flagged_at.map(|i| i + 1)),
                        r.net_inflation_tokens.to_string(),
                        r.net_inflation_percent.to_string(),
                    ]
                });
                out.write(
                    "sweep_offset.csv",
                    &crate::csv_bytes(
                        &[
                            "offset",
                            "flagged",
                            "flagged_at",
                            "net_inflation_tokens",
                            "net_inflation_percent",
                        ],
                        rows,
                    )?,
                )?;
                out.write_json("sweep.json", &sweep)?;
                if cfg.raw.svg {
                    let pts: Vec<(f64, f64)> = sweep
                        .rows
                        .iter()
                        .map(|r| (r.offset as f64, if r.flagged { 1.0 } else { 0.0 }))
                        .collect();
                    out.write(
                        "sweep.svg",
                        chart(
                            "martingale flag by honest-sample offset",
                            "offset per honest sample",
                            "flagged",
                            &[Series {
                                label: format!("amount {amount}, period {period}"),
                                mark: Mark::Line,
                                points: pts,
                            }],
                        )
                        .as_bytes(),
                    )?;
                }
            }
        }
    } else {
        let traj = run_audit_with_estimates(&honest, &estimates, &strategy(p), &acfg)?;
        out.write("trajectory.csv", &trajectory_csv(&traj)?)?;
        let net = traj.net_inflation_tokens();
        let summary = AuditSummary {
            n_records: traj.len(),
            z_scale_used: traj.z_scale_used,
            threshold: acfg.threshold(),
            flagged_at: traj.flagged_at.map(|i| i + 1),
            final_m: *traj.m.last().expect("non-empty trajectory"),
            max_z: traj.z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
            total_honest: traj.total_honest,
            total_reported: traj.total_reported,
            net_inflation_tokens: net,
            net_inflation_percent: 100.0 * net as f64 / traj.total_honest.max(1) as f64,
        };
        out.write_json("audit.json", &summary)?;
        if cfg.raw.svg {
            let z_pts: Vec<(f64, f64)> = traj
                .z
                .iter()
                .enumerate()
                .map(|(i, &z)| ((i + 1) as f64, z))
                .collect();
            out.write(
                "trajectory.svg",
                chart(
                    "per-sample deviation Z",
                    "sample index",
                    "z = reported - estimate",
                    &[Series {
                        label: "z".to_string(),
                        mark: Mark::Line,
                        points: z_pts,
                    }],
                )
                .as_bytes(),
            )?;
            let m_pts: Vec<(f64, f64)> = traj
                .m
                .iter()
                .enumerate()
                .map(|(i, &m)| ((i + 1) as f64, m.max(1e-300).log10()))
                .collect();
            out.write(
                "martingale.svg",
                chart(
                    "martingale wealth",
                    "sample index",
                    "log10 M",
                    &[Series {
                        label: "log10 M".to_string(),
                        mark: Mark::Line,
                        points: m_pts,
                    }],
                )
                .as_bytes(),
            )?;
        }
    }
    out.finish(cfg, digest, inputs)
}
