//! Commitment-auditor experiment: calibrate the verifier on the honest
//! corpus, then run every configured attack variant against every
//! record and tabulate detection and inflation.

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

use gauntlet_core::attacks::{inflate_iterative, AttackKind, AttackReport};
use gauntlet_core::commitment::{partition_blocks, Block};
use gauntlet_core::rng;
use gauntlet_core::tokenizer::TokenSeq;
use gauntlet_core::verifier::{CalibrationStats, TraceAuditor, VerifierConfig};

use crate::config::{CoinParams, ResolvedConfig};
use crate::manifest::{config_digest, OutputWriter, RunManifest};
use crate::svg::{chart, Mark, Series};

#[derive(Serialize)]
struct CalibrationFile {
    probing_ratio: f64,
    embed_dim: usize,
    aggregate_zmax: f64,
    threshold_scale: f64,
    pooled_min_score: f64,
    threshold: f64,
    rule_quota: Option<f64>,
    trace_mean: CalibrationStats,
}

fn base_config(p: &CoinParams) -> VerifierConfig {
    VerifierConfig {
        probing_ratio: p.probing_ratio,
        threshold: 0.0,
        aggregate_zmax: p.aggregate_zmax,
        calibration: None,
        rule_quota: None,
        embed_dim: p.embed_dim,
    }
}

/// One verifier pass per honest trace: per-trace mean block-to-answer
/// alignment plus the pooled minimum over both score heads. The rule
/// threshold is a fraction of that minimum, so every honest block the
/// calibration saw clears it.
fn calibrate(
    p: &CoinParams,
    seed: u64,
    prepared: &[(Vec<Block>, TokenSeq)],
) -> (CalibrationFile, VerifierConfig) {
    let per_trace: Vec<(f64, f64)> = prepared
        .par_iter()
        .enumerate()
        .map(|(i, (blocks, answer))| {
            let mut auditor = TraceAuditor::new(base_config(p), answer);
            for b in blocks {
                auditor.push_block(b);
            }
            let verdict = auditor.audit(&mut rng::stream(seed, "coin-calibrate", i as u64), false);
            let scores: Vec<_> = verdict.block_scores.values().collect();
            let mean =
                scores.iter().map(|s| s.block_to_answer).sum::<f64>() / scores.len() as f64;
            let min = scores
                .iter()
                .map(|s| s.token_to_block.min(s.block_to_answer))
                .fold(f64::INFINITY, f64::min);
            (mean, min)
        })
        .collect();

    let n = per_trace.len();
    let mean = per_trace.iter().map(|t| t.0).sum::<f64>() / n as f64;
    let std = (per_trace.iter().map(|t| (t.0 - mean) * (t.0 - mean)).sum::<f64>() / n as f64)
        .sqrt();
    let pooled_min = per_trace.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let threshold = pooled_min * p.threshold_scale;

    let stats = CalibrationStats { mean, std, n };
    let cal = CalibrationFile {
        probing_ratio: p.probing_ratio,
        embed_dim: p.embed_dim,
        aggregate_zmax: p.aggregate_zmax,
        threshold_scale: p.threshold_scale,
        pooled_min_score: pooled_min,
        threshold,
        rule_quota: p.rule_quota,
        trace_mean: stats.clone(),
    };
    let cfg = VerifierConfig {
        threshold,
        calibration: Some(stats),
        rule_quota: p.rule_quota,
        ..base_config(p)
    };
    (cal, cfg)
}

pub fn run(cfg: &ResolvedConfig) -> Result<RunManifest> {
    let (digest, inputs) = config_digest(cfg)?;
    let p = cfg.raw.coin.as_ref().expect("validated coin block");
    let seed = cfg.raw.seed;
    let vocab = crate::load_vocabulary(&cfg.vocabulary_path())?;
    let corpus = crate::load_corpus(cfg, &vocab)?;

    let prepared: Vec<(Vec<Block>, TokenSeq)> = corpus
        .records
        .par_iter()
        .map(|r| -> Result<_> {
            let reasoning = vocab
                .canonical_tokenize(&r.reasoning)
                .with_context(|| format!("tokenizing reasoning of {}", r.id))?;
            let answer = vocab
                .canonical_tokenize(&r.answer)
                .with_context(|| format!("tokenizing answer of {}", r.id))?;
            let blocks = partition_blocks(&reasoning, p.block_size, vocab.pad_id());
            if blocks.is_empty() {
                bail!("record {} has empty reasoning", r.id);
            }
            Ok((blocks, answer))
        })
        .collect::<Result<_>>()?;

    let (cal_file, audit_cfg) = calibrate(p, seed, &prepared);

    let kinds: Vec<AttackKind> = p
        .attacks
        .iter()
        .map(|s| s.parse().expect("validated attack name"))
        .collect();

    let mut runs: Vec<(AttackKind, Vec<AttackReport>)> = Vec::new();
    for &kind in &kinds {
        let domain = format!("coin-attack-{kind}");
        let reports: Vec<AttackReport> = corpus
            .records
            .par_iter()
            .enumerate()
            .map(|(i, record)| {
                let mut stream = rng::stream(seed, &domain, i as u64);
                inflate_iterative(
                    record,
                    &vocab,
                    kind,
                    &audit_cfg,
                    p.block_size,
                    p.budget,
                    p.inserted_tokens,
                    p.defense,
                    &mut stream,
                )
                .with_context(|| format!("attack {kind} on record {}", record.id))
            })
            .collect::<Result<_>>()?;
        runs.push((kind, reports));
    }

    let mut out = OutputWriter::new(&cfg.output_dir)?;
    out.write_json("calibration.json", &cal_file)?;

    let attack_rows = runs.iter().flat_map(|(kind, reports)| {
        reports.iter().map(move |r| {
            vec![
                r.record_id.clone(),
                kind.to_string(),
                p.defense.to_string(),
                r.original_blocks.to_string(),
                r.added_blocks.to_string(),
                r.budget.to_string(),
                r.inflation_percent.to_string(),
                r.detected.to_string(),
                crate::fmt_opt(r.detected_at_block),
                r.root_hex.clone(),
            ]
        })
    });
    out.write(
        "attacks.csv",
        &crate::csv_bytes(
            &[
                "record_id",
                "attack",
                "defense",
                "original_blocks",
                "added_blocks",
                "budget",
                "inflation_percent",
                "detected",
                "detected_at_block",
                "root_hex",
            ],
            attack_rows,
        )?,
    )?;

    // inflation grouped by honest block count, one row per attack kind
    let mut groups: BTreeMap<(String, usize), (usize, f64, f64)> = BTreeMap::new();
    for (kind, reports) in &runs {
        for r in reports {
            let e = groups
                .entry((kind.to_string(), r.original_blocks))
                .or_insert((0, 0.0, 0.0));
            e.0 += 1;
            e.1 += r.added_blocks as f64;
            e.2 += r.inflation_percent;
        }
    }
    let group_rows = groups.iter().map(|((kind, blocks), (n, added, infl))| {
        vec![
            kind.clone(),
            blocks.to_string(),
            n.to_string(),
            (added / *n as f64).to_string(),
            (infl / *n as f64).to_string(),
        ]
    });
    out.write(
        "by_block_count.csv",
        &crate::csv_bytes(
            &[
                "attack",
                "original_blocks",
                "n_records",
                "mean_added_blocks",
                "mean_inflation_percent",
            ],
            group_rows,
        )?,
    )?;

    if cfg.raw.svg {
        let series: Vec<Series> = runs
            .iter()
            .map(|(kind, reports)| Series {
                label: kind.to_string(),
                mark: Mark::Points,
                points: reports
                    .iter()
                    .map(|r| (r.original_blocks as f64, r.inflation_percent))
                    .collect(),
            })
            .collect();
        out.write(
            "inflation_scatter.svg",
            chart(
                "inflation by honest block count",
                "original blocks",
                "inflation percent",
                &series,
            )
            .as_bytes(),
        )?;
    }
    out.finish(cfg, digest, inputs)
}
