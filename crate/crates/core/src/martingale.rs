//! The sequential statistical auditor: per-sample deviations between
//! reported and estimated token counts, folded into a test martingale
//! that flags when it crosses `1/alpha`, plus the provider-side
//! reporting strategies that probe it.
//!
//! The bet is a constant clipped one: with `Z` clamped to `±z_scale`,
//! each factor is `1 + lambda0·(Z/z_scale)`, which keeps every factor in
//! `[1−lambda0, 1+lambda0]` and hence the martingale positive. Honest
//! reporting uses the canonical (minimal) count, so on ambiguous corpora
//! the estimate can only exceed it and `Z` stays ≤ 0 by construction.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::corpus::{Corpus, TraceRecord};
use crate::error::{Error, Result};
use crate::rng::sub_seed;
use crate::tokenizer::{McEstimate, Vocabulary};

#[cfg(not(feature = "std"))]
use num_traits::Float;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_LAMBDA0: f64 = 0.5;
pub const DEFAULT_N_MC: usize = 64;
pub const DEFAULT_CALIBRATION_PREFIX: usize = 50;
pub const DEFAULT_PERIOD: usize = 10;
pub const DEFAULT_AMOUNT: u64 = 2000;

/// Where the clipping bound comes from: fixed up front, or the 95th
/// percentile of `|Z|` over a leading calibration prefix whose factors
/// are then left out of the evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZScalePolicy {
    Fixed(f64),
    PrefixPercentile { prefix: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub alpha: f64,
    pub lambda0: f64,
    pub z_scale: ZScalePolicy,
    pub n_mc: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            lambda0: DEFAULT_LAMBDA0,
            z_scale: ZScalePolicy::PrefixPercentile {
                prefix: DEFAULT_CALIBRATION_PREFIX,
            },
            n_mc: DEFAULT_N_MC,
        }
    }
}

impl AuditConfig {
    pub fn threshold(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if !(self.lambda0 > 0.0 && self.lambda0 < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "lambda0 {} outside (0, 1)",
                self.lambda0
            )));
        }
        match self.z_scale {
            ZScalePolicy::Fixed(s) if !(s > 0.0 && s.is_finite()) => Err(Error::InvalidArgument(
                alloc::format!("z_scale {s} must be positive"),
            )),
            ZScalePolicy::PrefixPercentile { prefix: 0 } => Err(Error::InvalidArgument(
                "calibration prefix must be at least 1".to_string(),
            )),
            _ => Ok(()),
        }
    }
}

/// How the provider reports counts. Periods are ordinal: with period
/// `p`, the 1-based sample indices divisible by `p` get inflated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStrategy {
    Honest,
    Periodic { period: usize, amount: u64 },
    PeriodicWithOffset { period: usize, amount: u64, offset: u64 },
}

/// Canonical token count of the record's reasoning text.
pub fn honest_count(vocab: &Vocabulary, record: &TraceRecord) -> Result<u64> {
    Ok(vocab.canonical_tokenize(&record.reasoning)?.count() as u64)
}

/// Turns honest counts into reported counts. Offsets apply only to
/// non-inflated positions and must not push any report below zero.
pub fn apply_strategy(honest: &[u64], strategy: &ReportStrategy) -> Result<Vec<u64>> {
    let (period, amount, offset) = match *strategy {
        ReportStrategy::Honest => return Ok(honest.to_vec()),
        ReportStrategy::Periodic { period, amount } => (period, amount, 0),
        ReportStrategy::PeriodicWithOffset {
            period,
            amount,
            offset,
        } => (period, amount, offset),
    };
    if period == 0 {
        return Err(Error::InvalidArgument("period must be at least 1".to_string()));
    }
    honest
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            if (i + 1) % period == 0 {
                Ok(h + amount)
            } else {
                h.checked_sub(offset).ok_or(Error::NegativeReport {
                    index: i + 1,
                    honest: h,
                    offset,
                })
            }
        })
        .collect()
}

/// Clips `z` and returns `(z_clipped, factor)` with
/// `factor = 1 + lambda0·(z_clipped/z_scale)`; the ratio form makes the
/// boundary factors `1+lambda0` and `1−lambda0` exact.
pub fn step_factor(z: f64, lambda0: f64, z_scale: f64) -> (f64, f64) {
    let z_clipped = z.clamp(-z_scale, z_scale);
    (z_clipped, 1.0 + lambda0 * (z_clipped / z_scale))
}

/// The audited run, sample by sample. `m[t]` is the martingale value
/// after folding sample `t` (`M₀ = 1` before any sample); `flagged_at`
/// is the first 0-based index with `m > 1/alpha`. Calibration-prefix
/// rows are recorded but leave `m` unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditTrajectory {
    pub honest: Vec<u64>,
    pub reported: Vec<u64>,
    pub estimate: Vec<f64>,
    pub z: Vec<f64>,
    pub z_clipped: Vec<f64>,
    pub m: Vec<f64>,
    pub in_calibration: Vec<bool>,
    pub z_scale_used: f64,
    pub flagged_at: Option<usize>,
    pub total_honest: u64,
    pub total_reported: u64,
}

impl AuditTrajectory {
    pub fn new(z_scale: f64) -> Self {
        Self {
            honest: Vec::new(),
            reported: Vec::new(),
            estimate: Vec::new(),
            z: Vec::new(),
            z_clipped: Vec::new(),
            m: Vec::new(),
            in_calibration: Vec::new(),
            z_scale_used: z_scale,
            flagged_at: None,
            total_honest: 0,
            total_reported: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn flagged(&self) -> bool {
        self.flagged_at.is_some()
    }

    pub fn net_inflation_tokens(&self) -> i64 {
        self.total_reported as i64 - self.total_honest as i64
    }

    /// Folds one sample into the run.
    pub fn step(
        &mut self,
        honest: u64,
        reported: u64,
        estimate_mean: f64,
        lambda0: f64,
        threshold: f64,
        in_calibration: bool,
    ) {
        let z = reported as f64 - estimate_mean;
        let (z_clipped, factor) = step_factor(z, lambda0, self.z_scale_used);
        let prev = self.m.last().copied().unwrap_or(1.0);
        let m = if in_calibration { prev } else { prev * factor };
        let index = self.m.len();
        self.honest.push(honest);
        self.reported.push(reported);
        self.estimate.push(estimate_mean);
        self.z.push(z);
        self.z_clipped.push(z_clipped);
        self.m.push(m);
        self.in_calibration.push(in_calibration);
        self.total_honest += honest;
        self.total_reported += reported;
        if self.flagged_at.is_none() && m > threshold {
            self.flagged_at = Some(index);
        }
    }
}

/// Seed for record `index`'s Monte-Carlo count estimate. Exposed so
/// concurrent estimation can reproduce the sequential derivation.
pub fn record_mc_seed(seed: u64, index: usize) -> u64 {
    sub_seed(seed, "stat-mc", index as u64)
}

/// Sequential Monte-Carlo estimates for every record; each record owns a
/// stream derived from `(seed, index)`, so a concurrent caller mapping
/// [`record_mc_seed`] over indices gets identical results.
pub fn estimate_corpus(
    corpus: &Corpus,
    vocab: &Vocabulary,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    corpus
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| vocab.mc_expected_count(&r.reasoning, n_mc, record_mc_seed(seed, i)))
        .collect()
}

fn resolve_z_scale(z: &[f64], policy: ZScalePolicy) -> (f64, usize) {
    match policy {
        ZScalePolicy::Fixed(s) => (s, 0),
        ZScalePolicy::PrefixPercentile { prefix } => {
            let k = prefix.min(z.len());
            let mut abs: Vec<f64> = z[..k].iter().map(|v| v.abs()).collect();
            abs.sort_by(f64::total_cmp);
            let rank = ((0.95 * k as f64).ceil() as usize).clamp(1, k);
            let p95 = abs[rank - 1];
            (if p95 > 0.0 { p95 } else { 1.0 }, k)
        }
    }
}

/// Folds precomputed honest counts and estimates under a strategy. The
/// pure core of [`run_audit`], reused by the sweeps so one estimation
/// pass serves many strategies.
pub fn run_audit_with_estimates(
    honest: &[u64],
    estimates: &[McEstimate],
    strategy: &ReportStrategy,
    cfg: &AuditConfig,
) -> Result<AuditTrajectory> {
    cfg.validate()?;
    if honest.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if honest.len() != estimates.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} honest counts vs {} estimates",
            honest.len(),
            estimates.len()
        )));
    }
    let reported = apply_strategy(honest, strategy)?;
    let z: Vec<f64> = reported
        .iter()
        .zip(estimates)
        .map(|(&r, e)| r as f64 - e.mean)
        .collect();
    let (z_scale, calibration_len) = resolve_z_scale(&z, cfg.z_scale);
    let threshold = cfg.threshold();
    let mut traj = AuditTrajectory::new(z_scale);
    for i in 0..honest.len() {
        traj.step(
            honest[i],
            reported[i],
            estimates[i].mean,
            cfg.lambda0,
            threshold,
            i < calibration_len,
        );
    }
    Ok(traj)
}

/// Estimates every record then folds the martingale once.
pub fn run_audit(
    corpus: &Corpus,
    vocab: &Vocabulary,
    strategy: &ReportStrategy,
    cfg: &AuditConfig,
    seed: u64,
) -> Result<AuditTrajectory> {
    let honest: Vec<u64> = corpus
        .records
        .iter()
        .map(|r| honest_count(vocab, r))
        .collect::<Result<_>>()?;
    let estimates = estimate_corpus(corpus, vocab, cfg.n_mc, seed)?;
    run_audit_with_estimates(&honest, &estimates, strategy, cfg)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InflationRow {
    pub amount: u64,
    pub flagged: bool,
    pub flagged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InflationSweep {
    pub rows: Vec<InflationRow>,
    pub first_failing_amount: Option<u64>,
}

/// Audits a periodic strategy at each amount over shared estimates;
/// `first_failing_amount` is the smallest flagged one.
pub fn sweep_inflation(
    honest: &[u64],
    estimates: &[McEstimate],
    amounts: &[u64],
    period: usize,
    cfg: &AuditConfig,
) -> Result<InflationSweep> {
    if amounts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "sweep amounts must be ascending".to_string(),
        ));
    }
    let mut rows = Vec::with_capacity(amounts.len());
    let mut first_failing_amount = None;
    for &amount in amounts {
        let traj = run_audit_with_estimates(
            honest,
            estimates,
            &ReportStrategy::Periodic { period, amount },
            cfg,
        )?;
        if traj.flagged() && first_failing_amount.is_none() {
            first_failing_amount = Some(amount);
        }
        rows.push(InflationRow {
            amount,
            flagged: traj.flagged(),
            flagged_at: traj.flagged_at,
        });
    }
    Ok(InflationSweep {
        rows,
        first_failing_amount,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OffsetRow {
    pub offset: u64,
    pub flagged: bool,
    pub flagged_at: Option<usize>,
    pub net_inflation_tokens: i64,
    pub net_inflation_percent: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OffsetSweep {
    pub rows: Vec<OffsetRow>,
    pub first_passing_offset: Option<u64>,
    pub net_inflation_tokens: Option<i64>,
    pub net_inflation_percent: Option<f64>,
}

/// Sweeps the under-reporting offset at a fixed inflation amount; the
/// returned net figures belong to the first offset that never flags.
pub fn sweep_offset(
    honest: &[u64],
    estimates: &[McEstimate],
    amount: u64,
    period: usize,
    offsets: &[u64],
    cfg: &AuditConfig,
) -> Result<OffsetSweep> {
    if offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "sweep offsets must be ascending".to_string(),
        ));
    }
    let mut rows = Vec::with_capacity(offsets.len());
    let mut first: Option<&OffsetRow> = None;
    for &offset in offsets {
        let traj = run_audit_with_estimates(
            honest,
            estimates,
            &ReportStrategy::PeriodicWithOffset {
                period,
                amount,
                offset,
            },
            cfg,
        )?;
        rows.push(OffsetRow {
            offset,
            flagged: traj.flagged(),
            flagged_at: traj.flagged_at,
            net_inflation_tokens: traj.net_inflation_tokens(),
            net_inflation_percent: 100.0 * traj.net_inflation_tokens() as f64
                / traj.total_honest as f64,
        });
    }
    for row in &rows {
        if !row.flagged {
            first = Some(row);
            break;
        }
    }
    Ok(OffsetSweep {
        first_passing_offset: first.map(|r| r.offset),
        net_inflation_tokens: first.map(|r| r.net_inflation_tokens),
        net_inflation_percent: first.map(|r| r.net_inflation_percent),
        rows,
    })
}
