//! Statistical auditor laws: martingale positivity, honest dominance
//! with type-I control, inflation accounting, and sweep monotonicity.

use gauntlet_core::corpus::{Corpus, CorpusSource, TraceRecord};
use gauntlet_core::martingale::{
    apply_strategy, run_audit, run_audit_with_estimates, sweep_inflation, AuditConfig,
    ReportStrategy, ZScalePolicy,
};
use gauntlet_core::rng;
use gauntlet_core::tokenizer::{McEstimate, Vocabulary};

use proptest::prelude::*;
use rand::Rng;

fn ambiguous_vocab() -> Vocabulary {
    let tokens = ["a", "b", "ab", "aa", "ba", "bab"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Vocabulary::new(tokens, "_".to_string()).unwrap()
}

fn random_ab_corpus(n: usize, seed: u64) -> Corpus {
    let mut stream = rng::stream(seed, "ab-corpus", 0);
    let records = (0..n)
        .map(|i| {
            let len = stream.random_range(10..40usize);
            let reasoning: String = (0..len)
                .map(|_| if stream.random::<bool>() { 'a' } else { 'b' })
                .collect();
            TraceRecord {
                id: format!("r{i:04}"),
                prompt: "p".to_string(),
                reasoning,
                answer: "a".to_string(),
            }
        })
        .collect();
    Corpus {
        records,
        source: CorpusSource::Synthetic { seed },
    }
}

fn exact_estimates(honest: &[u64]) -> Vec<McEstimate> {
    honest
        .iter()
        .map(|&h| McEstimate {
            mean: h as f64,
            n_samples: 1,
            seed: 0,
        })
        .collect()
}

/// Canonical reporting never produces positive Z and never flags: the
/// canonical count is the minimum over segmentations, so it sits at or
/// below any Monte Carlo mean of segmentation lengths.
#[test]
fn honest_reports_dominate_across_two_hundred_seeds() {
    let vocab = ambiguous_vocab();
    let cfg = AuditConfig::default();
    let mut flags = 0usize;
    for seed in 0..200u64 {
        let corpus = random_ab_corpus(25, seed);
        let cfg = AuditConfig { n_mc: 16, ..cfg };
        let traj = run_audit(&corpus, &vocab, &ReportStrategy::Honest, &cfg, seed).unwrap();
        for &z in &traj.z {
            assert!(z <= 0.0, "seed {seed}: positive honest Z {z}");
        }
        if traj.flagged() {
            flags += 1;
        }
    }
    assert!(
        flags as f64 / 200.0 <= 0.07,
        "honest flag rate {flags}/200"
    );
}

#[test]
fn all_inflated_steps_flag_at_the_closed_form_index() {
    let honest = vec![100u64; 12];
    let estimates = exact_estimates(&honest);
    let strategy = ReportStrategy::Periodic {
        period: 1,
        amount: 5000,
    };
    let cfg = AuditConfig {
        z_scale: ZScalePolicy::Fixed(10.0),
        ..AuditConfig::default()
    };
    let traj = run_audit_with_estimates(&honest, &estimates, &strategy, &cfg).unwrap();
    // factor 1.5 every step; 1.5^8 = 25.63 is the first product above 20
    assert_eq!(traj.flagged_at, Some(7));
    assert_eq!(traj.m[7], 1.5f64.powi(8));
    assert_eq!(traj.m[6], 1.5f64.powi(7));
}

#[test]
fn perfect_estimates_keep_the_martingale_at_one() {
    let honest = vec![250u64; 30];
    let estimates = exact_estimates(&honest);
    let cfg = AuditConfig {
        z_scale: ZScalePolicy::Fixed(5.0),
        ..AuditConfig::default()
    };
    let traj =
        run_audit_with_estimates(&honest, &estimates, &ReportStrategy::Honest, &cfg).unwrap();
    assert!(traj.m.iter().all(|&m| m == 1.0));
    assert!(!traj.flagged());
    assert_eq!(traj.net_inflation_tokens(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wealth_stays_positive_and_finite(
        means in proptest::collection::vec(-1e6f64..1e6, 1..60),
        z_scale in 0.1f64..100.0,
        lambda0 in 0.05f64..0.95,
    ) {
        let honest = vec![100u64; means.len()];
        let estimates: Vec<McEstimate> = means
            .iter()
            .map(|&m| McEstimate { mean: m, n_samples: 1, seed: 0 })
            .collect();
        let cfg = AuditConfig {
            lambda0,
            z_scale: ZScalePolicy::Fixed(z_scale),
            ..AuditConfig::default()
        };
        let traj =
            run_audit_with_estimates(&honest, &estimates, &ReportStrategy::Honest, &cfg).unwrap();
        for (&m, &zc) in traj.m.iter().zip(&traj.z_clipped) {
            prop_assert!(m.is_finite() && m > 0.0);
            prop_assert!(zc.abs() <= z_scale);
        }
        prop_assert_eq!(traj.flagged(), traj.flagged_at.is_some());
    }

    #[test]
    fn net_inflation_matches_spike_and_offset_accounting(
        honest in proptest::collection::vec(500u64..2000, 4..50),
        period in 2usize..9,
        amount in 1u64..3000,
        offset in 0u64..400,
    ) {
        let strategy = ReportStrategy::PeriodicWithOffset { period, amount, offset };
        let reported = apply_strategy(&honest, &strategy).unwrap();
        let n_spikes = honest.len() / period;
        let n_offset = honest.len() - n_spikes;
        let expected =
            (n_spikes as i64) * (amount as i64) - (n_offset as i64) * (offset as i64);
        let direct: i64 = reported
            .iter()
            .zip(&honest)
            .map(|(&r, &h)| r as i64 - h as i64)
            .sum();
        prop_assert_eq!(direct, expected);

        let cfg = AuditConfig {
            z_scale: ZScalePolicy::Fixed(50.0),
            ..AuditConfig::default()
        };
        let traj =
            run_audit_with_estimates(&honest, &exact_estimates(&honest), &strategy, &cfg).unwrap();
        prop_assert_eq!(traj.net_inflation_tokens(), expected);
    }

    #[test]
    fn inflation_sweep_flags_monotonically(
        period in 2usize..7,
        z_scale in 1.0f64..50.0,
        raw_amounts in proptest::collection::btree_set(1u64..5000, 2..10),
    ) {
        let honest = vec![300u64; 48];
        let estimates = exact_estimates(&honest);
        let amounts: Vec<u64> = raw_amounts.into_iter().collect();
        let cfg = AuditConfig {
            z_scale: ZScalePolicy::Fixed(z_scale),
            ..AuditConfig::default()
        };
        let sweep = sweep_inflation(&honest, &estimates, &amounts, period, &cfg).unwrap();
        let mut seen_flag = false;
        for row in &sweep.rows {
            if seen_flag {
                prop_assert!(row.flagged, "flag cleared at amount {}", row.amount);
            }
            seen_flag |= row.flagged;
        }
        let expect_first = sweep.rows.iter().find(|r| r.flagged).map(|r| r.amount);
        prop_assert_eq!(sweep.first_failing_amount, expect_first);
    }
}
