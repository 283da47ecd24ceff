//! Properties and frozen measurements for the predictive auditor: flag
//! rule laws, the normalization defense, poison budget accounting, and
//! the targeted/backdoor corruption effects on a fixed-seed corpus.

use gauntlet_core::palace::{
    aux_from_jsonl_str, aux_to_jsonl_string, corrupt_auxiliary, evaluate_corruption, flag_report,
    lenient_tokens, normalize_answer, predict, train_auditor, AuxExample, PoisonSpec,
    DEFAULT_LEARNING_RATE, DEFAULT_TRIGGER_CANDIDATES,
};
use gauntlet_core::rng;
use gauntlet_core::tokenizer::Vocabulary;

use proptest::prelude::*;
use rand::Rng;

fn text_vocab() -> Vocabulary {
    let mut tokens: Vec<String> = ('a'..='z').map(|c| c.to_string()).collect();
    for t in [
        " ", ".", "T", "th", "he", "in", "er", "an", "re", "on", "at", "en", "nd", "es", "or",
        "te", "ed", "is", "it", "al", "ar", "st",
    ] {
        tokens.push(t.to_string());
    }
    Vocabulary::new(tokens, "_".to_string()).unwrap()
}

const WORDS: [&str; 16] = [
    "the", "stone", "rain", "north", "tide", "ember", "veil", "pith", "cedar", "loam", "brine",
    "alder", "moss", "fen", "tarn", "heath",
];

/// Aux data whose labels follow an affine law in answer length, split
/// into a short stratum (labels under 600) and a long one.
fn make_aux(n: usize, seed: u64, vocab: &Vocabulary) -> Vec<AuxExample> {
    let mut stream = rng::stream(seed, "aux-gen", 0);
    (0..n)
        .map(|i| {
            let long = i % 5 >= 3;
            let n_words = if long {
                stream.random_range(45..80usize)
            } else {
                stream.random_range(4..30usize)
            };
            let mut answer = String::new();
            for w in 0..n_words {
                if w > 0 {
                    answer.push(' ');
                }
                answer.push_str(WORDS[stream.random_range(0..WORDS.len())]);
            }
            answer.push('.');
            let tokens = lenient_tokens(vocab, &answer).len() as f64;
            let noise: f64 = stream.random_range(-20.0..20.0);
            let label = (40.0 + 6.5 * tokens + noise).max(1.0).round() as u64;
            AuxExample {
                id: format!("a{i:05}"),
                prompt: format!("question {}", WORDS[i % WORDS.len()]),
                reasoning: String::new(),
                answer,
                label,
            }
        })
        .collect()
}

#[test]
fn aux_jsonl_round_trips() {
    let vocab = text_vocab();
    let data = make_aux(20, 1, &vocab);
    let text = aux_to_jsonl_string(&data);
    let back = aux_from_jsonl_str(&text).unwrap();
    assert_eq!(data, back);
    assert!(aux_from_jsonl_str("{\"id\":\"x\",\"prompt\":\"p\",\"answer\":\"a\",\"label\":0}").is_err());
}

#[test]
fn normalization_restores_pre_trigger_flags() {
    let vocab = text_vocab();
    let data = make_aux(300, 3, &vocab);
    let (train, eval) = data.split_at(250);
    let model = train_auditor(train, &vocab, 4096, 60, DEFAULT_LEARNING_RATE, 5).unwrap();
    for ex in eval {
        let reported = (predict(&model, &vocab, &ex.prompt, &ex.answer) * 1.1).round() as u64;
        let base = flag_report(&model, &vocab, &ex.prompt, &ex.answer, reported, 0.25).unwrap();
        for cand in DEFAULT_TRIGGER_CANDIDATES {
            let steered = format!("{} {}", ex.answer, cand);
            let normalized = normalize_answer(&steered);
            assert_eq!(normalized, ex.answer, "normalize must strip {cand:?}");
            let after =
                flag_report(&model, &vocab, &ex.prompt, &normalized, reported, 0.25).unwrap();
            assert_eq!(base, after);
        }
    }
}

#[test]
fn targeted_poisoning_raises_short_stratum_predictions() {
    let vocab = text_vocab();
    let data = make_aux(600, 7, &vocab);
    let (train, eval) = data.split_at(500);
    let clean = train_auditor(train, &vocab, 4096, 60, DEFAULT_LEARNING_RATE, 9).unwrap();
    let spec = PoisonSpec::targeted(0.10);
    let result = corrupt_auxiliary(train, &spec, &mut rng::stream(11, "targeted", 0)).unwrap();
    assert_eq!(result.poisoned_ids.len(), 50);
    let poisoned =
        train_auditor(&result.data, &vocab, 4096, 60, DEFAULT_LEARNING_RATE, 9).unwrap();

    let short: Vec<&AuxExample> = eval.iter().filter(|e| e.label < 600).collect();
    assert!(short.len() >= 30);
    let mean_clean = short
        .iter()
        .map(|e| predict(&clean, &vocab, &e.prompt, &e.answer))
        .sum::<f64>()
        / short.len() as f64;
    let mean_poisoned = short
        .iter()
        .map(|e| predict(&poisoned, &vocab, &e.prompt, &e.answer))
        .sum::<f64>()
        / short.len() as f64;
    assert!(
        mean_poisoned >= 1.20 * mean_clean,
        "short-stratum means: clean {mean_clean:.1}, poisoned {mean_poisoned:.1}"
    );
}

#[test]
fn backdoor_fires_on_trigger_and_stays_local() {
    let vocab = text_vocab();
    let data = make_aux(600, 13, &vocab);
    let (train, eval) = data.split_at(500);
    let clean = train_auditor(train, &vocab, 4096, 300, DEFAULT_LEARNING_RATE, 15).unwrap();
    let spec = PoisonSpec::backdoor(0.052);
    let result = corrupt_auxiliary(train, &spec, &mut rng::stream(17, "backdoor", 0)).unwrap();
    assert_eq!(result.poisoned_ids.len(), 26);
    let poisoned =
        train_auditor(&result.data, &vocab, 4096, 300, DEFAULT_LEARNING_RATE, 15).unwrap();

    let metrics =
        evaluate_corruption(&clean, &poisoned, &vocab, eval, Some("Think harder")).unwrap();
    assert!(
        metrics.fraction_inflated >= 0.95,
        "triggered inflation fraction {}",
        metrics.fraction_inflated
    );
    assert!(
        metrics.untriggered_drift <= 0.05,
        "untriggered drift {}",
        metrics.untriggered_drift
    );
    assert!(metrics.mean_inflation_percent > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn under_reports_never_flag(
        bias in 1.0f64..500.0,
        frac in 0.0f64..1.0,
        tau in 0.01f64..2.0,
    ) {
        let vocab = text_vocab();
        let model = gauntlet_core::palace::AuditorModel {
            dim: 64,
            weights: vec![0.0; 64],
            bias,
            training_meta: gauntlet_core::palace::TrainingMeta {
                epochs: 0,
                learning_rate: 0.0,
                seed: 0,
            },
        };
        let reported = (bias * frac).floor() as u64;
        let d = flag_report(&model, &vocab, "p", "a.", reported, tau).unwrap();
        prop_assert!(!d.flagged);
    }

    #[test]
    fn poison_budget_is_round_rate_times_n(
        n in 20usize..200,
        rate in 0.01f64..0.3,
        seed in 0u64..50,
    ) {
        let data: Vec<AuxExample> = (0..n)
            .map(|i| AuxExample {
                id: format!("e{i}"),
                prompt: "p".to_string(),
                reasoning: String::new(),
                answer: format!("answer {i}."),
                label: 50 + (i as u64 * 7) % 500,
            })
            .collect();
        let spec = PoisonSpec::targeted(rate);
        let result = corrupt_auxiliary(&data, &spec, &mut rng::stream(seed, "pb", 0)).unwrap();
        prop_assert_eq!(result.poisoned_ids.len(), (rate * n as f64).round() as usize);
        for ex in &result.data {
            prop_assert!((ex.label as f64) <= gauntlet_core::palace::DEFAULT_LABEL_CAP.ceil());
        }
        // unpoisoned rows byte-identical
        for (orig, out) in data.iter().zip(&result.data) {
            if !result.poisoned_ids.contains(&out.id) {
                prop_assert_eq!(orig, out);
            }
        }
    }

    #[test]
    fn normalize_is_idempotent(text in "[a-z0-9 .!?]{0,40}") {
        let once = normalize_answer(&text);
        prop_assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn normalize_never_strips_more_than_the_tail(text in "[a-z .]{1,40}") {
        let out = normalize_answer(&text);
        prop_assert!(text.starts_with(&out) || text.trim_end().starts_with(&out));
    }
}
