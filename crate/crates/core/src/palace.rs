//! The predictive reasoning-length auditor and the attacks on its
//! training pipeline.
//!
//! The auditor is a linear regressor over hashed (prompt, answer)
//! features standing in for the reference model: it keeps the three
//! sensitivities the attacks exploit (surface length, individual tokens,
//! training data) while training deterministically in well under a
//! second. Attacks cover trigger-token steering, answer-style rewriting,
//! targeted label poisoning of the auxiliary data, and a phrase-triggered
//! backdoor; `normalize_answer` is the defense against trailing-token
//! triggers.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, fnv1a, Stream};
use crate::tokenizer::Vocabulary;

#[cfg(not(feature = "std"))]
use num_traits::Float;

pub const DEFAULT_FEATURE_DIM: usize = 4096;
pub const DEFAULT_EPOCHS: usize = 60;
pub const DEFAULT_LEARNING_RATE: f64 = 0.002;
pub const DEFAULT_TAU: f64 = 0.25;
const BATCH: usize = 32;

pub const DEFAULT_LABEL_THRESHOLD: u64 = 600;
pub const DEFAULT_POISON_FACTOR: f64 = 5.0;
/// Reference corpus statistics behind the label cap: mean 953.76, std 654.5.
pub const DEFAULT_LABEL_CAP: f64 = 953.76 + 3.0 * 654.5;
pub const DEFAULT_TARGETED_RATE: f64 = 0.10;
pub const DEFAULT_BACKDOOR_RATE: f64 = 0.052;
pub const DEFAULT_TRIGGER: &str = "Think harder";
pub const DEFAULT_BACKDOOR_TARGET: f64 = 2917.0;
pub const DEFAULT_BACKDOOR_NOISE_STD: f64 = 150.0;

pub const DEFAULT_TRIGGER_CANDIDATES: [&str; 3] = ["boxed", "nil", "9"];

/// One auxiliary training tuple. The file schema matches trace records
/// plus the `label` column; `reasoning` may be blank because the auditor
/// never sees it.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxExample {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub reasoning: String,
    pub answer: String,
    pub label: u64,
}

pub fn aux_from_jsonl_str(s: &str) -> Result<Vec<AuxExample>> {
    let mut out = Vec::new();
    for (i, line) in s.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: AuxExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if ex.label == 0 {
            return Err(Error::Parse {
                line: i + 1,
                msg: "label must be at least 1".to_string(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn aux_to_jsonl_string(data: &[AuxExample]) -> String {
    let mut s = String::new();
    for ex in data {
        s.push_str(&serde_json::to_string(ex).expect("aux example serializes"));
        s.push('\n');
    }
    s
}

/// Splits text into token strings without requiring full decodability:
/// maximal in-alphabet runs are canonically tokenized and every other
/// character becomes its own piece.
pub fn lenient_tokens(vocab: &Vocabulary, text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut Vec<String>| {
        if !run.is_empty() {
            let seq = vocab
                .canonical_tokenize(run)
                .expect("in-alphabet run tokenizes");
            for &id in &seq.ids {
                out.push(vocab.token_str(id).expect("valid id").to_owned());
            }
            run.clear();
        }
    };
    for ch in text.chars() {
        if vocab.decodes_char(ch) {
            run.push(ch);
        } else {
            flush(&mut run, &mut out);
            out.push(ch.to_string());
        }
    }
    flush(&mut run, &mut out);
    out
}

type SparseVec = Vec<(u32, f64)>;

fn bucket(dim: usize, key: &str) -> u32 {
    (fnv1a(key.as_bytes()) % dim as u64) as u32
}

/// Hashed feature vector of one (prompt, answer) pair: character lengths
/// of both, the answer's token count, answer token unigrams and bigrams,
/// and prompt token unigrams.
pub fn featurize(vocab: &Vocabulary, prompt: &str, answer: &str, dim: usize) -> SparseVec {
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    let add = |acc: &mut BTreeMap<u32, f64>, key: &str, v: f64| {
        if v != 0.0 {
            *acc.entry(bucket(dim, key)).or_insert(0.0) += v;
        }
    };
    let a_tokens = lenient_tokens(vocab, answer);
    add(&mut acc, "len_p", prompt.chars().count() as f64 / 100.0);
    add(&mut acc, "len_a", answer.chars().count() as f64 / 100.0);
    add(&mut acc, "tokcount_a", a_tokens.len() as f64 / 100.0);
    for t in &a_tokens {
        add(&mut acc, &format!("a1:{t}"), 1.0);
    }
    for w in a_tokens.windows(2) {
        add(&mut acc, &format!("a2:{}\u{1f}{}", w[0], w[1]), 1.0);
    }
    for t in lenient_tokens(vocab, prompt) {
        add(&mut acc, &format!("p1:{t}"), 1.0);
    }
    acc.into_iter().collect()
}

fn dot(weights: &[f64], x: &SparseVec) -> f64 {
    x.iter().map(|&(j, v)| weights[j as usize] * v).sum()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// The trained auditor. Persisted as JSON; predictions clamp to ≥ 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AuditorModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_meta: TrainingMeta,
}

impl AuditorModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// Fits the regressor by mini-batch gradient descent under a fixed
/// per-epoch shuffle derived from `seed`, so the result is a pure
/// function of (data, hyperparameters).
pub fn train_auditor(
    data: &[AuxExample],
    vocab: &Vocabulary,
    dim: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<AuditorModel> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training data".to_string()));
    }
    let mut feats: Vec<SparseVec> = data
        .iter()
        .map(|e| featurize(vocab, &e.prompt, &e.answer, dim))
        .collect();
    let labels: Vec<f64> = data.iter().map(|e| e.label as f64).collect();

    // Standardize each feature by its root-mean-square count so one step
    // size fits every bucket; the scale is folded back into the stored
    // weights below, leaving predict() a plain dot over raw features.
    let mut sum_sq = alloc::vec![0.0f64; dim];
    let mut n_nonzero = alloc::vec![0u32; dim];
    for x in &feats {
        for &(j, v) in x {
            sum_sq[j as usize] += v * v;
            n_nonzero[j as usize] += 1;
        }
    }
    let rms: Vec<f64> = sum_sq
        .iter()
        .zip(&n_nonzero)
        .map(|(&s, &n)| {
            if n == 0 {
                1.0
            } else {
                (s / n as f64).sqrt().max(1.0)
            }
        })
        .collect();
    for x in &mut feats {
        for (j, v) in x.iter_mut() {
            *v /= rms[*j as usize];
        }
    }

    let mut weights = alloc::vec![0.0f64; dim];
    let mut bias = 0.0f64;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(seed, "train-shuffle", epoch as u64));
        for batch in order.chunks(BATCH) {
            let mut grad: BTreeMap<u32, f64> = BTreeMap::new();
            let mut grad_bias = 0.0;
            for &i in batch {
                let err = dot(&weights, &feats[i]) + bias - labels[i];
                for &(j, v) in &feats[i] {
                    *grad.entry(j).or_insert(0.0) += err * v;
                }
                grad_bias += err;
            }
            let scale = learning_rate / batch.len() as f64;
            for (j, g) in grad {
                weights[j as usize] -= scale * g;
            }
            bias -= scale * grad_bias;
        }
        let loss = feats
            .iter()
            .zip(&labels)
            .map(|(x, y)| {
                let e = dot(&weights, x) + bias - y;
                e * e
            })
            .sum::<f64>()
            / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
    }
    for (w, s) in weights.iter_mut().zip(&rms) {
        *w /= s;
    }
    Ok(AuditorModel {
        dim,
        weights,
        bias,
        training_meta: TrainingMeta {
            epochs,
            learning_rate,
            seed,
        },
    })
}

/// Predicted reasoning-token count for one (prompt, answer) pair.
pub fn predict(model: &AuditorModel, vocab: &Vocabulary, prompt: &str, answer: &str) -> f64 {
    let x = featurize(vocab, prompt, answer, model.dim);
    (dot(&model.weights, &x) + model.bias).max(1.0)
}

pub fn mean_squared_error(model: &AuditorModel, vocab: &Vocabulary, data: &[AuxExample]) -> f64 {
    data.iter()
        .map(|e| {
            let err = predict(model, vocab, &e.prompt, &e.answer) - e.label as f64;
            err * err
        })
        .sum::<f64>()
        / data.len() as f64
}

pub fn mean_abs_relative_error(
    model: &AuditorModel,
    vocab: &Vocabulary,
    data: &[AuxExample],
) -> f64 {
    data.iter()
        .map(|e| {
            (predict(model, vocab, &e.prompt, &e.answer) - e.label as f64).abs()
                / (e.label as f64).max(1.0)
        })
        .sum::<f64>()
        / data.len() as f64
}

/// One flagging decision. Over-reporting beyond `τ` relative deviation
/// flags; under-reporting never does.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FlagDecision {
    pub predicted: f64,
    pub reported: u64,
    pub relative_deviation: f64,
    pub flagged: bool,
}

pub fn flag_report(
    model: &AuditorModel,
    vocab: &Vocabulary,
    prompt: &str,
    answer: &str,
    reported: u64,
    tau: f64,
) -> Result<FlagDecision> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "deviation tolerance must be positive, got {tau}"
        )));
    }
    let predicted = predict(model, vocab, prompt, answer);
    let relative_deviation = (reported as f64 - predicted) / predicted.max(1.0);
    Ok(FlagDecision {
        predicted,
        reported,
        relative_deviation,
        flagged: relative_deviation > tau,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TriggerResult {
    pub token: String,
    pub mean_delta: f64,
    pub success_rate: f64,
}

/// Appends each candidate token to every answer and measures the mean
/// prediction delta; a positive delta counts as success. Results come
/// back sorted by mean delta, best first.
pub fn trigger_sweep(
    model: &AuditorModel,
    vocab: &Vocabulary,
    corpus: &[AuxExample],
    candidates: &[&str],
) -> Result<Vec<TriggerResult>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no trigger candidates".to_string()));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let base: Vec<f64> = corpus
        .iter()
        .map(|e| predict(model, vocab, &e.prompt, &e.answer))
        .collect();
    let mut results: Vec<TriggerResult> = candidates
        .iter()
        .map(|cand| {
            let mut sum = 0.0;
            let mut successes = 0usize;
            for (e, b) in corpus.iter().zip(&base) {
                let steered = format!("{} {}", e.answer, cand);
                let delta = predict(model, vocab, &e.prompt, &steered) - b;
                sum += delta;
                if delta > 0.0 {
                    successes += 1;
                }
            }
            TriggerResult {
                token: (*cand).to_string(),
                mean_delta: sum / corpus.len() as f64,
                success_rate: successes as f64 / corpus.len() as f64,
            }
        })
        .collect();
    results.sort_by(|a, b| b.mean_delta.partial_cmp(&a.mean_delta).expect("finite deltas"));
    Ok(results)
}

/// Rule-based answer rewrites standing in for LLM restyling: `long`
/// restates the answer, `verbose` pads it with connectives, `concise`
/// drops trailing clauses.
pub fn builtin_style_variants(answer: &str) -> BTreeMap<String, String> {
    let trimmed = answer.trim_end();
    let stem = trimmed.trim_end_matches(['.', '!', '?']);
    let concise = match stem.find(['.', '!', '?']) {
        Some(i) => trimmed[..=i].to_string(),
        None => {
            let words: Vec<&str> = stem.split_whitespace().collect();
            if words.len() > 1 {
                format!("{}.", words[..words.len().div_ceil(2)].join(" "))
            } else {
                trimmed.to_string()
            }
        }
    };
    let mut variants = BTreeMap::new();
    variants.insert("original".to_string(), answer.to_string());
    variants.insert("long".to_string(), format!("{trimmed} in other words {trimmed}"));
    variants.insert(
        "verbose".to_string(),
        format!("it seems clear that {stem} and so it follows in the end."),
    );
    variants.insert("concise".to_string(), concise);
    variants
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StyleEval {
    pub best_variant: String,
    pub per_variant_prediction: BTreeMap<String, f64>,
}

/// Scores every answer variant and names the one with the highest
/// prediction. Ties resolve toward "original", then alphabetically.
pub fn style_variant_eval(
    model: &AuditorModel,
    vocab: &Vocabulary,
    prompt: &str,
    variants: &BTreeMap<String, String>,
) -> Result<StyleEval> {
    if !variants.contains_key("original") {
        return Err(Error::MissingOriginalVariant);
    }
    let per_variant_prediction: BTreeMap<String, f64> = variants
        .iter()
        .map(|(name, answer)| (name.clone(), predict(model, vocab, prompt, answer)))
        .collect();
    let best = per_variant_prediction
        .values()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let best_variant = if per_variant_prediction["original"] >= best {
        "original".to_string()
    } else {
        per_variant_prediction
            .iter()
            .find(|(_, &v)| v >= best)
            .map(|(k, _)| k.clone())
            .expect("non-empty variants")
    };
    Ok(StyleEval {
        best_variant,
        per_variant_prediction,
    })
}

/// Strips trailing whitespace, then a short trailing fragment (at most
/// two whitespace-separated tokens) left dangling after the last sentence
/// terminator. Idempotent; answers without a terminator only lose
/// trailing whitespace.
pub fn normalize_answer(answer: &str) -> String {
    let trimmed = answer.trim_end();
    if let Some(i) = trimmed.rfind(['.', '!', '?']) {
        let tail = &trimmed[i + 1..];
        let n_tail_tokens = tail.split_whitespace().count();
        if (1..=2).contains(&n_tail_tokens) {
            return trimmed[..=i].to_string();
        }
    }
    trimmed.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoisonMode {
    Targeted,
    Backdoor,
}

/// Corruption recipe for the auxiliary data. The cap mirrors the
/// reference-statistics rule cap = mean + 3·std.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoisonSpec {
    pub mode: PoisonMode,
    pub rate: f64,
    pub label_threshold: u64,
    pub factor: f64,
    pub cap: f64,
    pub trigger: String,
    pub target: f64,
    pub noise_std: f64,
}

impl PoisonSpec {
    pub fn targeted(rate: f64) -> Self {
        Self {
            mode: PoisonMode::Targeted,
            rate,
            label_threshold: DEFAULT_LABEL_THRESHOLD,
            factor: DEFAULT_POISON_FACTOR,
            cap: DEFAULT_LABEL_CAP,
            trigger: DEFAULT_TRIGGER.to_string(),
            target: DEFAULT_BACKDOOR_TARGET,
            noise_std: DEFAULT_BACKDOOR_NOISE_STD,
        }
    }

    pub fn backdoor(rate: f64) -> Self {
        Self {
            mode: PoisonMode::Backdoor,
            ..Self::targeted(rate)
        }
    }

    pub fn cap_from_stats(mean: f64, std: f64) -> f64 {
        mean + 3.0 * std
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "poison rate {} outside (0, 1]",
                self.rate
            )));
        }
        if self.factor <= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "poison factor {} must exceed 1",
                self.factor
            )));
        }
        if !(self.cap.is_finite() && self.noise_std >= 0.0 && self.target >= 1.0) {
            return Err(Error::InvalidArgument("invalid poison spec".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionResult {
    pub data: Vec<AuxExample>,
    pub poisoned_ids: BTreeSet<String>,
}

fn round_clamped(value: f64, cap: f64) -> u64 {
    value.min(cap).max(1.0).round() as u64
}

/// Poisons `round(rate·|data|)` examples drawn from the below-threshold
/// stratum. Targeted mode multiplies labels by `factor` up to the cap;
/// backdoor mode prefixes the trigger phrase and rewrites labels to the
/// target plus Gaussian noise. Order is preserved.
pub fn corrupt_auxiliary(
    data: &[AuxExample],
    spec: &PoisonSpec,
    rng: &mut Stream,
) -> Result<CorruptionResult> {
    spec.validate()?;
    let needed = (spec.rate * data.len() as f64).round() as usize;
    let mut eligible: Vec<usize> = (0..data.len())
        .filter(|&i| data[i].label < spec.label_threshold)
        .collect();
    if eligible.len() < needed {
        return Err(Error::InsufficientEligible {
            needed,
            available: eligible.len(),
        });
    }
    let mut chosen = BTreeSet::new();
    for k in 0..needed {
        let j = rng.random_range(k..eligible.len());
        eligible.swap(k, j);
        chosen.insert(eligible[k]);
    }
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).expect("valid std"))
    } else {
        None
    };

    let mut out = data.to_vec();
    let mut poisoned_ids = BTreeSet::new();
    for &i in &chosen {
        let ex = &mut out[i];
        match spec.mode {
            PoisonMode::Targeted => {
                ex.label = round_clamped((spec.factor * ex.label as f64).min(spec.cap), spec.cap);
            }
            PoisonMode::Backdoor => {
                ex.answer = format!("{} {}", spec.trigger, ex.answer);
                let eps = noise.as_ref().map_or(0.0, |n| n.sample(rng));
                ex.label = round_clamped(spec.target + eps, spec.cap);
            }
        }
        poisoned_ids.insert(ex.id.clone());
    }
    Ok(CorruptionResult {
        data: out,
        poisoned_ids,
    })
}

/// Clean-vs-poisoned comparison. `mean_inflation_percent` is relative to
/// the clean model's prediction; `mean_inflation_vs_label_percent` gives
/// the same mean against ground-truth labels, since the reference leaves
/// the baseline unstated. With a trigger, predictions run on triggered
/// copies and `untriggered_drift` measures spillover onto clean answers.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CorruptionEval {
    pub fraction_inflated: f64,
    pub mean_inflation_percent: f64,
    pub mean_inflation_vs_label_percent: f64,
    pub untriggered_drift: f64,
}

pub fn evaluate_corruption(
    clean: &AuditorModel,
    poisoned: &AuditorModel,
    vocab: &Vocabulary,
    eval_set: &[AuxExample],
    trigger: Option<&str>,
) -> Result<CorruptionEval> {
    if eval_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if clean.dim != poisoned.dim {
        return Err(Error::InvalidArgument(
            "models use different feature spaces".to_string(),
        ));
    }
    let mut inflated = 0usize;
    let mut sum_vs_clean = 0.0;
    let mut sum_vs_label = 0.0;
    let mut drift_sum = 0.0;
    for e in eval_set {
        let answer = match trigger {
            Some(t) => format!("{t} {}", e.answer),
            None => e.answer.clone(),
        };
        let c = predict(clean, vocab, &e.prompt, &answer);
        let p = predict(poisoned, vocab, &e.prompt, &answer);
        if p > c {
            inflated += 1;
            sum_vs_clean += 100.0 * (p - c) / c;
            sum_vs_label += 100.0 * (p - e.label as f64) / (e.label as f64).max(1.0);
        }
        let c0 = predict(clean, vocab, &e.prompt, &e.answer);
        let p0 = predict(poisoned, vocab, &e.prompt, &e.answer);
        drift_sum += (p0 - c0).abs() / c0;
    }
    let denom = inflated.max(1) as f64;
    Ok(CorruptionEval {
        fraction_inflated: inflated as f64 / eval_set.len() as f64,
        mean_inflation_percent: sum_vs_clean / denom,
        mean_inflation_vs_label_percent: sum_vs_label / denom,
        untriggered_drift: drift_sum / eval_set.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letters_vocab() -> Vocabulary {
        let mut tokens: Vec<String> = ('a'..='z').map(|c| c.to_string()).collect();
        tokens.push(" ".to_string());
        tokens.push(".".to_string());
        tokens.push("T".to_string());
        tokens.push("th".to_string());
        tokens.push("er".to_string());
        tokens.push("in".to_string());
        Vocabulary::new(tokens, "_".to_string()).unwrap()
    }

    fn linear_aux(n: usize, seed: u64) -> Vec<AuxExample> {
        // label = 3 × answer token count, ground truth the features span
        let vocab = letters_vocab();
        let mut stream = rng::stream(seed, "linear-aux", 0);
        let words = ["the", "tin", "north", "ember", "rain", "stone", "pith", "veil"];
        (0..n)
            .map(|i| {
                let n_words = stream.random_range(3..30usize);
                let mut answer = String::new();
                for w in 0..n_words {
                    if w > 0 {
                        answer.push(' ');
                    }
                    answer.push_str(words[stream.random_range(0..words.len())]);
                }
                answer.push('.');
                let label = 3 * lenient_tokens(&vocab, &answer).len() as u64;
                AuxExample {
                    id: format!("x{i:05}"),
                    prompt: "why".to_string(),
                    reasoning: String::new(),
                    answer,
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn featurize_is_pure_and_token_sensitive() {
        let vocab = letters_vocab();
        let a = featurize(&vocab, "abc", "the rain.", 4096);
        let b = featurize(&vocab, "abc", "the rain.", 4096);
        assert_eq!(a, b);
        let c = featurize(&vocab, "abc", "the rain. x", 4096);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_answer_keeps_only_prompt_and_length_features() {
        let vocab = letters_vocab();
        let x = featurize(&vocab, "ab", "", 4096);
        let expected: BTreeSet<u32> = [
            bucket(4096, "len_p"),
            bucket(4096, "p1:a"),
            bucket(4096, "p1:b"),
        ]
        .into_iter()
        .collect();
        let got: BTreeSet<u32> = x.iter().map(|&(j, _)| j).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn lenient_tokens_cover_unknown_characters() {
        let vocab = letters_vocab();
        let toks = lenient_tokens(&vocab, "Think harder!");
        assert!(toks.contains(&"T".to_string()));
        assert!(toks.contains(&"!".to_string()));
        let joined: String = toks.concat();
        assert_eq!(joined, "Think harder!");
    }

    #[test]
    fn training_is_deterministic_and_loss_decreases() {
        let vocab = letters_vocab();
        let data = linear_aux(120, 5);
        let short = train_auditor(&data, &vocab, 1024, 2, DEFAULT_LEARNING_RATE, 7).unwrap();
        let long = train_auditor(&data, &vocab, 1024, 20, DEFAULT_LEARNING_RATE, 7).unwrap();
        assert!(
            mean_squared_error(&long, &vocab, &data) < mean_squared_error(&short, &vocab, &data)
        );
        let again = train_auditor(&data, &vocab, 1024, 20, DEFAULT_LEARNING_RATE, 7).unwrap();
        assert_eq!(long, again);
        assert_eq!(long.to_json(), again.to_json());
    }

    #[test]
    fn linear_ground_truth_is_recovered() {
        let vocab = letters_vocab();
        let data = linear_aux(500, 11);
        let (train, held_out) = data.split_at(400);
        let model =
            train_auditor(train, &vocab, 4096, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE, 3).unwrap();
        let mare = mean_abs_relative_error(&model, &vocab, held_out);
        assert!(mare <= 0.10, "held-out error {mare}");
    }

    #[test]
    fn repeated_example_interpolates_its_label() {
        let vocab = letters_vocab();
        let ex = AuxExample {
            id: "solo".to_string(),
            prompt: "p".to_string(),
            reasoning: String::new(),
            answer: "the tin rain.".to_string(),
            label: 140,
        };
        let data: Vec<AuxExample> = core::iter::repeat_n(ex.clone(), 64).collect();
        let model = train_auditor(&data, &vocab, 1024, 200, 0.01, 1).unwrap();
        let pred = predict(&model, &vocab, &ex.prompt, &ex.answer);
        assert!((pred - 140.0).abs() <= 1.0, "prediction {pred}");
    }

    #[test]
    fn divergent_training_names_the_epoch() {
        let vocab = letters_vocab();
        let data = linear_aux(64, 2);
        let err = train_auditor(&data, &vocab, 1024, 50, 1e3, 1).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged(_)));
    }

    #[test]
    fn prediction_clamps_to_one() {
        let vocab = letters_vocab();
        let model = AuditorModel {
            dim: 64,
            weights: alloc::vec![0.0; 64],
            bias: -5.0,
            training_meta: TrainingMeta {
                epochs: 0,
                learning_rate: 0.0,
                seed: 0,
            },
        };
        assert_eq!(predict(&model, &vocab, "p", "a"), 1.0);
    }

    fn fixed_model(vocab: &Vocabulary, bias: f64) -> AuditorModel {
        let _ = vocab;
        AuditorModel {
            dim: 64,
            weights: alloc::vec![0.0; 64],
            bias,
            training_meta: TrainingMeta {
                epochs: 0,
                learning_rate: 0.0,
                seed: 0,
            },
        }
    }

    #[test]
    fn flag_rule_examples() {
        let vocab = letters_vocab();
        let model = fixed_model(&vocab, 100.0);
        let same = flag_report(&model, &vocab, "p", "a", 100, 0.25).unwrap();
        assert!(!same.flagged);
        assert_eq!(same.relative_deviation, 0.0);
        let over = flag_report(&model, &vocab, "p", "a", 130, 0.25).unwrap();
        assert!(over.flagged);
        assert!((over.relative_deviation - 0.30).abs() < 1e-12);
        let under = flag_report(&model, &vocab, "p", "a", 60, 0.25).unwrap();
        assert!(!under.flagged);
        assert!(flag_report(&model, &vocab, "p", "a", 1, 0.0).is_err());
    }

    #[test]
    fn planted_trigger_ranks_first() {
        // "9" stays a single piece under lenient tokenization and never
        // occurs in the corpus, so a planted weight isolates it
        let vocab = letters_vocab();
        let mut model = fixed_model(&vocab, 50.0);
        model.dim = 4096;
        model.weights = alloc::vec![0.0; 4096];
        model.weights[bucket(4096, "a1:9") as usize] = 500.0;
        let corpus = linear_aux(20, 9);
        let ranked = trigger_sweep(&model, &vocab, &corpus, &["boxed", "nil", "9"]).unwrap();
        assert_eq!(ranked[0].token, "9");
        assert!(ranked[0].mean_delta > ranked[1].mean_delta);
        assert_eq!(ranked[0].success_rate, 1.0);
    }

    #[test]
    fn style_eval_prefers_long_under_length_positive_model() {
        let vocab = letters_vocab();
        let mut model = fixed_model(&vocab, 0.0);
        model.dim = 4096;
        model.weights = alloc::vec![0.0; 4096];
        model.weights[bucket(4096, "tokcount_a") as usize] = 300.0;
        let variants = builtin_style_variants("the rain started in the north then it stopped.");
        let eval = style_variant_eval(&model, &vocab, "p", &variants).unwrap();
        assert_eq!(eval.best_variant, "long");
        assert!(
            eval.per_variant_prediction["long"] > eval.per_variant_prediction["original"]
        );
        assert!(
            eval.per_variant_prediction["concise"] < eval.per_variant_prediction["original"]
        );
    }

    #[test]
    fn style_eval_tie_breaks_toward_original() {
        let vocab = letters_vocab();
        let model = fixed_model(&vocab, 42.0);
        let mut variants = BTreeMap::new();
        for name in ["original", "long", "verbose"] {
            variants.insert(name.to_string(), "same answer.".to_string());
        }
        let eval = style_variant_eval(&model, &vocab, "p", &variants).unwrap();
        assert_eq!(eval.best_variant, "original");
        let missing: BTreeMap<String, String> =
            [("long".to_string(), "x.".to_string())].into_iter().collect();
        assert!(matches!(
            style_variant_eval(&model, &vocab, "p", &missing).unwrap_err(),
            Error::MissingOriginalVariant
        ));
    }

    #[test]
    fn normalize_strips_short_trailing_fragments() {
        assert_eq!(normalize_answer("answer is 42. boxed"), "answer is 42.");
        assert_eq!(normalize_answer("answer is 42."), "answer is 42.");
        assert_eq!(normalize_answer("answer is 42. nil 9"), "answer is 42.");
        assert_eq!(
            normalize_answer("answer is 42. one two three"),
            "answer is 42. one two three"
        );
        assert_eq!(normalize_answer("no terminator here"), "no terminator here");
        assert_eq!(normalize_answer("trailing spaces.   "), "trailing spaces.");
    }

    #[test]
    fn normalize_is_idempotent_on_varied_texts() {
        let mut stream = rng::stream(13, "norm", 0);
        let pieces = ["word", "42", ".", "!", "?", " ", "  ", "boxed", "nil"];
        for _ in 0..1000 {
            let n = stream.random_range(0..12usize);
            let text: String = (0..n)
                .map(|_| pieces[stream.random_range(0..pieces.len())])
                .collect::<Vec<_>>()
                .join("");
            let once = normalize_answer(&text);
            assert_eq!(normalize_answer(&once), once, "text {text:?}");
        }
    }

    fn poison_data(n: usize) -> Vec<AuxExample> {
        (0..n)
            .map(|i| AuxExample {
                id: format!("p{i:04}"),
                prompt: "p".to_string(),
                reasoning: String::new(),
                answer: format!("answer {i}."),
                // half the stratum below 600, half above
                label: if i % 2 == 0 { 100 + i as u64 } else { 700 + i as u64 },
            })
            .collect()
    }

    #[test]
    fn targeted_labels_scale_and_clamp() {
        let mut data = poison_data(10);
        data[0].label = 500;
        data[2].label = 590;
        let spec = PoisonSpec {
            rate: 0.2,
            ..PoisonSpec::targeted(0.2)
        };
        // force selection determinism by running until both cases appear
        let mut saw_scaled = false;
        let mut saw_clamped = false;
        for trial in 0..40 {
            let result =
                corrupt_auxiliary(&data, &spec, &mut rng::stream(trial, "poison", 0)).unwrap();
            assert_eq!(result.poisoned_ids.len(), 2);
            for ex in &result.data {
                if ex.id == "p0000" && result.poisoned_ids.contains(&ex.id) {
                    assert_eq!(ex.label, 2500);
                    saw_scaled = true;
                }
                if ex.id == "p0002" && result.poisoned_ids.contains(&ex.id) {
                    assert_eq!(ex.label, 2917);
                    saw_clamped = true;
                }
            }
        }
        assert!(saw_scaled && saw_clamped);
    }

    #[test]
    fn poison_budget_is_exact_and_capped() {
        let data = poison_data(200);
        let spec = PoisonSpec::targeted(0.10);
        let result = corrupt_auxiliary(&data, &spec, &mut rng::stream(3, "budget", 0)).unwrap();
        assert_eq!(result.poisoned_ids.len(), 20);
        assert_eq!(result.data.len(), data.len());
        for ex in &result.data {
            assert!(ex.label as f64 <= DEFAULT_LABEL_CAP.ceil());
            if result.poisoned_ids.contains(&ex.id) {
                let original = &data.iter().find(|d| d.id == ex.id).unwrap();
                assert!(original.label < 600);
                assert_eq!(
                    ex.label,
                    ((original.label as f64 * 5.0).min(DEFAULT_LABEL_CAP)).round() as u64
                );
            }
        }
    }

    #[test]
    fn noiseless_backdoor_hits_target_exactly() {
        let data = poison_data(100);
        let mut spec = PoisonSpec::backdoor(0.052);
        spec.noise_std = 0.0;
        let result = corrupt_auxiliary(&data, &spec, &mut rng::stream(4, "bd", 0)).unwrap();
        assert_eq!(result.poisoned_ids.len(), 5);
        for ex in &result.data {
            if result.poisoned_ids.contains(&ex.id) {
                assert_eq!(ex.label, 2917);
                assert!(ex.answer.starts_with("Think harder "));
            } else {
                assert!(!ex.answer.starts_with("Think harder"));
            }
        }
    }

    #[test]
    fn insufficient_stratum_reports_shortfall() {
        let mut data = poison_data(100);
        for ex in &mut data {
            ex.label = 700;
        }
        let err =
            corrupt_auxiliary(&data, &PoisonSpec::targeted(0.10), &mut rng::stream(5, "shrt", 0))
                .unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientEligible {
                needed: 10,
                available: 0
            }
        ));
    }

    #[test]
    fn label_cap_matches_reference_statistics() {
        assert!((DEFAULT_LABEL_CAP - PoisonSpec::cap_from_stats(953.76, 654.5)).abs() < 1e-12);
        assert!((DEFAULT_LABEL_CAP - 2917.26).abs() < 1e-9);
    }

    #[test]
    fn identical_models_show_no_inflation_or_drift() {
        let vocab = letters_vocab();
        let data = linear_aux(30, 17);
        let model = train_auditor(&data, &vocab, 1024, 5, DEFAULT_LEARNING_RATE, 2).unwrap();
        let eval =
            evaluate_corruption(&model, &model, &vocab, &data, Some("Think harder")).unwrap();
        assert_eq!(eval.fraction_inflated, 0.0);
        assert_eq!(eval.mean_inflation_percent, 0.0);
        assert_eq!(eval.untriggered_drift, 0.0);
    }
}
