//! Predictive-auditor experiment: train the clean model, then run one of
//! the four attack modes (trigger steering, style rewriting, targeted
//! poisoning, phrase backdoor) and tabulate its effect.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use gauntlet_core::palace::{
    builtin_style_variants, corrupt_auxiliary, evaluate_corruption, predict, style_variant_eval,
    train_auditor, trigger_sweep, AuditorModel, AuxExample, PoisonMode, PoisonSpec,
    DEFAULT_BACKDOOR_RATE, DEFAULT_TARGETED_RATE,
};
use gauntlet_core::rng;
use gauntlet_core::tokenizer::Vocabulary;

use crate::config::{PalaceMode, PalaceParams, ResolvedConfig};
use crate::manifest::{config_digest, OutputWriter, RunManifest};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantRow {
    id: String,
    variant_name: String,
    answer: String,
}

#[derive(Serialize)]
struct PoisonMetrics {
    mode: String,
    rate: f64,
    n_train: usize,
    n_eval: usize,
    n_poisoned: usize,
    fraction_inflated: f64,
    mean_inflation_percent: f64,
    mean_inflation_vs_label_percent: f64,
    untriggered_drift: f64,
    short_n: usize,
    short_mean_clean: f64,
    short_mean_poisoned: f64,
    short_raise_percent: f64,
}

fn mean_prediction(
    model: &AuditorModel,
    vocab: &Vocabulary,
    data: &[&AuxExample],
) -> f64 {
    data.iter()
        .map(|e| predict(model, vocab, &e.prompt, &e.answer))
        .sum::<f64>()
        / data.len() as f64
}

fn write_model(out: &mut OutputWriter, name: &str, model: &AuditorModel) -> Result<()> {
    let mut text = model.to_json();
    text.push('\n');
    out.write(name, text.as_bytes())
}

fn run_poison(
    cfg: &ResolvedConfig,
    p: &PalaceParams,
    vocab: &Vocabulary,
    train: &[AuxExample],
    eval: &[AuxExample],
    clean: &AuditorModel,
    out: &mut OutputWriter,
) -> Result<()> {
    let mode = match p.mode {
        PalaceMode::Targeted => PoisonMode::Targeted,
        PalaceMode::Backdoor => PoisonMode::Backdoor,
        _ => unreachable!(),
    };
    let rate = p.rate.unwrap_or(match mode {
        PoisonMode::Targeted => DEFAULT_TARGETED_RATE,
        PoisonMode::Backdoor => DEFAULT_BACKDOOR_RATE,
    });
    let spec = PoisonSpec {
        mode,
        rate,
        label_threshold: p.label_threshold,
        factor: p.factor,
        cap: p.cap,
        trigger: p.trigger.clone(),
        target: p.target,
        noise_std: p.noise_std,
    };
    spec.validate()?;
    let corrupted = corrupt_auxiliary(train, &spec, &mut rng::stream(cfg.raw.seed, "poison", 0))?;
    let poisoned = train_auditor(
        &corrupted.data,
        vocab,
        p.feature_dim,
        p.epochs,
        p.learning_rate,
        rng::sub_seed(cfg.raw.seed, "train", 0),
    )?;
    write_model(out, "model_poisoned.json", &poisoned)?;
    out.write_json("poisoned_ids.json", &corrupted.poisoned_ids)?;

    let trigger = match mode {
        PoisonMode::Backdoor => Some(p.trigger.as_str()),
        PoisonMode::Targeted => None,
    };
    let ev = evaluate_corruption(clean, &poisoned, vocab, eval, trigger)?;

    let short: Vec<&AuxExample> = eval.iter().filter(|e| e.label < p.label_threshold).collect();
    let (short_clean, short_poisoned) = if short.is_empty() {
        (0.0, 0.0)
    } else {
        (
            mean_prediction(clean, vocab, &short),
            mean_prediction(&poisoned, vocab, &short),
        )
    };
    let metrics = PoisonMetrics {
        mode: format!("{:?}", p.mode).to_lowercase(),
        rate,
        n_train: train.len(),
        n_eval: eval.len(),
        n_poisoned: corrupted.poisoned_ids.len(),
        fraction_inflated: ev.fraction_inflated,
        mean_inflation_percent: ev.mean_inflation_percent,
        mean_inflation_vs_label_percent: ev.mean_inflation_vs_label_percent,
        untriggered_drift: ev.untriggered_drift,
        short_n: short.len(),
        short_mean_clean: short_clean,
        short_mean_poisoned: short_poisoned,
        short_raise_percent: if short_clean > 0.0 {
            100.0 * (short_poisoned - short_clean) / short_clean
        } else {
            0.0
        },
    };
    out.write_json("metrics.json", &metrics)?;
    let row = vec![
        metrics.mode.clone(),
        metrics.rate.to_string(),
        metrics.n_train.to_string(),
        metrics.n_eval.to_string(),
        metrics.n_poisoned.to_string(),
        metrics.fraction_inflated.to_string(),
        metrics.mean_inflation_percent.to_string(),
        metrics.mean_inflation_vs_label_percent.to_string(),
        metrics.untriggered_drift.to_string(),
        metrics.short_n.to_string(),
        metrics.short_mean_clean.to_string(),
        metrics.short_mean_poisoned.to_string(),
        metrics.short_raise_percent.to_string(),
    ];
    out.write(
        "metrics.csv",
        &crate::csv_bytes(
            &[
                "mode",
                "rate",
                "n_train",
                "n_eval",
                "n_poisoned",
                "fraction_inflated",
                "mean_inflation_percent",
                "mean_inflation_vs_label_percent",
                "untriggered_drift",
                "short_n",
                "short_mean_clean",
                "short_mean_poisoned",
                "short_raise_percent",
            ],
            [row],
        )?,
    )?;
    Ok(())
}

fn load_variants(path: &std::path::Path) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading variants {}", path.display()))?;
    let mut by_record: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: VariantRow = serde_json::from_str(line)
            .with_context(|| format!("variants line {}", lineno + 1))?;
        by_record
            .entry(row.id)
            .or_default()
            .insert(row.variant_name, row.answer);
    }
    Ok(by_record)
}

pub fn run(cfg: &ResolvedConfig) -> Result<RunManifest> {
    let (digest, inputs) = config_digest(cfg)?;
    let p = cfg.raw.palace.as_ref().expect("validated palace block");
    let vocab = crate::load_vocabulary(&crate::aux_vocab_path(cfg))?;
    let aux = crate::build_aux(cfg, &vocab)?;

    let train_n = ((aux.len() as f64 * p.train_fraction).round() as usize)
        .clamp(1, aux.len().saturating_sub(1));
    if aux.len() < 2 {
        bail!("aux data needs at least 2 records to split train/eval");
    }
    let (train, eval) = aux.split_at(train_n);

    let clean = train_auditor(
        train,
        &vocab,
        p.feature_dim,
        p.epochs,
        p.learning_rate,
        rng::sub_seed(cfg.raw.seed, "train", 0),
    )?;

    let mut out = OutputWriter::new(&cfg.output_dir)?;
    write_model(&mut out, "model_clean.json", &clean)?;

    match p.mode {
        PalaceMode::Steering => {
            let cands: Vec<&str> = p.candidates.iter().map(String::as_str).collect();
            let results = trigger_sweep(&clean, &vocab, eval, &cands)?;
            let rows = results.iter().enumerate().map(|(i, r)| {
                vec![
                    (i + 1).to_string(),
                    r.token.clone(),
                    r.mean_delta.to_string(),
                    r.success_rate.to_string(),
                ]
            });
            out.write(
                "triggers.csv",
                &crate::csv_bytes(&["rank", "token", "mean_delta", "success_rate"], rows)?,
            )?;
        }
        PalaceMode::Style => {
            let external = match &p.variants_file {
                Some(path) => Some(load_variants(&cfg.input_path(path))?),
                None => None,
            };
            let mut rows = Vec::new();
            for e in eval {
                let mut variants = match &external {
                    Some(map) => map.get(&e.id).cloned().unwrap_or_default(),
                    None => builtin_style_variants(&e.answer),
                };
                variants
                    .entry("original".to_string())
                    .or_insert_with(|| e.answer.clone());
                let result = style_variant_eval(&clean, &vocab, &e.prompt, &variants)?;
                for (name, pred) in &result.per_variant_prediction {
                    rows.push(vec![
                        e.id.clone(),
                        name.clone(),
                        pred.to_string(),
                        (*name == result.best_variant).to_string(),
                    ]);
                }
            }
            out.write(
                "style.csv",
                &crate::csv_bytes(&["record_id", "variant", "prediction", "best"], rows)?,
            )?;
        }
        PalaceMode::Targeted | PalaceMode::Backdoor => {
            run_poison(cfg, p, &vocab, train, eval, &clean, &mut out)?;
        }
    }
    out.finish(cfg, digest, inputs)
}
