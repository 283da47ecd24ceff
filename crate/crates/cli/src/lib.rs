//! Experiment harness around the auditing core: config parsing, the
//! four pipelines, manifests, CSV/SVG emission and run reports.

pub mod auxgen;
pub mod config;
pub mod manifest;
pub mod pipelines;
pub mod report;
pub mod svg;

use std::fmt;
use std::path::Path;

use gauntlet_core::corpus::{Corpus, LengthStats};
use gauntlet_core::palace::{aux_from_jsonl_str, AuxExample};
use gauntlet_core::rng;
use gauntlet_core::tokenizer::Vocabulary;

use anyhow::{bail, Context, Result};
use config::{AuxSpec, CorpusSpec, ResolvedConfig};

/// Top-level failure classification; the process exit code follows it.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Pipeline { stage: String, source: anyhow::Error },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Pipeline { stage, source } => {
                write!(f, "pipeline error in stage \"{stage}\": {source:#}")
            }
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Pipeline { .. } => 2,
        }
    }
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading vocabulary {}", path.display()))?;
    Vocabulary::from_json(&text)
        .with_context(|| format!("parsing vocabulary {}", path.display()))
}

/// Materializes the corpus named by the config: synthetic corpora are
/// regenerated from the run seed, file corpora are read as JSONL.
pub fn load_corpus(cfg: &ResolvedConfig, vocab: &Vocabulary) -> Result<Corpus> {
    match cfg.raw.corpus.as_ref().expect("validated corpus block") {
        CorpusSpec::Synthetic { n, mean, std } => {
            let stats = LengthStats::target(*mean, *std);
            let seed = rng::sub_seed(cfg.raw.seed, "corpus", 0);
            Ok(gauntlet_core::corpus::generate_synthetic(vocab, *n, &stats, seed)?)
        }
        CorpusSpec::File { path } => {
            let resolved = cfg.input_path(path);
            let text = std::fs::read_to_string(&resolved)
                .with_context(|| format!("reading corpus {}", resolved.display()))?;
            Ok(Corpus::from_jsonl_str(&text)
                .with_context(|| format!("parsing corpus {}", resolved.display()))?)
        }
    }
}

/// The vocabulary governing auxiliary data: an explicit override on a
/// synthetic aux block, otherwise the experiment vocabulary.
pub fn aux_vocab_path(cfg: &ResolvedConfig) -> std::path::PathBuf {
    match &cfg.raw.aux {
        Some(AuxSpec::Synthetic {
            vocabulary: Some(p),
            ..
        }) => cfg.input_path(p),
        _ => cfg.vocabulary_path(),
    }
}

pub fn build_aux(cfg: &ResolvedConfig, vocab: &Vocabulary) -> Result<Vec<AuxExample>> {
    match cfg.raw.aux.as_ref().expect("validated aux block") {
        AuxSpec::Synthetic {
            n,
            base,
            per_token,
            noise,
            short_answer_tokens,
            long_answer_tokens,
            long_fraction,
            vocabulary: _,
        } => {
            let spec = auxgen::AuxGenSpec {
                n: *n,
                base: *base,
                per_token: *per_token,
                noise: *noise,
                short_answer_tokens: *short_answer_tokens,
                long_answer_tokens: *long_answer_tokens,
                long_fraction: *long_fraction,
            };
            auxgen::generate_aux(vocab, &spec, rng::sub_seed(cfg.raw.seed, "aux", 0))
        }
        AuxSpec::File { path } => {
            let resolved = cfg.input_path(path);
            let text = std::fs::read_to_string(&resolved)
                .with_context(|| format!("reading aux data {}", resolved.display()))?;
            let data = aux_from_jsonl_str(&text)
                .with_context(|| format!("parsing aux data {}", resolved.display()))?;
            if data.is_empty() {
                bail!("aux data {} has no records", resolved.display());
            }
            Ok(data)
        }
    }
}

/// Builds one CSV byte buffer: header row first, then rows in the order
/// given. All experiment CSVs funnel through here.
pub fn csv_bytes<I>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

pub fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
