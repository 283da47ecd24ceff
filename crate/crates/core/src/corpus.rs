//! Trace corpora: JSONL ingestion and seed-reproducible synthesis.
//!
//! Synthetic reasoning lengths follow a log-normal fitted by moment
//! matching (strictly positive and right-skewed, like reasoning-length
//! data), with rejection outside `[1, mean + 6*std]`. Texts are built from
//! the vocabulary's own tokens, so every record is decodable by
//! construction. All statistics use the population standard deviation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::{TokenId, Vocabulary};

/// One audited interaction: the prompt `P`, hidden reasoning `R` and final
/// answer `A`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub id: String,
    pub prompt: String,
    pub reasoning: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusSource {
    Ingested,
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<TraceRecord>,
    pub source: CorpusSource,
}

/// Reasoning-length statistics. Histogram buckets are 100 tokens wide,
/// keyed by their lower edge.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
    pub histogram: BTreeMap<u64, u64>,
}

pub const HISTOGRAM_BUCKET: u64 = 100;

impl LengthStats {
    /// A generation target; the histogram stays empty.
    pub fn target(mean: f64, std: f64) -> Self {
        Self {
            mean,
            std,
            histogram: BTreeMap::new(),
        }
    }

    /// Population statistics of a set of counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = counts.len() as f64;
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let mut histogram = BTreeMap::new();
        for &c in counts {
            *histogram.entry(c / HISTOGRAM_BUCKET * HISTOGRAM_BUCKET).or_insert(0) += 1;
        }
        Ok(Self {
            mean,
            std: var.sqrt(),
            histogram,
        })
    }
}

impl Corpus {
    /// Parses the JSONL corpus format: one record object per line, unknown
    /// keys rejected, ids unique. Line numbers are 1-based.
    pub fn from_jsonl_str(s: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, line) in s.lines().enumerate() {
            let lineno = i + 1;
            let rec: TraceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            if let Some(&first) = seen.get(&rec.id) {
                return Err(Error::DuplicateId {
                    id: rec.id,
                    first,
                    second: lineno,
                });
            }
            seen.insert(rec.id.clone(), lineno);
            records.push(rec);
        }
        Ok(Self {
            records,
            source: CorpusSource::Ingested,
        })
    }

    /// Serializes back to the JSONL format, one record per line.
    pub fn to_jsonl_string(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// How many random tokens to draw for the ratio pilot.
const PILOT_TOKENS: usize = 512;
/// Adjustment rounds when steering a text toward its target count.
const ADJUST_ROUNDS: usize = 6;

fn random_token(vocab: &Vocabulary, rng: &mut impl Rng) -> TokenId {
    rng.random_range(1..vocab.n_ids() as TokenId)
}

fn concat_tokens(vocab: &Vocabulary, picks: &[TokenId]) -> String {
    let mut s = String::new();
    for &id in picks {
        s.push_str(vocab.token_str(id).expect("picked id is valid"));
    }
    s
}

/// Builds a text whose canonical token count lands on `target` (within a
/// token or two): start from a pilot-calibrated number of random tokens,
/// then re-measure and adjust.
fn text_with_count(
    vocab: &Vocabulary,
    target: u64,
    ratio: f64,
    rng: &mut impl Rng,
) -> (String, u64) {
    let mut k = ((target as f64 / ratio).round() as i64).max(1);
    let mut picks: Vec<TokenId> = Vec::new();
    let mut best: Option<(u64, String, u64)> = None;
    for _ in 0..ADJUST_ROUNDS {
        let kk = k.max(1) as usize;
        while picks.len() < kk {
            picks.push(random_token(vocab, rng));
        }
        picks.truncate(kk);
        let text = concat_tokens(vocab, &picks);
        let measured = vocab.canonical_tokenize(&text).expect("own tokens decode").count() as u64;
        let err = measured.abs_diff(target);
        if best.as_ref().map(|(e, _, _)| err < *e).unwrap_or(true) {
            best = Some((err, text, measured));
        }
        if err == 0 {
            break;
        }
        let mut delta = ((target as f64 - measured as f64) / ratio).round() as i64;
        if delta == 0 {
            delta = if measured > target { -1 } else { 1 };
        }
        k += delta;
    }
    let (_, text, measured) = best.expect("at least one round ran");
    (text, measured)
}

/// Generates `n` records whose canonical reasoning counts approximate a
/// log-normal with the target mean and std. Prompts and answers are short
/// texts over the same vocabulary; answers end with "." when the
/// vocabulary can express one, so they have a sentence-final ending.
/// Identical `(n, target, seed)` reproduce byte-identical corpora.
pub fn generate_synthetic(
    vocab: &Vocabulary,
    n: usize,
    target: &LengthStats,
    seed: u64,
) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".to_string()));
    }
    if !(target.mean > 0.0) {
        return Err(Error::InvalidArgument("target mean must be > 0".to_string()));
    }

    // Pilot: how many canonical tokens does one appended token yield?
    let mut pilot_rng = rng::stream(seed, "corpus-pilot", 0);
    let picks: Vec<TokenId> = (0..PILOT_TOKENS).map(|_| random_token(vocab, &mut pilot_rng)).collect();
    let pilot = concat_tokens(vocab, &picks);
    let ratio = vocab.canonical_tokenize(&pilot)?.count() as f64 / PILOT_TOKENS as f64;

    let m = target.mean;
    let s = target.std;
    let hi = m + 6.0 * s;
    let lognormal = if s > 0.0 {
        let sigma2 = (1.0 + (s / m) * (s / m)).ln();
        Some(LogNormal::new(m.ln() - sigma2 / 2.0, sigma2.sqrt()).expect("valid params"))
    } else {
        None
    };

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut len_rng = rng::stream(seed, "corpus-len", i as u64);
        let count = match &lognormal {
            Some(d) => {
                let mut draw = d.sample(&mut len_rng);
                let mut attempts = 0;
                while !(1.0..=hi).contains(&draw) && attempts < 1000 {
                    draw = d.sample(&mut len_rng);
                    attempts += 1;
                }
                draw.clamp(1.0, hi).round().max(1.0) as u64
            }
            None => m.round().max(1.0) as u64,
        };

        let mut text_rng = rng::stream(seed, "corpus-text", i as u64);
        let (reasoning, _) = text_with_count(vocab, count, ratio, &mut text_rng);

        let k_prompt = text_rng.random_range(8..=24usize);
        let prompt_picks: Vec<TokenId> =
            (0..k_prompt).map(|_| random_token(vocab, &mut text_rng)).collect();
        let prompt = concat_tokens(vocab, &prompt_picks);

        let k_answer = text_rng.random_range(6..=16usize);
        let answer_picks: Vec<TokenId> =
            (0..k_answer).map(|_| random_token(vocab, &mut text_rng)).collect();
        let mut answer = concat_tokens(vocab, &answer_picks);
        if vocab.decodes_char('.') {
            answer.push('.');
        }

        records.push(TraceRecord {
            id: alloc::format!("r{i:06}"),
            prompt,
            reasoning,
            answer,
        });
    }
    Ok(Corpus {
        records,
        source: CorpusSource::Synthetic { seed },
    })
}

/// Statistics of the canonical reasoning token counts.
pub fn corpus_stats(vocab: &Vocabulary, corpus: &Corpus) -> Result<LengthStats> {
    if corpus.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counts = corpus
        .records
        .iter()
        .map(|r| Ok(vocab.canonical_tokenize(&r.reasoning)?.count() as u64))
        .collect::<Result<Vec<u64>>>()?;
    LengthStats::from_counts(&counts)
}
