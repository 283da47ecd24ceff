//! Synthetic auxiliary data: (prompt, answer, reasoning) records whose
//! reasoning length follows an affine law in the answer's token count.
//! Labels are always the true canonical token count of the reasoning
//! text, so the data is honest and the law is learnable.

use gauntlet_core::palace::AuxExample;
use gauntlet_core::rng;
use gauntlet_core::tokenizer::{TokenId, Vocabulary};
use rand::Rng;

use anyhow::Result;

pub struct AuxGenSpec {
    pub n: usize,
    pub base: f64,
    pub per_token: f64,
    pub noise: f64,
    pub short_answer_tokens: [usize; 2],
    pub long_answer_tokens: [usize; 2],
    pub long_fraction: f64,
}

fn random_token(vocab: &Vocabulary, rng: &mut rng::Stream) -> TokenId {
    loop {
        let id = rng.random_range(0..vocab.n_ids() as u32);
        if id != vocab.pad_id() {
            return id;
        }
    }
}

fn concat_tokens(vocab: &Vocabulary, rng: &mut rng::Stream, k: usize) -> String {
    let mut s = String::new();
    for _ in 0..k {
        s.push_str(vocab.token_str(random_token(vocab, rng)).unwrap_or(""));
    }
    s
}

/// Letters for pseudo-word answers, the most common ones in English prose.
/// Keeping answers inside this inventory (lowercase, no rare letters) means
/// an injected phrase like a poison trigger stays lexically distinctive.
const WORD_LETTERS: [char; 13] = ['e', 't', 'a', 'o', 'i', 'n', 's', 'h', 'r', 'd', 'l', 'c', 'u'];

/// A fixed pool of pseudo-words for one corpus. Answers built from a small
/// recurring pool look like prose to the featurizer: a bounded set of
/// unigrams and bigrams instead of uniform token soup.
fn word_pool(vocab: &Vocabulary, rng: &mut rng::Stream) -> Vec<String> {
    let letters: Vec<char> =
        WORD_LETTERS.iter().copied().filter(|&c| vocab.decodes_char(c)).collect();
    if letters.len() < 5 || !vocab.decodes_char(' ') {
        return Vec::new();
    }
    (0..20)
        .map(|_| {
            let len = rng.random_range(3..=6usize);
            (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect()
        })
        .collect()
}

/// Space-separated words until the canonical token count reaches `k`.
fn words_answer(pool: &[String], rng: &mut rng::Stream, vocab: &Vocabulary, k: usize) -> String {
    let mut s = String::new();
    loop {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(&pool[rng.random_range(0..pool.len())]);
        let count = vocab.canonical_tokenize(&s).map(|t| t.count()).unwrap_or(0);
        if count >= k {
            return s;
        }
    }
}

pub fn generate_aux(vocab: &Vocabulary, spec: &AuxGenSpec, seed: u64) -> Result<Vec<AuxExample>> {
    // one appended token yields roughly `ratio` canonical tokens; used to
    // size reasoning text toward a target count without quadratic rescans
    let mut pilot_rng = rng::stream(seed, "aux-pilot", 0);
    let pilot = concat_tokens(vocab, &mut pilot_rng, 400);
    let ratio = (vocab.canonical_tokenize(&pilot)?.count() as f64 / 400.0).max(0.05);

    let pool = word_pool(vocab, &mut pilot_rng);
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut stream = rng::stream(seed, "aux-record", i as u64);
        let range = if stream.random::<f64>() < spec.long_fraction {
            spec.long_answer_tokens
        } else {
            spec.short_answer_tokens
        };
        let k = stream.random_range(range[0]..=range[1]);
        let mut answer = if pool.is_empty() {
            concat_tokens(vocab, &mut stream, k)
        } else {
            words_answer(&pool, &mut stream, vocab, k)
        };
        if vocab.decodes_char('.') && !answer.ends_with('.') {
            answer.push('.');
        }
        let answer_tokens = vocab.canonical_tokenize(&answer)?.count() as f64;

        let prompt = if pool.is_empty() {
            let prompt_k = stream.random_range(4..=12usize);
            concat_tokens(vocab, &mut stream, prompt_k)
        } else {
            let n_words = stream.random_range(2..=4usize);
            let mut p = String::new();
            for w in 0..n_words {
                if w > 0 {
                    p.push(' ');
                }
                p.push_str(&pool[stream.random_range(0..pool.len())]);
            }
            p
        };

        let jitter = if spec.noise > 0.0 {
            stream.random_range(-spec.noise..spec.noise)
        } else {
            0.0
        };
        let target = (spec.base + spec.per_token * answer_tokens + jitter).max(1.0);
        let n_append = ((target / ratio).round() as usize).max(1);
        let reasoning = concat_tokens(vocab, &mut stream, n_append);
        let label = (vocab.canonical_tokenize(&reasoning)?.count() as u64).max(1);

        out.push(AuxExample {
            id: format!("aux{i:05}"),
            prompt,
            reasoning,
            answer,
            label,
        });
    }
    Ok(out)
}
