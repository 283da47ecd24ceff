//! An intentionally ambiguous toy tokenizer.
//!
//! A string over the vocabulary's alphabet usually has many valid token
//! segmentations. This module provides:
//!
//! * exact segmentation counting (big-integer dynamic programming over
//!   string positions — 64-bit counters overflow near 90 characters),
//! * canonical tokenization: the minimal-length segmentation, ties broken
//!   by repeatedly taking the longest feasible token among segmentations
//!   that still achieve the global minimum,
//! * uniform sampling over all segmentations, by backward sampling
//!   proportional to suffix counts,
//! * the Monte-Carlo expected-count estimator built on that sampler.
//!
//! The canonical count is what an honest provider reports; because it is
//! the minimum over segmentations, the Monte-Carlo estimate of any
//! ambiguous string can only sit at or above it. The statistical auditor's
//! negative drift falls out of that ordering.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub type TokenId = u32;

/// Id reserved for the padding token.
pub const PAD_ID: TokenId = 0;

/// A fixed token inventory. Ids are assigned by list order starting at 1;
/// id 0 is the padding token, which never participates in segmentation.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    /// `tokens[0]` is the pad token; `tokens[i]` has id `i`.
    tokens: Vec<String>,
    /// Non-pad token ids grouped by first char, longest first.
    starts: BTreeMap<char, Vec<TokenId>>,
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: Vec<String>,
    pad: String,
}

impl Vocabulary {
    /// Builds a vocabulary from the content tokens and the pad string.
    ///
    /// Rejects: empty or duplicate tokens, a pad that occurs inside another
    /// token, and multi-character tokens using a character that has no
    /// single-character token (that closure guarantees every string over
    /// the alphabet has at least one segmentation).
    pub fn new(tokens: Vec<String>, pad: String) -> Result<Self> {
        let mut all = Vec::with_capacity(tokens.len() + 1);
        all.push(pad);
        all.extend(tokens);
        let invalid = |msg: String| Error::InvalidVocabulary(msg);

        for t in &all {
            if t.is_empty() {
                return Err(invalid("empty token".to_string()));
            }
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if all[i] == all[j] {
                    return Err(invalid(alloc::format!("duplicate token {:?}", all[i])));
                }
            }
        }
        let pad = all[0].clone();
        for t in &all[1..] {
            if t.contains(pad.as_str()) {
                return Err(invalid(alloc::format!(
                    "pad {:?} occurs inside token {:?}",
                    pad,
                    t
                )));
            }
        }
        let singles: alloc::collections::BTreeSet<char> = all[1..]
            .iter()
            .filter(|t| t.chars().count() == 1)
            .map(|t| t.chars().next().unwrap())
            .collect();
        for t in &all[1..] {
            if t.chars().count() > 1 {
                for c in t.chars() {
                    if !singles.contains(&c) {
                        return Err(invalid(alloc::format!(
                            "char {:?} of token {:?} has no single-char token",
                            c,
                            t
                        )));
                    }
                }
            }
        }

        let mut starts: BTreeMap<char, Vec<TokenId>> = BTreeMap::new();
        for (id, t) in all.iter().enumerate().skip(1) {
            starts
                .entry(t.chars().next().unwrap())
                .or_default()
                .push(id as TokenId);
        }
        for ids in starts.values_mut() {
            ids.sort_by_key(|&id| (core::cmp::Reverse(all[id as usize].len()), id));
        }
        Ok(Self { tokens: all, starts })
    }

    /// Parses the JSON vocabulary format `{"tokens": [...], "pad": "..."}`.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        Self::new(file.tokens, file.pad)
    }

    pub fn pad_id(&self) -> TokenId {
        PAD_ID
    }

    /// Total number of ids, pad included.
    pub fn n_ids(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_str(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::InvalidTokenId(id))
    }

    /// All characters that occur in any content token, sorted.
    pub fn alphabet(&self) -> Vec<char> {
        let set: alloc::collections::BTreeSet<char> =
            self.tokens[1..].iter().flat_map(|t| t.chars()).collect();
        set.into_iter().collect()
    }

    /// Whether `ch` can start a token (i.e. has a single-char token).
    pub fn decodes_char(&self, ch: char) -> bool {
        self.starts
            .get(&ch)
            .map(|ids| {
                ids.iter()
                    .any(|&id| self.tokens[id as usize].chars().count() == 1)
            })
            .unwrap_or(false)
    }

    fn check_decodable(&self, text: &str) -> Result<()> {
        for (pos, ch) in text.char_indices() {
            if !self.decodes_char(ch) {
                return Err(Error::Undecodable { ch, pos });
            }
        }
        Ok(())
    }

    /// Token ids matching `text[pos..]`, longest first.
    fn matches_at<'s>(&'s self, text: &'s str, pos: usize) -> impl Iterator<Item = TokenId> + 's {
        let rest = &text[pos..];
        let ids: &'s [TokenId] = rest
            .chars()
            .next()
            .and_then(|c| self.starts.get(&c))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        ids.iter()
            .copied()
            .filter(move |&id| rest.starts_with(self.tokens[id as usize].as_str()))
    }

    /// Minimal-length segmentation with the longest-token tie-break.
    pub fn canonical_tokenize(&self, text: &str) -> Result<TokenSeq> {
        self.check_decodable(text)?;
        let n = text.len();
        // minlen[pos] = fewest tokens covering text[pos..].
        let mut minlen = alloc::vec![u32::MAX; n + 1];
        minlen[n] = 0;
        for pos in (0..n).rev() {
            if !text.is_char_boundary(pos) {
                continue;
            }
            let mut best = u32::MAX;
            for id in self.matches_at(text, pos) {
                let next = pos + self.tokens[id as usize].len();
                if minlen[next] != u32::MAX {
                    best = best.min(minlen[next] + 1);
                }
            }
            minlen[pos] = best;
        }
        debug_assert_ne!(minlen[0], u32::MAX);
        let mut ids = Vec::with_capacity(minlen[0] as usize);
        let mut pos = 0;
        while pos < n {
            // matches_at yields longest first; take the first that still
            // achieves the minimum.
            let id = self
                .matches_at(text, pos)
                .find(|&id| {
                    let next = pos + self.tokens[id as usize].len();
                    minlen[next] != u32::MAX && minlen[next] + 1 == minlen[pos]
                })
                .expect("decodable text always has a minimizing token");
            ids.push(id);
            pos += self.tokens[id as usize].len();
        }
        Ok(TokenSeq { ids })
    }

    /// Concatenation of the token strings; inverse of any segmentation.
    pub fn detokenize(&self, seq: &TokenSeq) -> Result<String> {
        let mut out = String::new();
        for &id in &seq.ids {
            out.push_str(self.token_str(id)?);
        }
        Ok(out)
    }

    /// Suffix DP: `counts[pos]` = exact number of segmentations of
    /// `text[pos..]`.
    fn suffix_counts(&self, text: &str) -> Result<Vec<BigUint>> {
        self.check_decodable(text)?;
        let n = text.len();
        let mut counts = alloc::vec![BigUint::zero(); n + 1];
        counts[n] = BigUint::one();
        for pos in (0..n).rev() {
            if !text.is_char_boundary(pos) {
                continue;
            }
            let mut acc = BigUint::zero();
            for id in self.matches_at(text, pos) {
                acc += &counts[pos + self.tokens[id as usize].len()];
            }
            counts[pos] = acc;
        }
        Ok(counts)
    }

    /// Exact number of distinct segmentations of `text`.
    pub fn count_segmentations(&self, text: &str) -> Result<BigUint> {
        Ok(self.suffix_counts(text)?.swap_remove(0))
    }

    /// Precomputes the sampling tables for `text`. Building the sampler is
    /// the expensive part; amortize it when drawing many segmentations.
    pub fn sampler<'a>(&'a self, text: &'a str) -> Result<SegmentationSampler<'a>> {
        let counts = self.suffix_counts(text)?;
        let n = text.len();
        let mut transitions: Vec<Vec<Transition>> = alloc::vec![Vec::new(); n];
        for pos in 0..n {
            if !text.is_char_boundary(pos) || counts[pos].is_zero() {
                continue;
            }
            let total = &counts[pos];
            let mut cum = 0.0f64;
            let mut row = Vec::new();
            for id in self.matches_at(text, pos) {
                let next = pos + self.tokens[id as usize].len();
                if counts[next].is_zero() {
                    continue;
                }
                cum += big_ratio(&counts[next], total);
                row.push(Transition {
                    next: next as u32,
                    id,
                    cum,
                });
            }
            if let Some(last) = row.last_mut() {
                last.cum = 1.0;
            }
            transitions[pos] = row;
        }
        Ok(SegmentationSampler {
            text,
            transitions,
            n_segmentations: counts[0].clone(),
        })
    }

    /// Draws one segmentation uniformly over all valid segmentations.
    pub fn sample_segmentation(&self, text: &str, rng: &mut impl Rng) -> Result<TokenSeq> {
        Ok(self.sampler(text)?.draw(rng))
    }

    /// Monte-Carlo estimate of the expected token count of `text` under
    /// uniform segmentation sampling. The stream is derived from `seed` so
    /// the estimate records its own provenance.
    pub fn mc_expected_count(&self, text: &str, n_samples: usize, seed: u64) -> Result<McEstimate> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".to_string()));
        }
        let sampler = self.sampler(text)?;
        let mut rng = rng::stream(seed, "mc-count", 0);
        let mut total: u64 = 0;
        for _ in 0..n_samples {
            total += sampler.draw_len(&mut rng) as u64;
        }
        Ok(McEstimate {
            mean: total as f64 / n_samples as f64,
            n_samples,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    next: u32,
    id: TokenId,
    cum: f64,
}

/// Per-text sampling tables: exact suffix counts reduced to cumulative
/// transition probabilities (accurate to one part in 2^52).
pub struct SegmentationSampler<'a> {
    text: &'a str,
    transitions: Vec<Vec<Transition>>,
    n_segmentations: BigUint,
}

impl SegmentationSampler<'_> {
    pub fn n_segmentations(&self) -> &BigUint {
        &self.n_segmentations
    }

    fn step(&self, pos: usize, u: f64) -> &Transition {
        let row = &self.transitions[pos];
        let mut i = 0;
        while i + 1 < row.len() && u >= row[i].cum {
            i += 1;
        }
        &row[i]
    }

    /// One uniform draw as a token sequence.
    pub fn draw(&self, rng: &mut impl Rng) -> TokenSeq {
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < self.text.len() {
            let t = self.step(pos, rng.random::<f64>());
            ids.push(t.id);
            pos = t.next as usize;
        }
        TokenSeq { ids }
    }

    /// One uniform draw, returning only its length.
    pub fn draw_len(&self, rng: &mut impl Rng) -> usize {
        let mut len = 0;
        let mut pos = 0;
        while pos < self.text.len() {
            let t = self.step(pos, rng.random::<f64>());
            len += 1;
            pos = t.next as usize;
        }
        len
    }
}

/// `num / den` for big integers with `num <= den`, exact to f64 precision.
fn big_ratio(num: &BigUint, den: &BigUint) -> f64 {
    let bits = den.bits();
    if bits <= 53 {
        num.to_f64().unwrap() / den.to_f64().unwrap()
    } else {
        let shift = bits - 53;
        let n = (num >> shift).to_f64().unwrap();
        let d = (den >> shift).to_f64().unwrap();
        n / d
    }
}

/// A token-id sequence; `count()` is the reported token count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self { ids }
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A Monte-Carlo expected-count estimate and its provenance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub n_samples: usize,
    pub seed: u64,
}
