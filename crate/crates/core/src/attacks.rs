//! Token-inflation attacks against the committed-trace audit: four ways
//! of crafting filler blocks, an optional hash-uniquifying wrapper that
//! defeats the duplicate-hash defense, and the iterative inflate loop
//! that appends blocks until the auditor objects or a budget runs out.
//!
//! The attacker scores candidate blocks with the auditor's own scorer
//! (white-box setting), so any run can be simulated before submission.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::commitment::{build_merkle, leaf_hash, partition_blocks, Block};
use crate::corpus::TraceRecord;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tokenizer::{TokenId, TokenSeq, Vocabulary};
use crate::verifier::{embed, score_block, EmbeddingVector, TraceAuditor, VerifierConfig};

pub const DEFAULT_INSERTED_TOKENS: usize = 4;
pub const DEFAULT_BUDGET: usize = 1000;

/// How filler blocks are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttackBase {
    /// Re-insert a uniformly chosen honest block.
    RandomBlock,
    /// Re-insert honest blocks in cyclic trace order.
    DuplicateAll,
    /// Re-insert the one honest block best aligned with the answer.
    TopBlock,
    /// Fabricate blocks from an answer-weighted unigram sampler.
    Generative,
}

impl AttackBase {
    pub const ALL: [AttackBase; 4] = [
        AttackBase::RandomBlock,
        AttackBase::DuplicateAll,
        AttackBase::TopBlock,
        AttackBase::Generative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackBase::RandomBlock => "random_block",
            AttackBase::DuplicateAll => "duplicate_all",
            AttackBase::TopBlock => "top_block",
            AttackBase::Generative => "generative",
        }
    }

    fn needs_honest_blocks(self) -> bool {
        !matches!(self, AttackBase::Generative)
    }
}

/// One of the eight attack variants: a crafting strategy, optionally
/// wrapped so each appended block carries a fresh leaf hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AttackKind {
    pub base: AttackBase,
    pub hash_unique: bool,
}

impl AttackKind {
    pub const fn new(base: AttackBase, hash_unique: bool) -> Self {
        Self { base, hash_unique }
    }

    pub fn all_variants() -> impl Iterator<Item = AttackKind> {
        AttackBase::ALL
            .into_iter()
            .flat_map(|b| [AttackKind::new(b, false), AttackKind::new(b, true)])
    }
}

impl core::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.hash_unique {
            write!(f, "{}_hash_unique", self.base.name())
        } else {
            f.write_str(self.base.name())
        }
    }
}

impl core::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base_str, hash_unique) = match s.strip_suffix("_hash_unique") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let base = AttackBase::ALL
            .into_iter()
            .find(|b| b.name() == base_str)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attack kind: {s}")))?;
        Ok(AttackKind::new(base, hash_unique))
    }
}

/// Outcome of one inflate run. `added_blocks` counts only appends the
/// auditor accepted; `root_hex` commits the final accepted trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AttackReport {
    pub record_id: String,
    pub original_blocks: usize,
    pub added_blocks: usize,
    pub inflation_percent: f64,
    pub detected: bool,
    pub detected_at_block: Option<usize>,
    pub budget: usize,
    pub root_hex: String,
}

/// Stateful block source for one attack run: the cycle position advances
/// across calls and the top-scoring block is found once, then reused.
#[derive(Debug)]
pub struct BlockCrafter {
    base: AttackBase,
    honest: Vec<Block>,
    cycle_pos: usize,
    top_idx: usize,
    unigram_cum: Vec<f64>,
    block_size: usize,
}

impl BlockCrafter {
    pub fn new(
        base: AttackBase,
        honest_blocks: &[Block],
        answer: &TokenSeq,
        vocab: &Vocabulary,
        block_size: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        if base.needs_honest_blocks() && honest_blocks.is_empty() {
            return Err(Error::EmptyHonestTrace);
        }
        let answer_emb = embed(&answer.ids, embed_dim);
        let top_idx = match base {
            AttackBase::TopBlock => top_block_index(honest_blocks, &answer_emb, embed_dim),
            _ => 0,
        };
        let unigram_cum = match base {
            AttackBase::Generative => answer_unigram_cum(answer, vocab),
            _ => Vec::new(),
        };
        Ok(Self {
            base,
            honest: honest_blocks.to_vec(),
            cycle_pos: 0,
            top_idx,
            unigram_cum,
            block_size,
        })
    }

    /// Produces the next filler block.
    pub fn craft_block(&mut self, rng: &mut impl Rng) -> Block {
        match self.base {
            AttackBase::RandomBlock => {
                self.honest[rng.random_range(0..self.honest.len())].clone()
            }
            AttackBase::DuplicateAll => {
                let b = self.honest[self.cycle_pos % self.honest.len()].clone();
                self.cycle_pos += 1;
                b
            }
            AttackBase::TopBlock => self.honest[self.top_idx].clone(),
            AttackBase::Generative => {
                let ids = (0..self.block_size)
                    .map(|_| sample_cum(&self.unigram_cum, rng))
                    .collect();
                Block::new(ids)
            }
        }
    }
}

fn top_block_index(blocks: &[Block], answer_emb: &EmbeddingVector, embed_dim: usize) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, b) in blocks.iter().enumerate() {
        let probes: Vec<usize> = (0..b.ids.len()).collect();
        let s = score_block(b, answer_emb, &probes, embed_dim);
        let total = s.token_to_block + s.block_to_answer;
        if total > best_score {
            best_score = total;
            best = i;
        }
    }
    best
}

/// Cumulative unigram distribution over non-pad ids: 0.8 of the mass
/// follows answer token frequencies, 0.2 is uniform. An empty answer
/// degenerates to the uniform part alone.
fn answer_unigram_cum(answer: &TokenSeq, vocab: &Vocabulary) -> Vec<f64> {
    let n = vocab.n_ids();
    let mut weights = alloc::vec![0.0f64; n];
    let uniform = 1.0 / (n - 1) as f64;
    let (w_ans, w_uni) = if answer.ids.is_empty() {
        (0.0, 1.0)
    } else {
        (0.8, 0.2)
    };
    for id in 1..n {
        weights[id] = w_uni * uniform;
    }
    if !answer.ids.is_empty() {
        let per_token = w_ans / answer.ids.len() as f64;
        for &id in &answer.ids {
            weights[id as usize] += per_token;
        }
    }
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    if let Some(last) = cum.last_mut() {
        *last = 1.0;
    }
    cum
}

fn sample_cum(cum: &[f64], rng: &mut impl Rng) -> TokenId {
    let u: f64 = rng.random();
    cum.partition_point(|&c| c <= u) as TokenId
}

/// Perturbs a block so its leaf hash changes while its embedding stays
/// close: `k` random valid ids each enter at the front or back (coin flip
/// per insertion) and the opposite end is truncated, keeping the length.
/// Repeats from the perturbed block in the unlikely case the hash lands
/// back on the original.
pub fn make_hash_unique(block: &Block, vocab: &Vocabulary, k: usize, rng: &mut impl Rng) -> Result<Block> {
    if !(1..=8).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "inserted token count {k} outside [1, 8]"
        )));
    }
    let original_hash = leaf_hash(block);
    let mut out = block.clone();
    loop {
        for _ in 0..k {
            let id = rng.random_range(1..vocab.n_ids() as TokenId);
            if rng.random::<bool>() {
                out.ids.insert(0, id);
                out.ids.pop();
            } else {
                out.ids.remove(0);
                out.ids.push(id);
            }
        }
        if leaf_hash(&out) != original_hash {
            return Ok(out);
        }
    }
}

/// Runs one inflation attack to detection or budget exhaustion.
///
/// The honest trace is committed first; each iteration crafts one block,
/// appends it, and re-audits the whole trace with a fresh probe draw. A
/// rejected append ends the run and is dropped from the committed trace;
/// there is no retry. The reported Merkle root covers the accepted trace.
///
/// Hash-unique variants know the defense checks leaf hashes across the
/// whole trace, so they keep perturbing a crafted block until its hash is
/// fresh rather than merely different from the source block's.
#[allow(clippy::too_many_arguments)]
pub fn inflate_iterative(
    record: &TraceRecord,
    vocab: &Vocabulary,
    kind: AttackKind,
    cfg: &VerifierConfig,
    block_size: usize,
    budget: usize,
    inserted_tokens: usize,
    defense: bool,
    rng: &mut Stream,
) -> Result<AttackReport> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".to_string()));
    }
    let reasoning = vocab.canonical_tokenize(&record.reasoning)?;
    let answer = vocab.canonical_tokenize(&record.answer)?;
    let honest = partition_blocks(&reasoning, block_size, vocab.pad_id());
    let original_blocks = honest.len();

    let mut crafter = BlockCrafter::new(kind.base, &honest, &answer, vocab, block_size, cfg.embed_dim)?;
    let mut auditor = TraceAuditor::new(cfg.clone(), &answer);
    let mut committed = honest;
    for b in &committed {
        auditor.push_block(b);
    }
    let mut seen: BTreeSet<_> = committed.iter().map(leaf_hash).collect();

    let mut detected = false;
    let mut detected_at_block = None;
    let mut added_blocks = 0;
    for i in 1..=budget {
        let mut block = crafter.craft_block(rng);
        if kind.hash_unique {
            block = make_hash_unique(&block, vocab, inserted_tokens, rng)?;
            while seen.contains(&leaf_hash(&block)) {
                block = make_hash_unique(&block, vocab, inserted_tokens, rng)?;
            }
        }
        seen.insert(leaf_hash(&block));
        auditor.push_block(&block);
        committed.push(block);
        if auditor.audit_outcome(rng, defense) != crate::verifier::FailedCheck::None {
            detected = true;
            detected_at_block = Some(i);
            committed.pop();
            break;
        }
        added_blocks = i;
    }

    let root_hex = build_merkle(&committed)?.root_hex();
    Ok(AttackReport {
        record_id: record.id.clone(),
        original_blocks,
        added_blocks,
        inflation_percent: 100.0 * added_blocks as f64 / original_blocks as f64,
        detected,
        detected_at_block,
        budget,
        root_hex,
    })
}
