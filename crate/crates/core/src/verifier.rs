//! The semantic-validity layer of the commitment audit: deterministic
//! feature-hashed embeddings, the two matching heads (token-to-block and
//! block-to-answer), and the dual verifier.
//!
//! The learned aggregate verifier is replaced by a calibration z-score on
//! the mean block-to-answer score of honest traces; the rule verifier
//! requires every probed block to clear a threshold on both heads (an
//! optional quota relaxes that to a fraction of probed blocks). Within a
//! probed block every token position is probed, so block scores are pure
//! functions of the block and can be cached across repeated audits.
//!
//! Scores are clamped to `[0, 1]`: negative cosines count as zero.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::commitment::{leaf_hash, select_probes, Block, Hash};
use crate::error::Result;
use crate::rng::mix64;
use crate::tokenizer::{TokenId, TokenSeq};

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

pub const DEFAULT_EMBED_DIM: usize = 64;

/// A unit-norm feature-hashed bag-of-tokens embedding. The zero vector
/// only arises for empty input (a full sign cancellation falls back to a
/// basis vector so the unit-norm invariant holds).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

fn bucket_sign(id: TokenId, dim: usize) -> (usize, f64) {
    let h = mix64(id as u64 ^ 0xe0b6_5de7_11ad_1e5e);
    let bucket = (h % dim as u64) as usize;
    let sign = if (h >> 32) & 1 == 1 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Embeds a token-id bag: each id hashes to `(bucket, sign)`, counts
/// accumulate, and the result is L2-normalized. Pure and order-free.
pub fn embed(ids: &[TokenId], dim: usize) -> EmbeddingVector {
    let mut values = alloc::vec![0.0f64; dim];
    for &id in ids {
        let (b, s) = bucket_sign(id, dim);
        values[b] += s;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    } else if let Some(&first) = ids.first() {
        let (b, s) = bucket_sign(first, dim);
        values[b] = s;
    }
    EmbeddingVector { values }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum()
}

/// Per-block scores of the two matching heads, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BlockScores {
    pub token_to_block: f64,
    pub block_to_answer: f64,
}

/// Scores one block against the answer. `probes` are token positions
/// within the block; with no probed positions the token-to-block head
/// passes vacuously (score 1).
pub fn score_block(
    block: &Block,
    answer_emb: &EmbeddingVector,
    probes: &[usize],
    dim: usize,
) -> BlockScores {
    let block_emb = embed(&block.ids, dim);
    let token_to_block = if probes.is_empty() {
        1.0
    } else {
        probes
            .iter()
            .map(|&p| {
                let (b, s) = bucket_sign(block.ids[p], dim);
                (s * block_emb.values[b]).max(0.0)
            })
            .sum::<f64>()
            / probes.len() as f64
    };
    BlockScores {
        token_to_block,
        block_to_answer: cosine(&block_emb, answer_emb).max(0.0),
    }
}

/// Honest-trace score statistics backing the aggregate verifier.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CalibrationStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Verifier settings. `threshold` applies to both heads on every probed
/// block; `rule_quota`, when set, relaxes the rule check to that fraction
/// of probed blocks (there is no reference default, so it ships unset).
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierConfig {
    pub probing_ratio: f64,
    pub threshold: f64,
    pub aggregate_zmax: f64,
    pub calibration: Option<CalibrationStats>,
    pub rule_quota: Option<f64>,
    pub embed_dim: usize,
}

impl VerifierConfig {
    /// The reference settings: probing ratio 0.75, threshold 0.5. The
    /// threshold suits the reference embedding model; the toy embedding
    /// scores honest traces much lower, so experiment configs calibrate it.
    pub fn reference() -> Self {
        Self {
            probing_ratio: 0.75,
            threshold: 0.5,
            aggregate_zmax: 3.0,
            calibration: None,
            rule_quota: None,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailedCheck {
    None,
    Rule,
    Aggregate,
    DuplicateHash,
}

/// The audit outcome. `block_scores` maps probed block indices to their
/// head scores; `accepted` holds exactly when no enabled check failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub block_scores: BTreeMap<usize, BlockScores>,
    pub failed_check: FailedCheck,
}

impl Verdict {
    fn new(failed_check: FailedCheck, block_scores: BTreeMap<usize, BlockScores>) -> Self {
        Self {
            accepted: failed_check == FailedCheck::None,
            block_scores,
            failed_check,
        }
    }
}

struct CachedBlock {
    scores: BlockScores,
    hash: Hash,
}

/// Audits a growing committed trace. Block scores and leaf hashes are
/// cached at push time (valid because every token position is probed, so
/// scores carry no per-audit randomness); each `audit` call draws a fresh
/// probe set from the caller's stream, like an auditor probing each
/// submission independently.
pub struct TraceAuditor {
    cfg: VerifierConfig,
    answer_emb: EmbeddingVector,
    blocks: Vec<CachedBlock>,
    hash_counts: BTreeMap<Hash, u32>,
    has_duplicate: bool,
}

impl TraceAuditor {
    pub fn new(cfg: VerifierConfig, answer: &TokenSeq) -> Self {
        let answer_emb = embed(&answer.ids, cfg.embed_dim);
        Self {
            cfg,
            answer_emb,
            blocks: Vec::new(),
            hash_counts: BTreeMap::new(),
            has_duplicate: false,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn answer_embedding(&self) -> &EmbeddingVector {
        &self.answer_emb
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.cfg
    }

    /// Scores and commits one more block.
    pub fn push_block(&mut self, block: &Block) {
        let probes: Vec<usize> = (0..block.ids.len()).collect();
        let scores = score_block(block, &self.answer_emb, &probes, self.cfg.embed_dim);
        let hash = leaf_hash(block);
        let count = self.hash_counts.entry(hash).or_insert(0);
        *count += 1;
        if *count > 1 {
            self.has_duplicate = true;
        }
        self.blocks.push(CachedBlock { scores, hash });
    }

    /// Cached scores of block `i`.
    pub fn block_scores(&self, i: usize) -> BlockScores {
        self.blocks[i].scores
    }

    pub fn block_hash(&self, i: usize) -> Hash {
        self.blocks[i].hash
    }

    fn decide(&self, probes: &BTreeSet<usize>) -> FailedCheck {
        if probes.is_empty() {
            return FailedCheck::None;
        }
        let mut passing = 0usize;
        let mut sum_b2a = 0.0f64;
        for &i in probes {
            let s = self.blocks[i].scores;
            if s.token_to_block >= self.cfg.threshold && s.block_to_answer >= self.cfg.threshold {
                passing += 1;
            }
            sum_b2a += s.block_to_answer;
        }
        let needed = match self.cfg.rule_quota {
            Some(q) => ((q * probes.len() as f64) - 1e-9).ceil().max(0.0) as usize,
            None => probes.len(),
        };
        if passing < needed {
            return FailedCheck::Rule;
        }
        if let Some(cal) = &self.cfg.calibration {
            let z = (sum_b2a / probes.len() as f64 - cal.mean) / cal.std.max(1e-12);
            if z.abs() > self.cfg.aggregate_zmax {
                return FailedCheck::Aggregate;
            }
        }
        FailedCheck::None
    }

    /// Runs the audit pipeline on the current trace: optional
    /// duplicate-hash defense, then probe selection, the per-block rule
    /// check, and the calibrated aggregate check.
    pub fn audit(&self, rng: &mut impl Rng, defense_duplicate_hash: bool) -> Verdict {
        if defense_duplicate_hash && self.has_duplicate {
            return Verdict::new(FailedCheck::DuplicateHash, BTreeMap::new());
        }
        let probes: BTreeSet<usize> = select_probes(self.blocks.len(), self.cfg.probing_ratio, rng);
        let outcome = self.decide(&probes);
        let scores = probes.iter().map(|&i| (i, self.blocks[i].scores)).collect();
        Verdict::new(outcome, scores)
    }

    /// Same decision as [`audit`](Self::audit) from the same stream state,
    /// without materializing the per-block score map. Suited to tight
    /// attack loops that only need accept/reject.
    pub fn audit_outcome(&self, rng: &mut impl Rng, defense_duplicate_hash: bool) -> FailedCheck {
        if defense_duplicate_hash && self.has_duplicate {
            return FailedCheck::DuplicateHash;
        }
        let probes = select_probes(self.blocks.len(), self.cfg.probing_ratio, rng);
        self.decide(&probes)
    }
}

/// One-shot audit of a complete trace; identical to pushing every block
/// into a fresh [`TraceAuditor`] and auditing once. The attacker and the
/// auditor share this scorer, so a provider can always pre-run the audit.
pub fn audit_trace(
    blocks: &[Block],
    answer: &TokenSeq,
    cfg: &VerifierConfig,
    rng: &mut impl Rng,
    defense_duplicate_hash: bool,
) -> Result<Verdict> {
    let mut auditor = TraceAuditor::new(cfg.clone(), answer);
    for b in blocks {
        auditor.push_block(b);
    }
    Ok(auditor.audit(rng, defense_duplicate_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn block_of(ids: &[TokenId]) -> Block {
        Block::new(ids.to_vec())
    }

    #[test]
    fn self_similarity_is_one() {
        for ids in [alloc::vec![1u32], alloc::vec![1, 2, 3, 9, 9]] {
            let e = embed(&ids, 64);
            assert!((cosine(&e, &e) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn embedding_ignores_order_and_copies() {
        let a = embed(&[1, 2, 3, 4], 64);
        let b = embed(&[4, 3, 2, 1], 64);
        assert_eq!(a, b);
        let c1 = block_of(&[5, 6, 7]);
        let c2 = c1.clone();
        assert_eq!(embed(&c1.ids, 64), embed(&c2.ids, 64));
    }

    #[test]
    fn empty_input_embeds_to_zero() {
        let e = embed(&[], 64);
        assert!(e.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cancellation_falls_back_to_unit_norm() {
        // find two ids sharing a bucket with opposite signs
        let dim = 64;
        let mut pair = None;
        'outer: for a in 1u32..200 {
            for b in a + 1..200 {
                let (ba, sa) = bucket_sign(a, dim);
                let (bb, sb) = bucket_sign(b, dim);
                if ba == bb && sa == -sb {
                    pair = Some((a, b));
                    break 'outer;
                }
            }
        }
        let (a, b) = pair.expect("cancelling pair exists");
        let e = embed(&[a, b], dim);
        let norm: f64 = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_blocks_score_identically() {
        let answer = TokenSeq::new(alloc::vec![2, 5, 9]);
        let ans_emb = embed(&answer.ids, 64);
        let b = block_of(&(0..256).map(|i| (i % 50 + 1) as TokenId).collect::<Vec<_>>());
        let probes: Vec<usize> = (0..256).collect();
        let s1 = score_block(&b, &ans_emb, &probes, 64);
        let s2 = score_block(&b.clone(), &ans_emb, &probes, 64);
        assert_eq!(s1, s2);
    }

    #[test]
    fn uniform_block_has_perfect_token_score() {
        let ans_emb = embed(&[7], 64);
        let b = block_of(&[9; 256]);
        let probes: Vec<usize> = (0..256).collect();
        let s = score_block(&b, &ans_emb, &probes, 64);
        assert!((s.token_to_block - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_probe_set_passes_vacuously() {
        let ans_emb = embed(&[7], 64);
        let b = block_of(&[1, 2, 3]);
        let s = score_block(&b, &ans_emb, &[], 64);
        assert_eq!(s.token_to_block, 1.0);
    }

    #[test]
    fn answer_made_block_scores_high() {
        let answer = TokenSeq::new((1..=8).collect());
        let ans_emb = embed(&answer.ids, 64);
        let b = block_of(&(0..256).map(|i| (i % 8 + 1) as TokenId).collect::<Vec<_>>());
        let probes: Vec<usize> = (0..256).collect();
        let s = score_block(&b, &ans_emb, &probes, 64);
        assert!(s.block_to_answer >= 0.9, "b2a = {}", s.block_to_answer);
    }

    fn test_cfg() -> VerifierConfig {
        VerifierConfig {
            probing_ratio: 0.75,
            threshold: 0.0,
            aggregate_zmax: 4.0,
            calibration: Some(CalibrationStats {
                mean: 0.3,
                std: 0.2,
                n: 100,
            }),
            rule_quota: None,
            embed_dim: 64,
        }
    }

    fn random_blocks(n: usize, seed: u64) -> Vec<Block> {
        let mut stream = rng::stream(seed, "blocks", 0);
        (0..n)
            .map(|_| {
                Block::new(
                    (0..256)
                        .map(|_| stream.random_range(1..60u32))
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    #[test]
    fn duplicate_defense_fires_only_when_enabled() {
        let answer = TokenSeq::new(alloc::vec![1, 2, 3]);
        let mut blocks = random_blocks(4, 1);
        blocks.push(blocks[1].clone());
        let cfg = test_cfg();
        let v_on = audit_trace(&blocks, &answer, &cfg, &mut rng::stream(2, "a", 0), true).unwrap();
        assert_eq!(v_on.failed_check, FailedCheck::DuplicateHash);
        assert!(!v_on.accepted);
        let v_off =
            audit_trace(&blocks, &answer, &cfg, &mut rng::stream(2, "a", 0), false).unwrap();
        assert_ne!(v_off.failed_check, FailedCheck::DuplicateHash);
    }

    #[test]
    fn audit_matches_incremental_auditor() {
        let answer = TokenSeq::new(alloc::vec![3, 4, 5, 6]);
        let blocks = random_blocks(6, 7);
        let cfg = test_cfg();
        let one_shot =
            audit_trace(&blocks, &answer, &cfg, &mut rng::stream(9, "x", 3), false).unwrap();
        let mut auditor = TraceAuditor::new(cfg, &answer);
        for b in &blocks {
            auditor.push_block(b);
        }
        let incremental = auditor.audit(&mut rng::stream(9, "x", 3), false);
        assert_eq!(one_shot, incremental);
    }

    #[test]
    fn identical_seeds_give_identical_verdicts() {
        let answer = TokenSeq::new(alloc::vec![3, 4, 5]);
        let blocks = random_blocks(5, 3);
        let cfg = test_cfg();
        let a = audit_trace(&blocks, &answer, &cfg, &mut rng::stream(4, "s", 0), true).unwrap();
        let b = audit_trace(&blocks, &answer, &cfg, &mut rng::stream(4, "s", 0), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outcome_shortcut_matches_full_audit() {
        let answer = TokenSeq::new(alloc::vec![1, 4]);
        let blocks = random_blocks(7, 21);
        let mut cfg = test_cfg();
        cfg.threshold = 0.15;
        let mut auditor = TraceAuditor::new(cfg, &answer);
        for b in &blocks {
            auditor.push_block(b);
        }
        for i in 0..20 {
            let full = auditor.audit(&mut rng::stream(i, "o", 0), true);
            let fast = auditor.audit_outcome(&mut rng::stream(i, "o", 0), true);
            assert_eq!(full.failed_check, fast);
        }
    }

    #[test]
    fn raising_threshold_never_rescues_a_rejection() {
        let answer = TokenSeq::new(alloc::vec![3, 4, 5]);
        let blocks = random_blocks(5, 11);
        for t in [0.0, 0.05, 0.2, 0.6, 0.9] {
            let mut lo = test_cfg();
            lo.threshold = t;
            let mut hi = test_cfg();
            hi.threshold = t + 0.1;
            let v_lo =
                audit_trace(&blocks, &answer, &lo, &mut rng::stream(5, "m", 0), false).unwrap();
            let v_hi =
                audit_trace(&blocks, &answer, &hi, &mut rng::stream(5, "m", 0), false).unwrap();
            if !v_lo.accepted {
                assert!(!v_hi.accepted);
            }
        }
    }
}
