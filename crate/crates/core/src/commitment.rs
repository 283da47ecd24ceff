//! Token-block commitments: fixed-size blocks, a SHA-256 Merkle tree over
//! them, inclusion proofs, and probe selection.
//!
//! Leaf encoding is 4-byte little-endian per token id with domain-separated
//! leaf/node prefixes (0x00/0x01); an odd node is promoted by duplicating
//! the last node. Roots render as lowercase hex.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenSeq};

pub const DEFAULT_BLOCK_SIZE: usize = 256;

pub type Hash = [u8; 32];

/// A fixed-length run of token ids, the unit of commitment and probing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub ids: Vec<TokenId>,
}

impl Block {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self { ids }
    }
}

fn sha256(parts: &[&[u8]]) -> Hash {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let d = h.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&d);
    out
}

/// Hash of a block's leaf encoding.
pub fn leaf_hash(block: &Block) -> Hash {
    let mut bytes = Vec::with_capacity(1 + 4 * block.ids.len());
    bytes.push(0x00);
    for &id in &block.ids {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    sha256(&[&bytes])
}

fn node_hash(left: &Hash, right: &Hash) -> Hash {
    sha256(&[&[0x01], left, right])
}

/// Splits a sequence into `ceil(len / block_size)` blocks, padding the last
/// one with `pad_id`. An empty sequence yields no blocks.
pub fn partition_blocks(seq: &TokenSeq, block_size: usize, pad_id: TokenId) -> Vec<Block> {
    assert!(block_size >= 1, "block_size must be >= 1");
    seq.ids
        .chunks(block_size)
        .map(|chunk| {
            let mut ids = chunk.to_vec();
            ids.resize(block_size, pad_id);
            Block { ids }
        })
        .collect()
}

/// Strips trailing pads from the last block and concatenates.
pub fn join_blocks(blocks: &[Block], pad_id: TokenId) -> TokenSeq {
    let mut ids: Vec<TokenId> = blocks.iter().flat_map(|b| b.ids.iter().copied()).collect();
    while ids.last() == Some(&pad_id) {
        ids.pop();
    }
    TokenSeq::new(ids)
}

/// A Merkle tree over block leaf hashes. `levels[0]` holds the leaves.
#[derive(Debug, Clone)]
pub struct MerkleTree {
    levels: Vec<Vec<Hash>>,
}

/// Siblings bottom-up; the flag tells on which side the sibling sits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionProof {
    pub index: usize,
    pub siblings: Vec<(Side, Hash)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl MerkleTree {
    pub fn root(&self) -> Hash {
        *self.levels.last().expect("non-empty tree").first().expect("root")
    }

    pub fn root_hex(&self) -> String {
        hex::encode(self.root())
    }

    pub fn n_leaves(&self) -> usize {
        self.levels[0].len()
    }
}

/// Builds the tree; rejects an empty block list.
pub fn build_merkle(blocks: &[Block]) -> Result<MerkleTree> {
    if blocks.is_empty() {
        return Err(Error::EmptyBlocks);
    }
    let mut levels = alloc::vec![blocks.iter().map(leaf_hash).collect::<Vec<_>>()];
    while levels.last().unwrap().len() > 1 {
        let prev = levels.last().unwrap();
        let next: Vec<Hash> = prev
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node_hash(l, r),
                [l] => node_hash(l, l),
                _ => unreachable!(),
            })
            .collect();
        levels.push(next);
    }
    Ok(MerkleTree { levels })
}

/// Produces the inclusion proof for the leaf at `index`.
pub fn prove(tree: &MerkleTree, index: usize) -> Result<InclusionProof> {
    let n = tree.n_leaves();
    if index >= n {
        return Err(Error::IndexOutOfRange { index, len: n });
    }
    let mut siblings = Vec::new();
    let mut pos = index;
    for level in &tree.levels[..tree.levels.len() - 1] {
        let (side, sib) = if pos % 2 == 0 {
            // right sibling, or self-duplicate at an odd edge
            (Side::Right, *level.get(pos + 1).unwrap_or(&level[pos]))
        } else {
            (Side::Left, level[pos - 1])
        };
        siblings.push((side, sib));
        pos /= 2;
    }
    Ok(InclusionProof { index, siblings })
}

/// Checks `block` against `root` at the claimed `index`. The proof must
/// have been issued for the same position: a proof replayed at a different
/// index fails either the side check or the root comparison.
pub fn verify(root: &Hash, block: &Block, index: usize, proof: &InclusionProof) -> bool {
    if proof.index != index {
        return false;
    }
    let mut acc = leaf_hash(block);
    let mut pos = index;
    for (side, sib) in &proof.siblings {
        let expected = if pos % 2 == 0 { Side::Right } else { Side::Left };
        if *side != expected {
            return false;
        }
        acc = match side {
            Side::Right => node_hash(&acc, sib),
            Side::Left => node_hash(sib, &acc),
        };
        pos /= 2;
    }
    acc == *root
}

/// Convenience wrapper: the proof for `index` plus whether `block` verifies
/// there.
pub fn prove_and_verify(
    tree: &MerkleTree,
    block: &Block,
    index: usize,
) -> Result<(InclusionProof, bool)> {
    let proof = prove(tree, index)?;
    let valid = verify(&tree.root(), block, index, &proof);
    Ok((proof, valid))
}

/// Draws `ceil(ratio * n_blocks)` distinct block indices uniformly without
/// replacement (partial Fisher-Yates), returned sorted.
pub fn select_probes(n_blocks: usize, probing_ratio: f64, rng: &mut impl Rng) -> BTreeSet<usize> {
    assert!(
        probing_ratio > 0.0 && probing_ratio <= 1.0,
        "probing ratio must be in (0, 1]"
    );
    if n_blocks == 0 {
        return BTreeSet::new();
    }
    let k = ((probing_ratio * n_blocks as f64) - 1e-9).ceil().max(1.0) as usize;
    let k = k.min(n_blocks);
    let mut indices: Vec<usize> = (0..n_blocks).collect();
    for i in 0..k {
        let j = rng.random_range(i..n_blocks);
        indices.swap(i, j);
    }
    indices[..k].iter().copied().collect()
}
