//! Oracle tests for the tokenizer: an independent brute-force enumerator
//! of all segmentations, checked against the DP count, the canonical
//! minimum, and the uniform sampler.

use gauntlet_core::rng;
use gauntlet_core::tokenizer::{TokenId, Vocabulary};
use num_bigint::BigUint;
use proptest::prelude::*;

fn vocab(tokens: &[&str]) -> Vocabulary {
    Vocabulary::new(tokens.iter().map(|s| s.to_string()).collect(), "_".into()).unwrap()
}

/// Exhaustively enumerates every valid segmentation by trying every token
/// at every position. Exponential; only for small instances.
fn enumerate_segmentations(v: &Vocabulary, text: &str) -> Vec<Vec<TokenId>> {
    fn go(v: &Vocabulary, text: &str, prefix: &mut Vec<TokenId>, out: &mut Vec<Vec<TokenId>>) {
        if text.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for id in 1..v.n_ids() as TokenId {
            let tok = v.token_str(id).unwrap();
            if let Some(rest) = text.strip_prefix(tok) {
                prefix.push(id);
                go(v, rest, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(v, text, &mut Vec::new(), &mut out);
    out
}

/// All strings of length <= 12 over a 6-token vocabulary: the enumerated
/// count matches the DP count and the enumerated minimum matches the
/// canonical count.
#[test]
fn exhaustive_small_family_matches_dp_and_canonical() {
    let v = vocab(&["a", "b", "ab", "aa", "ba", "bab"]);
    let mut checked = 0u64;
    for len in 0..=12usize {
        for bits in 0..(1u32 << len) {
            let text: String = (0..len)
                .map(|i| if bits >> i & 1 == 0 { 'a' } else { 'b' })
                .collect();
            let segs = enumerate_segmentations(&v, &text);
            assert_eq!(
                v.count_segmentations(&text).unwrap(),
                BigUint::from(segs.len()),
                "count mismatch on {text:?}"
            );
            let min = segs.iter().map(Vec::len).min().unwrap();
            assert_eq!(
                v.canonical_tokenize(&text).unwrap().count(),
                min,
                "canonical not minimal on {text:?}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 8191);
}

/// 3000 draws over the three segmentations of "aaa" pass a chi-square
/// goodness-of-fit test against the uniform law (p > 0.001, so the
/// statistic must stay below the 13.8155 critical value at 2 dof).
#[test]
fn uniform_sampling_chi_square() {
    let v = vocab(&["a", "b", "ab", "aa"]);
    let segs = enumerate_segmentations(&v, "aaa");
    assert_eq!(segs.len(), 3);
    let mut counts = [0u64; 3];
    let mut stream = rng::stream(20_26, "chi-square", 0);
    for _ in 0..3000 {
        let s = v.sample_segmentation("aaa", &mut stream).unwrap();
        let k = segs.iter().position(|g| *g == s.ids).expect("valid draw");
        counts[k] += 1;
    }
    let expected = 1000.0;
    let chi2: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 13.8155, "chi2 = {chi2}, counts = {counts:?}");
}

fn arb_vocab() -> impl Strategy<Value = Vocabulary> {
    let pool = ["ab", "ba", "aa", "bb", "abc", "bca", "cab", "aab"];
    proptest::collection::vec(proptest::bool::ANY, pool.len()).prop_map(move |mask| {
        let mut tokens: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        for (i, keep) in mask.iter().enumerate() {
            if *keep {
                tokens.push(pool[i].to_string());
            }
        }
        Vocabulary::new(tokens, "_".into()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dp_count_matches_enumeration(v in arb_vocab(), text in "[abc]{0,10}") {
        let segs = enumerate_segmentations(&v, &text);
        prop_assert_eq!(v.count_segmentations(&text).unwrap(), BigUint::from(segs.len()));
    }

    #[test]
    fn canonical_is_minimal_and_round_trips(v in arb_vocab(), text in "[abc]{0,10}") {
        let segs = enumerate_segmentations(&v, &text);
        let min = segs.iter().map(Vec::len).min().unwrap();
        let canon = v.canonical_tokenize(&text).unwrap();
        prop_assert_eq!(canon.count(), min);
        prop_assert_eq!(v.detokenize(&canon).unwrap(), text);
    }

    #[test]
    fn samples_decode_to_input(v in arb_vocab(), text in "[abc]{1,10}", seed in 0u64..1000) {
        let mut stream = rng::stream(seed, "prop-sample", 0);
        let s = v.sample_segmentation(&text, &mut stream).unwrap();
        prop_assert_eq!(v.detokenize(&s).unwrap(), text);
    }

    /// With more than one segmentation the canonical count sits strictly
    /// below the exact expected count: the single-char segmentation is
    /// always present and longer than any segmentation using a merge.
    #[test]
    fn canonical_below_exact_expectation(v in arb_vocab(), text in "[abc]{1,10}") {
        let segs = enumerate_segmentations(&v, &text);
        let mean = segs.iter().map(|s| s.len() as f64).sum::<f64>() / segs.len() as f64;
        let canon = v.canonical_tokenize(&text).unwrap().count() as f64;
        if segs.len() > 1 {
            prop_assert!(canon < mean);
        } else {
            prop_assert_eq!(canon, mean);
        }
    }
}
