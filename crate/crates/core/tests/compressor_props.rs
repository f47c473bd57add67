use efpc_core::compressor::{compress, select, target_keep_count, CompressionRequest, Target};
use efpc_core::encoder::{ModelConfig, Vocab};
use efpc_core::text::split_words;
use efpc_core::Model64;
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,3}", 1..60)
}

fn is_subsequence(sub: &[String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|w| it.any(|o| o == w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn subsequence_with_exact_count(ws in words(), scores in prop::collection::vec(0.0f64..1.0, 60), tau in 0.01f64..=1.0) {
        let seq = split_words(&ws.join(" "));
        let n = seq.len();
        let r = select(seq.clone(), scores[..n].to_vec(), Target::KeepRatio(tau));
        let expected = ((tau * n as f64 + 0.5 + 1e-9).floor() as usize).clamp(1, n);
        prop_assert_eq!(r.kept_indices.len(), expected);
        prop_assert!(r.kept_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(is_subsequence(&r.kept_words, &seq.words));
    }

    #[test]
    fn nesting_and_identity(ws in words(), scores in prop::collection::vec(0.0f64..1.0, 60)) {
        let seq = split_words(&ws.join(" "));
        let n = seq.len();
        let mut prev: Vec<usize> = Vec::new();
        for step in 1..=10 {
            let r = select(seq.clone(), scores[..n].to_vec(), Target::KeepRatio(step as f64 / 10.0));
            prop_assert!(prev.iter().all(|i| r.kept_indices.contains(i)));
            prev = r.kept_indices;
        }
        prop_assert_eq!(prev, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn budget_matches_ratio(ws in words(), scores in prop::collection::vec(0.0f64..1.0, 60), b in 1usize..80) {
        let seq = split_words(&ws.join(" "));
        let n = seq.len();
        let by_budget = select(seq.clone(), scores[..n].to_vec(), Target::Budget(b));
        let by_ratio = select(seq, scores[..n].to_vec(), Target::KeepRatio((b as f64 / n as f64).min(1.0)));
        prop_assert_eq!(by_budget.kept_indices.len(), b.min(n));
        prop_assert_eq!(by_budget, by_ratio);
    }
}

#[test]
fn keep_count_table() {
    for (n, tau, k) in [(1, 0.01, 1), (3, 0.5, 2), (10, 0.25, 3), (10, 0.24, 2), (100, 0.1, 10), (8, 0.0625, 1)] {
        assert_eq!(target_keep_count(n, tau), k, "n={n} tau={tau}");
    }
}

#[test]
fn model_backed_compression_contracts() {
    let model = Model64::new(
        ModelConfig { embed_dim: 8, num_heads: 2, ffn_dim: 16, max_seq_len: 12, seed: 5, ..Default::default() },
        Vocab::from_words(["a", "b", "c", "d", "e", "why"]),
    )
    .unwrap();
    let text = "a b c d e a b c d e e d c b a a c e";
    let full = compress(&model, &CompressionRequest::new("why", text, Target::KeepRatio(1.0))).unwrap();
    assert_eq!(full.kept_text(), text);
    assert_eq!(full.probabilities.len(), 18);
    let mut prev = full.kept_indices.clone();
    for tau in [0.9, 0.6, 0.3, 0.1] {
        let r = compress(&model, &CompressionRequest::new("why", text, Target::KeepRatio(tau))).unwrap();
        assert!(r.kept_indices.iter().all(|i| prev.contains(i)));
        assert_eq!(r.kept_indices.len(), target_keep_count(18, tau));
        prev = r.kept_indices;
    }
}
