use std::collections::BTreeMap;

use deskbox_core::cache::{run_with_cache, Budget, PrefixCache, PrefixTrie, PromptCache, Uncached};
use deskbox_core::dataset::{ByteTokenizer, Tokenizer};
use deskbox_core::memory::{estimate, min_gpus, GpuProfile, TrainingShape};
use deskbox_core::model::{
    build_toy_model, log_softmax, ModelBackend, ModelConfig, ToyTransformer, LOGIT_TOLERANCE,
};
use deskbox_core::packing::{
    naive_padding, pack_instructions, pack_pretrain, sample_mixture, Exhaustion, MixtureSpec,
};
use deskbox_core::scoring::{
    aggregate_self_consistency, filter_top_p, generate, last_number, score_option_letter,
    score_perplexity, GenerationConfig,
};
use deskbox_core::TokenId;
use proptest::prelude::*;
use std::sync::OnceLock;

fn toy() -> &'static ToyTransformer {
    static M: OnceLock<ToyTransformer> = OnceLock::new();
    M.get_or_init(|| build_toy_model(ModelConfig::small(42)).unwrap())
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

fn tokens(max: usize) -> impl Strategy<Value = Vec<TokenId>> {
    prop::collection::vec(0u32..64, 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn causality(seq in tokens(40), tail in tokens(10), cut in 0usize..40) {
        let cut = cut % seq.len();
        let mut other = seq[..=cut].to_vec();
        other.extend(&tail);
        let a = toy().forward_full(&seq).unwrap().logits;
        let b = toy().forward_full(&other).unwrap().logits;
        for t in 0..=cut {
            prop_assert_eq!(a.row(t), b.row(t));
        }
    }

    #[test]
    fn incremental_matches_full_at_any_cut(seq in tokens(60), cut in 1usize..60) {
        prop_assume!(seq.len() > 1);
        let cut = 1 + cut % (seq.len() - 1);
        let full = toy().forward_full(&seq).unwrap();
        let head = toy().forward_full(&seq[..cut]).unwrap();
        let rest = toy().forward_incremental(&head.kv, &seq[cut..]).unwrap();
        prop_assert!(max_diff(rest.logits.last(), full.logits.last()) < LOGIT_TOLERANCE);
    }

    #[test]
    fn cached_prefill_matches_oracle_under_any_budget(
        prefix in tokens(20),
        suffixes in prop::collection::vec(tokens(12), 1..10),
        budget in 0usize..80,
    ) {
        let requests: Vec<Vec<TokenId>> = suffixes
            .iter()
            .map(|s| prefix.iter().chain(s).copied().collect())
            .collect();
        let (outs, stats) = run_with_cache(toy(), &requests, Budget::tokens(budget)).unwrap();
        let total: usize = requests.iter().map(Vec::len).sum();
        prop_assert_eq!(stats.tokens_presented() as usize, total);
        for (r, o) in requests.iter().zip(&outs) {
            let oracle = toy().forward_full(r).unwrap();
            prop_assert!(max_diff(&o.logits, oracle.logits.last()) < LOGIT_TOLERANCE);
        }
        // with no budget pressure the shared prefix is computed once
        let (_, unlimited) = run_with_cache(toy(), &requests, Budget::unlimited()).unwrap();
        prop_assert!(unlimited.tokens_computed <= stats.tokens_computed);
    }

    #[test]
    fn trie_invariants_hold(ops in prop::collection::vec((prop::collection::vec(0u32..4, 1..8), any::<bool>()), 1..40),
                            budget in 1usize..30) {
        let mut trie = PrefixTrie::new();
        for (seq, lookup) in ops {
            if lookup {
                let m = trie.lookup_longest_prefix(&seq);
                prop_assert!(m.matched_len <= seq.len());
                prop_assert_eq!(m.kv.map_or(0, |k| k.len()), m.matched_len);
            } else {
                let kv = toy().forward_full(&seq).unwrap().kv;
                trie.insert(&seq, &kv, None, Budget::tokens(budget)).unwrap();
                prop_assert!(trie.cached_tokens() <= budget);
                if seq.len() <= budget {
                    prop_assert_eq!(trie.peek_longest_prefix(&seq).matched_len, seq.len());
                }
            }
            prop_assert!(trie.check_invariants().is_ok(), "{:?}", trie.check_invariants());
        }
    }

    #[test]
    fn cached_scoring_matches_uncached(context in tokens(30), options in prop::collection::vec(tokens(6), 1..5)) {
        let cached = score_perplexity(toy(), &context, &options, &mut PrefixCache::new(Budget::unlimited())).unwrap();
        let plain = score_perplexity(toy(), &context, &options, &mut Uncached::new()).unwrap();
        prop_assert_eq!(cached.chosen, plain.chosen);
        for (a, b) in cached.options.iter().zip(&plain.options) {
            prop_assert!((a.sum_logprob - b.sum_logprob).abs() < 1e-6);
            let ppl = (-a.sum_logprob / a.token_count as f64).exp();
            prop_assert!((a.avg_ppl - ppl).abs() <= 1e-12 * ppl);
        }
    }

    #[test]
    fn one_token_options_agree_with_letter_ranking(context in tokens(30), letters in prop::collection::btree_set(0u32..64, 1..6)) {
        let letters: Vec<TokenId> = letters.into_iter().collect();
        let options: Vec<Vec<TokenId>> = letters.iter().map(|&t| vec![t]).collect();
        let ppl = score_perplexity(toy(), &context, &options, &mut Uncached::new()).unwrap();
        let letter = score_option_letter(toy(), &context, &letters, &mut Uncached::new()).unwrap();
        prop_assert_eq!(ppl.chosen, letter.chosen);
    }

    #[test]
    fn logit_shift_keeps_choices(logits in prop::collection::vec(-8.0f32..8.0, 2..20), shift in -50.0f32..50.0) {
        let shifted: Vec<f32> = logits.iter().map(|l| l + shift).collect();
        let a = log_softmax(&logits);
        let b = log_softmax(&shifted);
        let best = |v: &[f64]| v.iter().enumerate().fold(0, |bi, (i, x)| if *x > v[bi] { i } else { bi });
        prop_assert_eq!(best(&a), best(&b));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn top_p_output_is_a_normalized_sorted_prefix(raw in prop::collection::vec(0.0f64..1.0, 1..40), p in 0.01f64..1.0) {
        let sum: f64 = raw.iter().sum();
        prop_assume!(sum > 0.0);
        let probs: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let out = filter_top_p(&probs, p);
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let kept: f64 = probs.iter().zip(&out).filter(|(_, o)| **o > 0.0).map(|(p, _)| p).sum();
        prop_assert!(kept >= p - 1e-12);
        // everything kept is at least as likely as everything dropped
        let min_kept = probs.iter().zip(&out).filter(|(_, o)| **o > 0.0).map(|(p, _)| *p).fold(f64::INFINITY, f64::min);
        let max_dropped = probs.iter().zip(&out).filter(|(p, o)| **o == 0.0 && **p > 0.0).map(|(p, _)| *p).fold(0.0, f64::max);
        prop_assert!(min_kept >= max_dropped);
    }

    #[test]
    fn pretrain_packing_conserves_tokens(docs in prop::collection::vec(prop::collection::vec(1u32..50, 0..30), 0..12), max_len in 2usize..40) {
        let blocks = pack_pretrain(&docs, max_len, 0, false).unwrap();
        let mut joined = Vec::new();
        for (i, d) in docs.iter().enumerate() {
            joined.extend(d);
            if i + 1 < docs.len() { joined.push(0); }
        }
        let flat: Vec<TokenId> = blocks.iter().flat_map(|b| b.tokens.clone()).collect();
        prop_assert_eq!(&flat, &joined);
        for (i, b) in blocks.iter().enumerate() {
            prop_assert!(b.tokens.len() <= max_len);
            prop_assert_eq!(b.tokens.len() + b.pad_count, max_len);
            if i + 1 < blocks.len() { prop_assert_eq!(b.pad_count, 0); }
        }
        // segments rebuild each document
        let mut rebuilt: BTreeMap<usize, Vec<TokenId>> = BTreeMap::new();
        for b in &blocks {
            let mut pos = 0;
            for s in &b.segments {
                prop_assert_eq!(s.start, pos);
                pos = s.end;
                rebuilt.entry(s.source).or_default().extend(&b.tokens[s.start..s.end]);
            }
            prop_assert_eq!(pos, b.tokens.len());
        }
        for (i, d) in docs.iter().enumerate() {
            let mut got = rebuilt.remove(&i).unwrap_or_default();
            if i + 1 < docs.len() { prop_assert_eq!(got.pop(), Some(0)); }
            prop_assert_eq!(&got, d);
        }
    }

    #[test]
    fn instruction_packing_is_exact_and_beats_naive(lens in prop::collection::vec(1usize..100, 1..40), max_len in 100usize..300) {
        let convs: Vec<Vec<TokenId>> = lens.iter().enumerate().map(|(i, &n)| vec![i as TokenId; n]).collect();
        let blocks = pack_instructions(&convs, max_len).unwrap();
        let mut seen = vec![0; convs.len()];
        for b in &blocks {
            prop_assert!(b.tokens.len() <= max_len);
            prop_assert_eq!(b.tokens.len() + b.pad_count, max_len);
            for s in &b.segments {
                seen[s.source] += 1;
                prop_assert_eq!(&b.tokens[s.start..s.end], convs[s.source].as_slice());
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        let pads: usize = blocks.iter().map(|b| b.pad_count).sum();
        prop_assert!(pads <= naive_padding(&convs, max_len));
    }

    #[test]
    fn estimate_is_monotone(p in 1u64..1_000_000_000_000, n in 1u64..64, l in 1u64..100, b in 1u64..16,
                            s in 1u64..8192, h in 1u64..16384, v in 1u64..200_000) {
        let shape = TrainingShape { params: p, gpus: n, layers: l, batch: b, seq_len: s, hidden: h, vocab: v };
        let base = estimate(&shape).total;
        let bigger = [
            TrainingShape { params: p + 1, ..shape },
            TrainingShape { layers: l + 1, ..shape },
            TrainingShape { batch: b + 1, ..shape },
            TrainingShape { seq_len: s + 1, ..shape },
            TrainingShape { hidden: h + 1, ..shape },
            TrainingShape { vocab: v + 1, ..shape },
        ];
        for grown in &bigger {
            prop_assert!(estimate(grown).total > base);
        }
        let spread = estimate(&shape.with_gpus(n + 1)).total;
        prop_assert!(spread < base);
    }

    #[test]
    fn min_gpus_is_tight(p in 1_000_000_000u64..100_000_000_000, cap in 20.0f64..100.0) {
        let shape = TrainingShape { params: p, gpus: 1, layers: 32, batch: 1, seq_len: 2048, hidden: 4096, vocab: 32000 };
        let gpu = GpuProfile::new("x", cap);
        if let Some(m) = min_gpus(&shape, &gpu, 512) {
            prop_assert!(estimate(&shape.with_gpus(m)).total <= cap);
            if m > 1 { prop_assert!(estimate(&shape.with_gpus(m - 1)).total > cap); }
        }
    }

    #[test]
    fn mixture_is_deterministic(seed in any::<u64>(), wa in 0.0f64..5.0, wb in 0.1f64..5.0) {
        let mut data = BTreeMap::new();
        data.insert("a".to_string(), (0..10u32).collect::<Vec<_>>());
        data.insert("b".to_string(), (10..30u32).collect::<Vec<_>>());
        let spec = MixtureSpec::new(&[("a", wa), ("b", wb)], 64, seed);
        prop_assert_eq!(
            sample_mixture(&spec, &data, Exhaustion::Replace).unwrap(),
            sample_mixture(&spec, &data, Exhaustion::Replace).unwrap()
        );
    }

    #[test]
    fn byte_tokenizer_round_trips(s in ".*") {
        prop_assert_eq!(ByteTokenizer.decode(&ByteTokenizer.encode(&s)), Some(s));
    }

    #[test]
    fn single_sample_vote_is_its_extraction(s in "[a-z0-9 ,.-]{0,30}") {
        prop_assert_eq!(aggregate_self_consistency(&[s.as_str()], last_number), last_number(&s));
    }
}

#[test]
fn cached_generation_matches_uncached() {
    let cfg = GenerationConfig {
        max_new_tokens: 10,
        ..Default::default()
    };
    let mut cache = PrefixCache::new(Budget::tokens(40));
    for i in 0..20u32 {
        let prompt: Vec<TokenId> = (0..(5 + i % 7)).map(|j| (j * 13 + i) % 64).collect();
        let a = generate(toy(), &prompt, &cfg, i as u64, &mut cache).unwrap();
        let b = generate(toy(), &prompt, &cfg, i as u64, &mut Uncached::new()).unwrap();
        assert_eq!(a, b);
    }
    assert!(cache.stats().tokens_presented() > 0);
}
