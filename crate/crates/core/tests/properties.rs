mod common;

use coder_forge::corpus::Negative;
use coder_forge::curriculum::{e5_simple_filter, plan_stages, DataSourceEntry, DataSourceKind};
use coder_forge::embed::{FixtureEmbedder, HashEmbedder};
use coder_forge::eval::dedup_benchmark;
use coder_forge::mining::{mine_hard_negatives, MiningConfig, MiningRequest, NegativePool};
use coder_forge::Embedding;
use common::*;
use proptest::prelude::*;

fn pool_from(vectors: &[Vec<f64>]) -> NegativePool {
    let docs = (0..vectors.len())
        .map(|i| Negative {
            id: format!("d{i:03}"),
            text: format!("doc {i}"),
        })
        .collect();
    NegativePool::from_parts(docs, vectors.iter().map(|v| Embedding::from_f64(v).unwrap()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mined_negatives_respect_the_margin(seed in any::<u64>(), n in 20usize..120, k in 1usize..20, margin in 0.5f64..1.0) {
        let mut r = rng(seed);
        let dim = 16;
        let q = gaussian_vec(&mut r, dim);
        let pos: Vec<f64> = q.iter().zip(gaussian_vec(&mut r, dim)).map(|(a, b)| a + 0.3 * b).collect();
        let vectors: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut r, dim)).collect();
        let pool = pool_from(&vectors);
        let embedder = FixtureEmbedder::from_pairs([
            ("q", Embedding::from_f64(&q).unwrap()),
            ("p", Embedding::from_f64(&pos).unwrap()),
        ]);
        let cfg = MiningConfig { k_negatives: k, margin, candidate_pool: 30, seed, ..MiningConfig::default() };
        let request = MiningRequest { query: "q", positive: "p", positive_id: "d000", exclude_ids: &["d001"] };
        let ceiling = margin * cos(&q, &pos);
        let below = vectors.iter().enumerate().filter(|(i, v)| *i > 1 && cos(&q, v) < ceiling).count();
        match mine_hard_negatives(&request, &pool, &embedder, &cfg) {
            Ok(m) => {
                prop_assert_eq!(m.negatives.len(), k);
                let mut ids: Vec<&str> = m.negatives.iter().map(|n| n.id.as_str()).collect();
                prop_assert!(!ids.contains(&"d000") && !ids.contains(&"d001"));
                ids.sort_unstable();
                ids.dedup();
                prop_assert_eq!(ids.len(), k);
                for n in &m.negatives {
                    let i: usize = n.id[1..].parse().unwrap();
                    prop_assert!(cos(&q, &vectors[i]) < ceiling);
                }
                prop_assert!(m.metadata.filled <= k);
            }
            Err(_) => prop_assert!(below < k, "mining failed with {} eligible documents", below),
        }
    }

    #[test]
    fn mining_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = gaussian_vec(&mut r, 8);
        let vectors: Vec<Vec<f64>> = (0..60).map(|_| gaussian_vec(&mut r, 8)).collect();
        let pool = pool_from(&vectors);
        let embedder = FixtureEmbedder::from_pairs([
            ("q", Embedding::from_f64(&q).unwrap()),
            ("p", Embedding::from_f64(&q).unwrap()),
        ]);
        let cfg = MiningConfig { candidate_pool: 10, seed, ..MiningConfig::default() };
        let request = MiningRequest { query: "q", positive: "p", positive_id: "none", exclude_ids: &[] };
        let a = mine_hard_negatives(&request, &pool, &embedder, &cfg);
        let b = mine_hard_negatives(&request, &pool, &embedder, &cfg);
        prop_assert_eq!(a.ok(), b.ok());
    }

    #[test]
    fn dedup_matches_oracle_and_is_idempotent(seed in any::<u64>()) {
        let b = random_benchmark(&mut rng(seed), "prop");
        let (once, _) = dedup_benchmark(&b);
        prop_assert_eq!(&once, &oracle_dedup(&b));
        prop_assert_eq!(&dedup_benchmark(&once).0, &once);
        prop_assert!(once.corpus.len() <= b.corpus.len());
        prop_assert!(once.validate().is_ok());
    }

    #[test]
    fn plan_accepts_exactly_mixed_sources(kinds in proptest::collection::vec(0usize..4, 0..6)) {
        const ALL: [DataSourceKind; 4] = [
            DataSourceKind::TextRetrieval,
            DataSourceKind::TextSts,
            DataSourceKind::CodeExisting,
            DataSourceKind::CodeSynthetic,
        ];
        let sources: Vec<DataSourceEntry> = kinds
            .iter()
            .enumerate()
            .map(|(i, &k)| DataSourceEntry::new(format!("s{i}"), ALL[k], 1))
            .collect();
        let mixed = kinds.iter().any(|&k| k < 2) && kinds.iter().any(|&k| k >= 2);
        prop_assert_eq!(plan_stages(&sources, 1e-4, 1e-5).is_ok(), mixed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Raising top_n can only drop more samples.
    #[test]
    fn e5_filter_is_monotone_in_top_n(seed in any::<u64>(), top_n in 1usize..6) {
        let samples: Vec<_> = (0..12)
            .map(|s| {
                let negs: Vec<(String, String)> = (0..6)
                    .map(|j| (format!("n{s}-{j}"), format!("{} helper {j} {}", WORDS[(s + j) % 12], WORDS[j % 12])))
                    .collect();
                let pos = format!("{} {} routine", WORDS[s % 12], WORDS[(s + 3) % 12]);
                make_sample("Web Query to Code Retrieval", &format!("p{s}"), &format!("{} {}", WORDS[s % 12], WORDS[(s * 5) % 12]), (&format!("pos{s}"), &pos), &negs)
            })
            .collect();
        let embedder = HashEmbedder::new(seed, 32);
        let low = e5_simple_filter(samples.clone(), None, &embedder, top_n, 1).unwrap();
        let high = e5_simple_filter(samples, None, &embedder, top_n + 1, 3).unwrap();
        for (id, _) in &low.dropped {
            prop_assert!(high.dropped.iter().any(|(h, _)| h == id));
        }
        prop_assert_eq!(low.retained.len() + low.dropped.len(), 12);
    }
}
