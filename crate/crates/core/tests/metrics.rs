use ingram_core::eval::{random_hits, random_mrr, rank_from_scores, Metrics};
use ingram_core::TieMode;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rank(scores: &[f64], answer: usize) -> f64 {
    rank_from_scores(scores, answer, |_| false, TieMode::Mid).unwrap()
}

#[test]
fn random_scorer_matches_analytic_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in [5usize, 40, 300] {
        let queries = 1000;
        let mut recips = Vec::with_capacity(queries);
        let mut hits = 0usize;
        for _ in 0..queries {
            // a uniform permutation puts the answer at a uniform position
            let mut scores: Vec<f64> = (0..c).map(|i| i as f64).collect();
            scores.shuffle(&mut rng);
            let r = rank(&scores, 0);
            recips.push(1.0 / r);
            hits += usize::from(r <= 10.0);
        }
        let mean = recips.iter().sum::<f64>() / queries as f64;
        let expected = random_mrr(c);
        let var = (1..=c).map(|r| (1.0 / r as f64 - expected).powi(2)).sum::<f64>() / c as f64;
        let sigma = (var / queries as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * sigma, "c={c}: {mean} vs {expected} ± {sigma}");
        let p = random_hits(10, c);
        let hs = (p * (1.0 - p) / queries as f64).sqrt();
        let h = hits as f64 / queries as f64;
        assert!((h - p).abs() <= 3.0 * hs.max(1e-12), "c={c}: hit@10 {h} vs {p}");
    }
}

#[test]
fn analytic_baselines() {
    assert_eq!(random_mrr(1), 1.0);
    assert!((random_mrr(4) - (1.0 + 0.5 + 1.0 / 3.0 + 0.25) / 4.0).abs() < 1e-15);
    assert_eq!(random_hits(10, 5), 1.0);
    assert_eq!(random_hits(10, 200), 0.05);
}

#[test]
fn ranks_one_and_four() {
    let m = Metrics::from_ranks([1.0, 4.0]).unwrap();
    assert_eq!((m.mr, m.mrr, m.hit1, m.hit3, m.hit10), (2.5, 0.625, 0.5, 0.5, 1.0));
}

fn scores_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
    prop::collection::vec(-5i32..5, 1..40).prop_flat_map(|v| {
        let n = v.len();
        // integer-valued scores make ties common
        (Just(v.into_iter().map(f64::from).collect::<Vec<_>>()), 0..n)
    })
}

proptest! {
    #[test]
    fn monotone_transform_keeps_ranks((scores, answer) in scores_strategy()) {
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
        for ties in [TieMode::Mid, TieMode::Optimistic, TieMode::Pessimistic] {
            prop_assert_eq!(
                rank_from_scores(&scores, answer, |_| false, ties).unwrap(),
                rank_from_scores(&transformed, answer, |_| false, ties).unwrap()
            );
        }
    }

    #[test]
    fn minus_infinity_candidate_changes_nothing((scores, answer) in scores_strategy()) {
        let mut extended = scores.clone();
        extended.push(f64::NEG_INFINITY);
        prop_assert_eq!(rank(&scores, answer), rank(&extended, answer));
    }

    #[test]
    fn filtering_never_worsens_rank((scores, answer) in scores_strategy(), mask in any::<u64>()) {
        let filtered = |c: usize| mask >> (c % 64) & 1 == 1;
        for ties in [TieMode::Mid, TieMode::Optimistic, TieMode::Pessimistic] {
            let f = rank_from_scores(&scores, answer, filtered, ties).unwrap();
            let raw = rank_from_scores(&scores, answer, |_| false, ties).unwrap();
            prop_assert!(f <= raw);
            prop_assert!(f >= 1.0);
        }
    }

    #[test]
    fn mid_rank_lies_between_bounds((scores, answer) in scores_strategy()) {
        let o = rank_from_scores(&scores, answer, |_| false, TieMode::Optimistic).unwrap();
        let p = rank_from_scores(&scores, answer, |_| false, TieMode::Pessimistic).unwrap();
        let m = rank(&scores, answer);
        prop_assert_eq!(m, (o + p) / 2.0);
        prop_assert!(p <= scores.len() as f64);
    }
}
