use graspkg_core::annotation::{majority_vote, randolph_kappa, KappaInput};
use proptest::prelude::*;

/// Kappa from ordered rater pairs for binary votes, in integer arithmetic
/// until the final division.
fn kappa_by_pairs(items: &[Vec<bool>]) -> f64 {
    let n = items[0].len();
    let mut agreeing = 0usize;
    for votes in items {
        for a in 0..n {
            for b in 0..n {
                if a != b && votes[a] == votes[b] {
                    agreeing += 1;
                }
            }
        }
    }
    let pairs = items.len() * n * (n - 1);
    // (Po - 1/2) / (1 - 1/2)
    (2 * agreeing) as f64 / pairs as f64 - 1.0
}

fn configurations(items: usize, raters: usize) -> Vec<Vec<Vec<bool>>> {
    let bits = items * raters;
    (0..1u32 << bits)
        .map(|mask| {
            (0..items)
                .map(|i| (0..raters).map(|r| mask >> (i * raters + r) & 1 == 1).collect())
                .collect()
        })
        .collect()
}

#[test]
fn kappa_matches_exhaustive_enumeration() {
    let mut seen = 0;
    for items in 1..=3 {
        for config in configurations(items, 3) {
            let k = randolph_kappa(&KappaInput::from_binary(&config).unwrap());
            let want = kappa_by_pairs(&config);
            assert!((k - want).abs() < 1e-12, "{config:?}: {k} vs {want}");
            assert!(k <= 1.0);
            let unanimous = config.iter().all(|v| v.iter().all(|&b| b == v[0]));
            assert_eq!(k == 1.0, unanimous, "{config:?}");
            seen += 1;
        }
    }
    assert_eq!(seen, 8 + 64 + 512);
}

#[test]
fn two_to_one_split_gives_minus_a_third() {
    let k = randolph_kappa(&KappaInput::from_binary([[true, true, false]]).unwrap());
    assert!((k + 1.0 / 3.0).abs() < 1e-15);
}

fn counts_strategy() -> impl Strategy<Value = (Vec<Vec<usize>>, usize)> {
    (2usize..5, 2usize..6, 1usize..6).prop_flat_map(|(q, n, items)| {
        proptest::collection::vec(proptest::collection::vec(0usize..q, n), items).prop_map(move |ratings| {
            let counts = ratings
                .iter()
                .map(|r| {
                    let mut c = vec![0; q];
                    for &cat in r {
                        c[cat] += 1;
                    }
                    c
                })
                .collect();
            (counts, q)
        })
    })
}

proptest! {
    #[test]
    fn kappa_ignores_category_relabeling((counts, q) in counts_strategy(), shift in 1usize..5) {
        let base = randolph_kappa(&KappaInput::new(counts.clone(), q).unwrap());
        let relabeled: Vec<Vec<usize>> = counts
            .iter()
            .map(|c| (0..q).map(|j| c[(j + shift) % q]).collect())
            .collect();
        let k = randolph_kappa(&KappaInput::new(relabeled, q).unwrap());
        prop_assert!((k - base).abs() < 1e-12);
        prop_assert!(k <= 1.0 + 1e-15);
    }

    #[test]
    fn majority_is_idempotent(votes in proptest::collection::vec(any::<bool>(), 1..9)) {
        let m = majority_vote(&votes).unwrap();
        let again = majority_vote(&vec![m.label; votes.len()]).unwrap();
        prop_assert_eq!(again.label, m.label);
        prop_assert!(!again.tie);
    }
}
