use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tov_core::natural_sampler::{homogeneity_score, keep_candidate};
use tov_core::osm::{associate_category, RuleTable};
use tov_core::resampler::{balance_targets, rebalance};
use tov_core::{DatasetManifest, Rect, Sample, SceneCategory, SourceKind};

fn direct_sum(p: &[f64]) -> f64 {
    let mut s = 0.0;
    for &v in p {
        if v > 0.0 {
            s += v * v.ln();
        }
    }
    s
}

fn random_histogram(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p: Vec<f64> = (0..9)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
        .collect();
    if p.iter().all(|&v| v == 0.0) {
        p[rng.random_range(0..9)] = 1.0;
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

#[test]
fn homogeneity_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let p = random_histogram(&mut rng);
        let s = homogeneity_score(&p).unwrap();
        assert!((s - direct_sum(&p)).abs() <= 1e-12, "{p:?}");
        assert!(s <= 0.0 && s >= (1.0f64 / 9.0).ln() - 1e-12);
    }
}

#[test]
fn homogeneity_extremes() {
    for c in 0..9 {
        let mut p = vec![0.0; 9];
        p[c] = 1.0;
        assert_eq!(homogeneity_score(&p).unwrap(), 0.0);
        assert!(keep_candidate(0.0, 0.2));
    }
    let uniform = homogeneity_score(&[1.0 / 9.0; 9]).unwrap();
    assert!((uniform - (1.0f64 / 9.0).ln()).abs() <= 1e-12);
    assert!(!keep_candidate(uniform, 0.2));
}

proptest! {
    #[test]
    fn homogeneity_permutation_invariant(seed in any::<u64>(), perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle()) {
        let p = random_histogram(&mut ChaCha8Rng::seed_from_u64(seed));
        let q: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        prop_assert!((homogeneity_score(&p).unwrap() - homogeneity_score(&q).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn keep_is_monotone(a in -5.0f64..0.0, b in -5.0f64..0.0, t in 0.01f64..1.0) {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        if keep_candidate(lo, t) {
            prop_assert!(keep_candidate(hi, t));
        }
    }
}

/// Random counts over a random subset of natural and man-made classes; every
/// natural class holds at least one record.
fn random_manifest(rng: &mut ChaCha8Rng) -> DatasetManifest {
    let mut records = Vec::new();
    let natural: Vec<usize> = (0..9).filter(|_| rng.random_bool(0.5)).collect();
    let natural = if natural.is_empty() { vec![rng.random_range(0..9)] } else { natural };
    let man_made: Vec<usize> = (0..22).filter(|_| rng.random_bool(0.3)).collect();
    let cats = natural
        .iter()
        .map(|&c| SceneCategory::natural(c).unwrap())
        .chain(man_made.iter().map(|&c| SceneCategory::man_made(c).unwrap()));
    for cat in cats {
        let lo = if cat.kind() == SourceKind::Natural { 1 } else { 0 };
        for i in 0..rng.random_range(lo..40) {
            records.push(Sample {
                image_id: format!("img{}", rng.random_range(0..3)),
                window: Rect::new(i, cat.id(), 8, 8),
                label: cat,
                score: None,
            });
        }
    }
    // Interleave classes so that order preservation is actually exercised.
    for i in (1..records.len()).rev() {
        records.swap(i, rng.random_range(0..=i));
    }
    let mut m = DatasetManifest::from_samples("mixed", 0, records);
    // Taxonomy also lists man-made classes with no records.
    m.taxonomy.extend(man_made.iter().map(|&c| SceneCategory::man_made(c).unwrap()));
    m.taxonomy.sort();
    m.taxonomy.dedup();
    m
}

#[test]
fn rebalance_is_exact_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..50 {
        let m = random_manifest(&mut rng);
        let counts = m.counts();
        let natural = m.classes_of(SourceKind::Natural);
        let man_made = m.classes_of(SourceKind::ManMade);
        let n_k = natural.iter().map(|c| counts[c]).min().unwrap();
        let n_k_prime = if man_made.is_empty() { 0 } else { n_k * natural.len() / man_made.len() };
        assert_eq!(balance_targets(&m).unwrap(), (n_k, n_k_prime));

        let seed = rng.random();
        let out = rebalance(&m, seed).unwrap();
        let got = out.counts();
        for c in &natural {
            assert_eq!(got.get(c).copied().unwrap_or(0), n_k, "case {case}, {}", c.name());
        }
        for c in &man_made {
            let available = counts.get(c).copied().unwrap_or(0);
            assert_eq!(got.get(c).copied().unwrap_or(0), n_k_prime.min(available), "case {case}, {}", c.name());
            let deficit = n_k_prime.saturating_sub(available);
            assert_eq!(out.shortfall.get(c).copied().unwrap_or(0), deficit);
        }
        // Kept records form a subsequence of the input.
        let mut it = m.records.iter();
        assert!(out.records.iter().all(|r| it.any(|x| x == r)));

        assert_eq!(rebalance(&m, seed).unwrap().to_jsonl(), out.to_jsonl());
        let other = rebalance(&m, seed ^ 0x9E37).unwrap();
        assert_eq!(other.counts(), got);
        if out.shortfall.is_empty() {
            assert_eq!(rebalance(&out, seed).unwrap().records, out.records);
        }
    }
}

proptest! {
    #[test]
    fn association_ignores_tag_keys_and_order(
        values in prop::collection::vec(prop::sample::select(vec![
            "aerodrome", "parking", "school", "phone", "advice", "forest", "harbour", "car_park", "Apron ",
        ]), 1..5),
        keys in prop::collection::vec("[a-z]{1,6}", 5),
        rotate in 0usize..5,
    ) {
        let rules = RuleTable::builtin();
        let a: BTreeMap<String, String> = keys.iter().zip(&values).map(|(k, v)| (k.clone(), v.to_string())).collect();
        let mut rotated = keys.clone();
        rotated.rotate_left(rotate);
        let b: BTreeMap<String, String> = rotated.iter().zip(&values).map(|(k, v)| (format!("x{k}"), v.to_string())).collect();
        // Duplicate keys collapse differently, so compare only when both kept every value.
        if a.len() == values.len() && b.len() == values.len() {
            prop_assert_eq!(associate_category(&a, &rules), associate_category(&b, &rules));
        }
    }
}
