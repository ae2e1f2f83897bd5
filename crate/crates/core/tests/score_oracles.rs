use influence_lab::artifacts::PredictionTrace;
use influence_lab::scores::{
    el2n, forgetting_counts, forgetting_scores, pvi, pvi_scores, tracin_self, vog_from_checkpoints, NormMode,
    TracInReduce,
};
use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

#[test]
fn vog_hand_example() {
    let g = vog_from_checkpoints(&[array![[1.0, 3.0]], array![[3.0, 5.0]]]).unwrap();
    assert!((g - 2f64.sqrt()).abs() < EPS, "{g}");
    let same = vog_from_checkpoints(&[array![[1.0, 2.0]], array![[1.0, 2.0]], array![[1.0, 2.0]]]).unwrap();
    assert_eq!(same, 0.0);
    assert!(vog_from_checkpoints(&[array![[1.0]]]).is_err());
}

#[test]
fn el2n_endpoints() {
    assert!(el2n(&[50.0, -50.0, -50.0], 0) < EPS);
    let uniform = el2n(&[0.0, 0.0, 0.0], 0);
    assert!((uniform - 6f64.sqrt() / 3.0).abs() < EPS, "{uniform}");
    let wrong = el2n(&[-50.0, 50.0, -50.0], 0);
    assert!((wrong - 2f64.sqrt()).abs() < EPS, "{wrong}");
}

/// Counts "correct then wrong" as adjacent characters of a C/W string.
fn recount(pattern: &str) -> usize {
    pattern.as_bytes().windows(2).filter(|w| w == b"CW").count()
}

#[test]
fn forgetting_matches_brute_force_on_1000_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let steps = rng.gen_range(2..12);
        let n = rng.gen_range(1..6);
        let k = rng.gen_range(2..4u32);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k) as usize).collect();
        let predicted: Vec<Vec<u32>> = (0..steps).map(|_| (0..n).map(|_| rng.gen_range(0..k)).collect()).collect();
        let trace = PredictionTrace::new((1..=steps).map(|s| s * 50).collect(), predicted.clone(), labels.clone()).unwrap();
        let (counts, never) = forgetting_counts(&trace);
        for i in 0..n {
            let s: String = predicted
                .iter()
                .map(|row| if row[i] as usize == labels[i] { 'C' } else { 'W' })
                .collect();
            assert_eq!(counts[i], recount(&s), "pattern {s}");
            assert_eq!(never[i], !s.contains('C'), "pattern {s}");
        }
    }
}

#[test]
fn forgetting_named_cases() {
    // Example 0: always correct; 1: C,W; 2: C,W,C,W.
    let labels = vec![0, 0, 0];
    let rows = vec![vec![0, 0, 0], vec![0, 1, 1], vec![0, 1, 0], vec![0, 1, 1]];
    let t = PredictionTrace::new(vec![1, 2, 3, 4], rows, labels).unwrap();
    assert_eq!(forgetting_counts(&t).0, vec![0, 1, 2]);
    let table = forgetting_scores(&[t.clone(), t], NormMode::None).unwrap();
    assert_eq!(table.raw, vec![0.0, 1.0, 2.0]);
    let short = PredictionTrace::new(vec![1], vec![vec![0]], vec![0]).unwrap();
    assert!(forgetting_scores(&[short], NormMode::None).is_err());
}

#[test]
fn tracin_analytic() {
    assert_eq!(tracin_self(&[0.0, 0.0], &[1.0, 1.0], TracInReduce::L2), 0.0);
    // g = (3, 4): g·g = 25.
    assert!((tracin_self(&[25.0], &[1.0], TracInReduce::L2) - 25.0).abs() < EPS);
    assert!((tracin_self(&[3.0, 4.0], &[1.0, 1.0], TracInReduce::L2) - 5.0).abs() < EPS);
    assert!((tracin_self(&[3.0, 4.0], &[0.5, 0.5], TracInReduce::Sum) - 3.5).abs() < EPS);
}

#[test]
fn pvi_analytic() {
    assert!(pvi(0.3, 0.3).abs() < EPS);
    assert!((pvi(0.25, 0.5) + 1.0).abs() < EPS);
    assert!((pvi(0.8, 0.5) - 1.6f64.log2()).abs() < EPS);
    assert!((pvi(0.8, 0.5) - 0.67807).abs() < 1e-5);
    let t = pvi_scores(&[vec![0.8, 0.25]], &[vec![0.5, 0.5]], &[0, 1], NormMode::None).unwrap();
    assert!((t.raw[0] - 0.678_071_905).abs() < EPS);
    assert!((t.raw[1] + 1.0).abs() < EPS);
    assert!(pvi_scores(&[vec![0.8]], &[vec![0.5, 0.5]], &[0, 1], NormMode::None).is_err());
}
