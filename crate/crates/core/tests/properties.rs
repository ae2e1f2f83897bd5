use std::collections::BTreeSet;
use std::path::Path;

use influence_lab::artifacts::tensor_file::{decode_ragged, decode_tensor, encode_ragged, encode_tensor};
use influence_lab::artifacts::Ragged;
use influence_lab::evalmetrics::{jaccard, sigma_efficiency};
use influence_lab::sampling::{
    entropy_bits, hard_cutoff, keep_count, linear_weights, random_sample_n, softmax_weights, End,
};
use influence_lab::scores::{normalize, NormMode, ScoreTable};
use proptest::prelude::*;

fn scores_and_groups() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3f64..1e3, n),
            prop::collection::vec(0usize..3, n),
        )
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

proptest! {
    #[test]
    fn class_norm_standardizes_every_group((raw, groups) in scores_and_groups()) {
        let (z, stats) = normalize(&raw, &groups);
        for s in &stats {
            let members: Vec<f64> = (0..raw.len()).filter(|&i| groups[i] == s.group).map(|i| z[i]).collect();
            let (m, sd) = mean_std(&members);
            prop_assert!(m.abs() < 1e-6, "group {} mean {m}", s.group);
            if !s.floored {
                prop_assert!((sd - 1.0).abs() < 1e-6, "group {} std {sd}", s.group);
            } else {
                prop_assert!(members.iter().all(|v| v.abs() < 1e-6));
            }
        }
    }

    #[test]
    fn dataset_norm_standardizes_globally((raw, labels) in scores_and_groups()) {
        let t = ScoreTable::from_raw("s", raw.clone(), &labels, NormMode::Dataset).unwrap();
        let (m, sd) = mean_std(&t.normalized);
        prop_assert!(m.abs() < 1e-6);
        if !t.stats[0].floored {
            prop_assert!((sd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hard_cutoff_keeps_exact_count_and_the_right_end(
        (raw, _) in scores_and_groups(),
        p in 0.0f64..0.99,
        tail in any::<bool>(),
    ) {
        let n = raw.len();
        let t = ScoreTable::from_raw("s", raw, &vec![0; n], NormMode::None).unwrap();
        let end = if tail { End::Tail } else { End::Head };
        let plan = hard_cutoff(&t, p, end).unwrap();
        prop_assert_eq!(plan.kept.len(), keep_count(n, p));
        prop_assert!(plan.kept.windows(2).all(|w| w[0] < w[1]));
        let pruned = plan.pruned();
        let v = t.values();
        for &k in &plan.kept {
            for &q in &pruned {
                if tail {
                    prop_assert!(v[k] <= v[q]);
                } else {
                    prop_assert!(v[k] >= v[q]);
                }
            }
        }
    }

    #[test]
    fn retention_weights_are_monotone(
        raw in prop::collection::vec(-5f64..5.0, 1..40),
        temp in 0.1f64..10.0,
        eps in 0.001f64..0.9,
    ) {
        for end in [End::Head, End::Tail] {
            let s = softmax_weights(&raw, temp, end).unwrap();
            let (l, _) = linear_weights(&raw, eps, end).unwrap();
            for w in [&s, &l] {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for i in 0..raw.len() {
                    for j in 0..raw.len() {
                        let higher = match end { End::Head => raw[i] > raw[j], End::Tail => raw[i] < raw[j] };
                        if higher {
                            prop_assert!(w[i] >= w[j]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn random_plans_are_deterministic(n in 1usize..300, p in 0.0f64..0.99, seed in any::<u64>()) {
        let a = random_sample_n(n, p, seed).unwrap();
        let b = random_sample_n(n, p, seed).unwrap();
        prop_assert_eq!(&a.kept, &b.kept);
        prop_assert_eq!(a.kept.len(), keep_count(n, p));
        prop_assert!(a.kept.iter().all(|&i| i < n));
    }

    #[test]
    fn jaccard_is_a_bounded_symmetric_similarity(
        a in prop::collection::btree_set(0usize..50, 0..30),
        b in prop::collection::btree_set(0usize..50, 0..30),
    ) {
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&b, &a));
        if !a.is_empty() {
            prop_assert_eq!(jaccard(&a, &a), 1.0);
        }
        let empty = BTreeSet::new();
        prop_assert_eq!(jaccard(&empty, &empty), 0.0);
    }

    #[test]
    fn entropy_is_bounded_by_log_of_support(counts in prop::collection::vec(0usize..50, 1..20)) {
        let h = entropy_bits(counts.iter().copied());
        let support = counts.iter().filter(|&&c| c > 0).count().max(1);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (support as f64).log2() + 1e-12);
    }

    #[test]
    fn sigma_inverts_the_ratio(rel in -50f64..50.0, dd in prop_oneof![-0.99f64..-0.01, 0.01f64..2.0]) {
        let s = sigma_efficiency(rel, dd).unwrap();
        prop_assert!((s * dd - rel).abs() < 1e-9 * (1.0 + rel.abs()));
    }

    #[test]
    fn tensors_round_trip_bit_exactly(bits in prop::collection::vec(any::<u32>(), 0..64), rows in 1usize..4) {
        let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
        let cols = data.len() / rows;
        let body = &data[..rows * cols];
        let bytes = encode_tensor(&[rows, cols], body).unwrap();
        let back = decode_tensor::<f32>(Path::new("t"), &bytes).unwrap();
        prop_assert_eq!(back.dims, vec![rows, cols]);
        prop_assert!(back.data.iter().zip(body).all(|(a, b)| a.to_bits() == b.to_bits()));

        let chunks: Vec<Vec<f64>> = body.chunks(3).map(|c| c.iter().map(|&x| f64::from(x)).collect()).collect();
        let ragged = Ragged::from_rows(1, chunks.iter().map(|c| c.as_slice()));
        let back = decode_ragged::<f64>(Path::new("r"), &encode_ragged(&ragged).unwrap()).unwrap();
        prop_assert_eq!(back.rows(), chunks.len());
        for (i, c) in chunks.iter().enumerate() {
            prop_assert!(back.row(i).iter().zip(c).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
