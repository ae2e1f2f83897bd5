//! Acceptance gate: one line per criterion, `criterion N: PASS|FAIL: detail`.
//!
//! Exits nonzero when a criterion fails that is not listed in `KNOWN_RED`.
//! Known-red criteria still run in full and still print FAIL.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use influence_lab::artifacts::PredictionTrace;
use influence_lab::dataset::{inject_label_noise, Dataset, Example, Provenance, FIRST_WORD_ID};
use influence_lab::evalmetrics::{
    compute_metrics, noise_overlap, random_jaccard_moments, semer, sigma_efficiency, Annotation, PredictionSet,
    Reference,
};
use influence_lab::experiment::{CurveRow, ExperimentConfig, Workspace};
use influence_lab::sampling::{keep_count, stratified_sample_by, weight_table, weighted_sample, StratumKey};
use influence_lab::scores::{
    el2n, forgetting_counts, pvi, tracin_self, vog_from_checkpoints, NormMode, ScoreTable, TracInReduce,
};
use influence_lab::trainer::{LayerRef, Mode, Model, ModelConfig, Task};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Criteria that fail for reasons recorded in the decisions ledger.
const KNOWN_RED: &[(u32, &str)] = &[
    (1, "1.52 / -0.46 is -3.304; the published -3.25 implies a data change of about -0.468"),
    (8, "here VoG separates flipped labels: the low-VoG end is almost all clean, so pruning it leaves the noise behind"),
];

type Outcome = (bool, String);

fn check(ok: &mut bool, cond: bool, note: String, notes: &mut Vec<String>) {
    if !cond {
        *ok = false;
    }
    notes.push(note);
}

fn criterion_1() -> Outcome {
    let cases = [(2.94, -0.52, -5.65, 0.02), (5.48, -0.52, -10.53, 0.05), (1.52, -0.46, -3.25, 0.05)];
    let (mut ok, mut notes) = (true, Vec::new());
    for (er, dd, want, tol) in cases {
        let s = sigma_efficiency(er, dd).unwrap();
        let good = (s - want).abs() <= tol;
        check(&mut ok, good, format!("({er}, {dd}) -> {s:.3} vs {want}±{tol}{}", if good { "" } else { " [off]" }), &mut notes);
    }
    (ok, notes.join("; "))
}

fn criterion_2() -> Outcome {
    let n = 50_000;
    let examples = (0..n)
        .map(|i| Example {
            id: i,
            tokens: vec![FIRST_WORD_ID],
            label: i % 3,
            domain: None,
            intent: None,
            slots: None,
        })
        .collect();
    let names = vec!["a".into(), "b".into(), "c".into()];
    let d = Dataset::new(examples, 3, 8, names, Provenance::inline("noise fixture")).unwrap();
    let (mut ok, mut notes) = (true, Vec::new());
    for (p, paper) in [(0.05, 3.35), (0.30, 20.02)] {
        let (_, rec) = inject_label_noise(&d, p, 17).unwrap();
        let q = p * 2.0 / 3.0;
        let sd = (q * (1.0 - q) / n as f64).sqrt();
        let got = rec.flipped_fraction(n);
        check(
            &mut ok,
            (got - q).abs() <= 3.0 * sd,
            format!("p={p}: flipped {:.3}% vs {:.3}% ± {:.3}% (3σ), published {paper}%", 100.0 * got, 100.0 * q, 300.0 * sd),
            &mut notes,
        );
    }
    (ok, notes.join("; "))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(1e-8, f64::max);
    diff / scale
}

fn bump(m: &mut Model<f64>, layer: LayerRef, p: usize, delta: f64) {
    let l = m.layer_mut(layer);
    let w = l.weight.len();
    if p < w {
        l.weight.as_slice_mut().unwrap()[p] += delta;
    } else {
        l.bias[p - w] += delta;
    }
}

fn criterion_3() -> Outcome {
    const H: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut worst_embed, mut worst_layer) = (0f64, 0f64);
    for _ in 0..20 {
        let cfg = ModelConfig {
            vocab_size: 30,
            embed_dim: rng.gen_range(2..6),
            hidden_dims: (0..rng.gen_range(0..3)).map(|_| rng.gen_range(2..6)).collect(),
            num_classes: rng.gen_range(2..5),
            task: Task::SequenceClassification,
            dropout_rate: 0.0,
            seed: rng.gen(),
        };
        let mut m = Model::<f32>::init(&cfg).unwrap().cast::<f64>();
        m.embedding.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        for l in m.hidden.iter_mut().chain(std::iter::once(&mut m.head)) {
            l.weight.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
            l.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let ex = Example {
            id: 0,
            tokens: (0..rng.gen_range(1..7)).map(|_| rng.gen_range(2..30)).collect(),
            label: rng.gen_range(0..cfg.num_classes),
            domain: None,
            intent: None,
            slots: None,
        };
        let layer = if m.hidden.is_empty() || rng.gen_bool(0.5) { LayerRef::Head } else { LayerRef::LastHidden };
        let cap = m.capture_gradients(&ex, layer).unwrap();

        let base = m.embed(&ex.tokens).unwrap();
        let gold = |e: &Array2<f64>| m.forward_embedded(e.view(), &ex.tokens, Mode::Eval)[[0, ex.label]];
        let mut numeric = Vec::new();
        for t in 0..base.nrows() {
            for k in 0..base.ncols() {
                let (mut plus, mut minus) = (base.clone(), base.clone());
                plus[[t, k]] += H;
                minus[[t, k]] -= H;
                numeric.push((gold(&plus) - gold(&minus)) / (2.0 * H));
            }
        }
        let analytic: Vec<f64> = cap.embed_grad.iter().copied().collect();
        worst_embed = worst_embed.max(rel_err(&analytic, &numeric));

        let mut numeric = Vec::new();
        for p in 0..m.layer(layer).len() {
            bump(&mut m, layer, p, H);
            let up = m.loss(&ex.tokens, &[ex.label]).unwrap();
            bump(&mut m, layer, p, -2.0 * H);
            let down = m.loss(&ex.tokens, &[ex.label]).unwrap();
            bump(&mut m, layer, p, H);
            numeric.push((up - down) / (2.0 * H));
        }
        worst_layer = worst_layer.max(rel_err(&cap.layer_grad, &numeric));
    }
    (
        worst_embed < 1e-5 && worst_layer < 1e-5,
        format!("20 pairs, worst relative error: embedding output {worst_embed:.2e}, layer weights {worst_layer:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    const EPS: f64 = 1e-6;
    let (mut ok, mut notes) = (true, Vec::new());
    let vog = vog_from_checkpoints(&[array![[1.0, 3.0]], array![[3.0, 5.0]]]).unwrap();
    check(&mut ok, (vog - 2f64.sqrt()).abs() < EPS, format!("VoG {vog:.7}"), &mut notes);

    let ends = [el2n(&[50.0, -50.0, -50.0], 0), el2n(&[-50.0, 50.0, -50.0], 0), el2n(&[0.0, 0.0, 0.0], 0)];
    let want = [0.0, 2f64.sqrt(), 6f64.sqrt() / 3.0];
    let good = ends.iter().zip(&want).all(|(a, b)| (a - b).abs() < EPS);
    check(&mut ok, good, format!("EL2N {:.7}/{:.7}/{:.7}", ends[0], ends[1], ends[2]), &mut notes);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let steps = rng.gen_range(2..12);
        let n = rng.gen_range(1..6);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let predicted: Vec<Vec<u32>> = (0..steps).map(|_| (0..n).map(|_| rng.gen_range(0..3)).collect()).collect();
        let trace = PredictionTrace::new((1..=steps).collect(), predicted.clone(), labels.clone()).unwrap();
        let (counts, _) = forgetting_counts(&trace);
        for i in 0..n {
            let correct: Vec<bool> = predicted.iter().map(|r| r[i] as usize == labels[i]).collect();
            let brute = correct.windows(2).filter(|w| w[0] && !w[1]).count();
            mismatches += usize::from(brute != counts[i]);
        }
    }
    check(&mut ok, mismatches == 0, format!("forgetting recount mismatches {mismatches}/1000 traces"), &mut notes);

    let tr = [
        tracin_self(&[3.0, 4.0], &[1.0, 1.0], TracInReduce::L2),
        tracin_self(&[3.0, 4.0], &[0.5, 0.5], TracInReduce::Sum),
    ];
    let good = (tr[0] - 5.0).abs() < EPS && (tr[1] - 3.5).abs() < EPS;
    check(&mut ok, good, format!("TracIn {:.6}/{:.6}", tr[0], tr[1]), &mut notes);

    let pv = [pvi(0.3, 0.3), pvi(0.25, 0.5), pvi(0.8, 0.5)];
    let good = pv[0].abs() < EPS && (pv[1] + 1.0).abs() < EPS && (pv[2] - 1.6f64.log2()).abs() < EPS;
    check(&mut ok, good, format!("PVI {:.6}/{:.6}/{:.6}", pv[0], pv[1], pv[2]), &mut notes);
    (ok, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0f64;
    for _ in 0..200 {
        let n = rng.gen_range(6..80);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        for (mode, groups) in [(NormMode::Class, labels.clone()), (NormMode::Dataset, vec![0; n])] {
            let t = ScoreTable::from_raw("s", raw.clone(), &labels, mode).unwrap();
            for g in 0..3 {
                let v: Vec<f64> = (0..n).filter(|&i| groups[i] == g).map(|i| t.normalized[i]).collect();
                if v.is_empty() {
                    continue;
                }
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
                worst = worst.max(m.abs()).max((sd - 1.0).abs());
            }
        }
    }
    (worst < 1e-6, format!("200 tables each way, worst |mean| or |std-1| {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let w = [0.4, 0.3, 0.15, 0.1, 0.05];
    let table = weight_table("w", w.to_vec()).unwrap();
    let trials = 100_000u64;
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for seed in 0..trials {
        let kept = weighted_sample(&table, 0.6, seed).unwrap().kept;
        *counts.entry((kept[0], kept[1])).or_default() += 1;
    }
    let mut worst_z = 0f64;
    for a in 0..5 {
        for b in a + 1..5 {
            let p = w[a] * w[b] / (1.0 - w[a]) + w[b] * w[a] / (1.0 - w[b]);
            let obs = *counts.get(&(a, b)).unwrap_or(&0) as f64;
            let sd = (trials as f64 * p * (1.0 - p)).sqrt();
            worst_z = worst_z.max((obs - p * trials as f64).abs() / sd);
        }
    }
    let strata: Vec<String> = (0..1000).map(|i| ["a", "a", "a", "b", "b", "c"][i % 6].to_string()).collect();
    let mut worst_dev = 0f64;
    for p in [0.1, 0.33, 0.5, 0.77] {
        for seed in 0..5 {
            let plan = stratified_sample_by(&strata, p, StratumKey::Class, seed).unwrap();
            let kept = keep_count(1000, p) as f64;
            for s in ["a", "b", "c"] {
                let size = strata.iter().filter(|x| *x == s).count() as f64;
                let got = plan.kept.iter().filter(|&&i| strata[i] == s).count() as f64;
                worst_dev = worst_dev.max((got - size / 1000.0 * kept).abs());
            }
        }
    }
    (
        worst_z <= 3.0 && worst_dev <= 1.0,
        format!("pair frequencies worst |z| {worst_z:.2} over 1e5 trials; stratum count worst deviation {worst_dev:.2}"),
    )
}

fn pruning_config(noise: Option<f64>) -> ExperimentConfig {
    let mut v: Value = json!({
        "dataset": {
            "source": { "kind": "synthetic", "seed": 11, "generator": {
                "num_classes": 3, "num_examples": 5000, "vocab_size": 2000,
                "templates_per_class": 40, "signal_vocab": 30, "signal_tokens": 1,
                "min_len": 6, "max_len": 12, "redundancy": 0.5, "mutation_rate": 0.2,
                "confusion": 0.3 } },
            "test_fraction": 0.2, "split_seed": 1
        },
        "trainer": { "embed_dim": 16, "hidden_dims": [16],
            "schedule": { "epochs": 5, "batch_size": 32, "learning_rate": 0.01,
                "checkpoint_every": 125, "prediction_log_every": 50 },
            "seeds": [0] },
        "score": { "scores": ["vog"], "norm": "class" },
        "prune": { "methods": ["hard"], "fractions": [0.4], "ends": ["head", "tail"],
            "seeds": [0, 1, 2], "random": true }
    });
    if let Some(rate) = noise {
        v["dataset"]["noise"] = json!({ "rate": rate, "seed": 4 });
    }
    let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn accuracy_of(rows: &[CurveRow], score: &str, end: &str) -> f64 {
    rows.iter()
        .find(|r| r.score == score && r.end == end && (score == "baseline" || r.prune_fraction == 0.4))
        .unwrap_or_else(|| panic!("no row for {score}/{end}"))
        .metrics["accuracy"]
        .0
}

struct Accuracies {
    base: f64,
    random: f64,
    easy: f64,
    hard: f64,
}

fn accuracies(rows: &[CurveRow]) -> Accuracies {
    Accuracies {
        base: accuracy_of(rows, "baseline", ""),
        random: accuracy_of(rows, "random", ""),
        easy: accuracy_of(rows, "vog", "head"),
        hard: accuracy_of(rows, "vog", "tail"),
    }
}

fn criterion_7(csv_out: &mut Option<Vec<u8>>) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let (csv, rows) = Workspace::new(pruning_config(None), Some(dir.path().into()), false, 1).sweep().unwrap();
    *csv_out = Some(fs::read(csv).unwrap());
    let a = accuracies(&rows);
    let (c1, c2, c3) = (a.easy >= a.random, a.base - a.easy <= 0.015, a.hard <= a.random);
    (
        c1 && c2 && c3,
        format!(
            "3-seed means: baseline {:.4}, random {:.4}, VoG-easy {:.4}, VoG-hard {:.4}; easy>=random {c1}, easy within 1.5 pts {c2}, hard<=random {c3}; {:.1}s",
            a.base,
            a.random,
            a.easy,
            a.hard,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let w = Workspace::new(pruning_config(Some(0.3)), Some(dir.path().into()), false, 1);
    let (_, rows) = w.sweep().unwrap();
    let a = accuracies(&rows);
    let directional = a.easy >= a.random;

    let splits = w.splits().unwrap();
    let noise = splits.noise.as_ref().unwrap();
    let n = splits.train.len();
    let pruned = w.cell_plan("vog-hard-head-p0.4-s0").unwrap().pruned();
    let o = noise_overlap(&pruned, noise, n).unwrap();
    let (mean, sd) = random_jaccard_moments(n, noise.flipped_ids.len(), pruned.len()).unwrap();
    let near_random = (o.jaccard - mean).abs() <= 2.0 * sd;
    (
        directional && near_random,
        format!(
            "30% noise: random {:.4}, VoG-easy {:.4} (easy>=random {directional}), VoG-hard {:.4}; Jaccard(pruned, flipped) {:.4} vs random {:.4}±{:.4} (within 2σ {near_random})",
            a.random, a.easy, a.hard, o.jaccard, mean, sd
        ),
    )
}

fn utterance(domain: (&str, &str), intent: (&str, &str), slots: (&[&str], &[&str])) -> (Annotation, Annotation) {
    let s = |v: &[&str]| Some(v.iter().map(|x| x.to_string()).collect());
    let mk = |d: &str, i: &str, sl: &[&str]| Annotation {
        class: None,
        domain: Some(d.into()),
        intent: Some(i.into()),
        slots: s(sl),
    };
    (mk(domain.0, intent.0, slots.0), mk(domain.1, intent.1, slots.1))
}

fn fixture(rows: Vec<(Annotation, Annotation)>) -> PredictionSet {
    let mut p = PredictionSet::default();
    for (i, (g, q)) in rows.into_iter().enumerate() {
        p.push(i, g, q);
    }
    p
}

fn criterion_9() -> Outcome {
    const O: &str = "Other";
    // Hand counts: domain errors #4 #9; intent errors #2 #4 #9; gold slots 10
    // with 3 wrong (#3 twice, #7 once); predicted slots 9 with 2 wrong (#5, #7);
    // utterances with any error #2 #3 #4 #5 #7 #9.
    let p = fixture(vec![
        utterance(("music", "music"), ("play", "play"), (&[O, "artist"], &[O, "artist"])),
        utterance(("music", "music"), ("play", "stop"), (&[O, "artist", "artist"], &[O, "artist", "artist"])),
        utterance(("weather", "weather"), ("get", "get"), (&["city", "city"], &[O, O])),
        utterance(("weather", "music"), ("get", "play"), (&[O, "city"], &[O, "city"])),
        utterance(("weather", "weather"), ("get", "get"), (&[O], &["city"])),
        utterance(("music", "music"), ("stop", "stop"), (&[O], &[O])),
        utterance(("music", "music"), ("play", "play"), (&["song", "song"], &["artist", "song"])),
        utterance(("weather", "weather"), ("get", "get"), (&[O, "city"], &[O, "city"])),
        utterance(("music", "weather"), ("stop", "get"), (&[O], &[O])),
        utterance(("music", "music"), ("play", "play"), (&[O, "artist"], &[O, "artist"])),
    ]);
    let m = compute_metrics(&p).unwrap();
    let gold_semer = 6.0 / 20.0;
    let pred_semer = 5.0 / 19.0;
    let want = [
        ("dcer", 2.0 / 10.0),
        ("icer", 1.0 / 8.0),
        ("semer", gold_semer),
        ("f_semer", 2.0 * gold_semer * pred_semer / (gold_semer + pred_semer)),
        ("irer", 6.0 / 10.0),
    ];
    let (mut ok, mut notes) = (true, Vec::new());
    for (name, v) in want {
        let got = m.get(name).copied().unwrap_or(f64::NAN);
        check(&mut ok, (got - v).abs() < 1e-12, format!("{name} {got:.6}"), &mut notes);
    }
    let worked = fixture(vec![
        utterance(("music", "music"), ("play", "stop"), (&[O, "artist", "artist"], &[O, "artist", "artist"])),
        utterance(("weather", "weather"), ("get", "get"), (&["city", O], &[O, O])),
    ]);
    let s = semer(&worked, Reference::Gold).unwrap();
    check(&mut ok, (s - 0.4).abs() < 1e-12, format!("worked SEMER {s}"), &mut notes);
    (ok, notes.join(", "))
}

fn criterion_10(first: Option<Vec<u8>>) -> Outcome {
    let first = first.expect("criterion 7 produced no CSV");
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = Workspace::new(pruning_config(None), Some(dir.path().into()), false, 2).sweep().unwrap();
    let fresh = fs::read(&csv).unwrap();
    fs::remove_file(&csv).unwrap();
    let (csv, _) = Workspace::new(pruning_config(None), Some(dir.path().into()), false, 1).sweep().unwrap();
    let resumed = fs::read(csv).unwrap();
    (
        fresh == first && resumed == first,
        format!(
            "{} CSV bytes; fresh directory identical {}, rerun over finished cells identical {}",
            first.len(),
            fresh == first,
            resumed == first
        ),
    )
}

fn main() {
    let mut csv = None;
    let mut results: Vec<(u32, std::thread::Result<Outcome>)> = Vec::new();
    let mut run = |n: u32, f: &mut dyn FnMut() -> Outcome| results.push((n, catch_unwind(AssertUnwindSafe(f))));
    run(1, &mut criterion_1);
    run(2, &mut criterion_2);
    run(3, &mut criterion_3);
    run(4, &mut criterion_4);
    run(5, &mut criterion_5);
    run(6, &mut criterion_6);
    run(7, &mut || criterion_7(&mut csv));
    run(8, &mut criterion_8);
    run(9, &mut criterion_9);
    let first = csv.take();
    run(10, &mut || criterion_10(first.clone()));

    let known: BTreeSet<u32> = KNOWN_RED.iter().map(|k| k.0).collect();
    let mut unexpected = Vec::new();
    for (n, r) in results {
        let (ok, detail) = match r {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!("criterion {n}: {}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            match KNOWN_RED.iter().find(|k| k.0 == n) {
                Some((_, why)) => println!("    known red: {why}"),
                None => unexpected.push(n),
            }
        } else if known.contains(&n) {
            println!("    listed as known red but passed");
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
