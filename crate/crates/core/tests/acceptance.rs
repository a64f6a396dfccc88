//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Every expected value here comes from code in this
//! file (brute-force loops, closed forms), not from the library.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use phonescore::eval::cost_at;
use phonescore::eval::scores_csv::scores_to_csv;
use phonescore::gop::DEFAULT_FLOOR;
use phonescore::head::{checkpoint_bytes, DropoutMasks, Trainable};
use phonescore::synth::PerPhone;
use phonescore::train::FrameTarget;
use phonescore::{
    act_cost, auc, batch_loss, collapse_senones, crossval, eligible_phones, evaluate, gop_score,
    init_params, lr_at_epoch, make_speaker_folds, min_cost, score_corpus, score_corpus_gop, synthesize, train,
    Aggregation, Corpus, CostSpec, CrossvalOptions, FrameMatrix, HeadConfig, HeadParams, InstanceScore, Label,
    LossSpec, MatrixKind, Mode, PhonePosteriorMatrix, PhoneSet, Segment, SenonePhoneMap, Stage, SynthKind, SynthSpec,
    TrainConfig, Weighting,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient fidelity", gradient_fidelity),
        ("loss oracle", loss_oracle),
        ("gop correctness", gop_correctness),
        ("metric oracles", metric_oracles),
        ("synthetic separability", synthetic_separability),
        ("fine-tuning beats permissive gop", beats_permissive_gop),
        ("threshold generalization", threshold_generalization),
        ("crossval mechanics", crossval_mechanics),
        ("reproducibility", reproducibility),
        ("lr schedule", lr_schedule),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn random_targets(rng: &mut ChaCha8Rng, n_frames: usize, n_phones: usize) -> Vec<FrameTarget> {
    (0..n_frames)
        .map(|frame| FrameTarget {
            frame,
            phone: rng.random_range(0..n_phones),
            label: if rng.random::<bool>() { Label::Correct } else { Label::Incorrect },
        })
        .collect()
}

fn param_slices(p: &mut HeadParams) -> Vec<(&'static str, &mut [f64])> {
    let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
    if let Some(h) = p.hidden.as_mut() {
        out.push(("hidden", h.as_slice_mut().unwrap()));
    }
    if let Some(bn) = p.batchnorm.as_mut() {
        out.push(("gamma", bn.gamma.as_slice_mut().unwrap()));
        out.push(("beta", bn.beta.as_slice_mut().unwrap()));
    }
    out.push(("output_weight", p.output_weight.as_slice_mut().unwrap()));
    out.push(("output_bias", p.output_bias.as_slice_mut().unwrap()));
    out
}

fn oracle_cost(correct: &[f64], incorrect: &[f64], theta: f64) -> f64 {
    let fp = incorrect.iter().filter(|&&s| s >= theta).count() as f64 / incorrect.len() as f64;
    let fnr = correct.iter().filter(|&&s| s < theta).count() as f64 / correct.len() as f64;
    0.5 * fp + fnr
}

fn instances(scores: &[(f64, bool)]) -> Vec<InstanceScore> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &(score, correct))| InstanceScore {
            utterance_id: "u".into(),
            segment_index: i,
            phone: 0,
            score,
            label: if correct { Label::Correct } else { Label::Incorrect },
        })
        .collect()
}

fn min_class_count(corpus: &Corpus) -> usize {
    let counts = corpus.label_counts();
    (0..corpus.phones.len())
        .map(|p| {
            let [i, c] = counts.get(p);
            i.min(c)
        })
        .min()
        .unwrap()
}

fn quick_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        checkpoint_every: epochs,
        seed,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------- criteria

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut combos = BTreeSet::new();
    for config_idx in 0..20 {
        // cycle through every (hidden, batchnorm, dropout) combination
        let use_hidden = config_idx & 1 == 1;
        let use_batchnorm = config_idx & 2 == 2;
        let dropout = config_idx & 4 == 4;
        combos.insert((use_hidden, use_batchnorm, dropout));
        let cfg = HeadConfig {
            input_dim: rng.random_range(2..7),
            use_hidden,
            hidden_dim: rng.random_range(2..6),
            use_batchnorm,
            dropout_rate: if dropout { 0.3 } else { 0.0 },
            n_phones: rng.random_range(1..5),
        };
        let n = rng.random_range(4..12);
        let mut params = init_params(&cfg, rng.random()).unwrap();
        if let Some(bn) = params.batchnorm.as_mut() {
            bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        params.output_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let x = Array2::from_shape_simple_fn((n, cfg.input_dim), || rng.random_range(-2.0..2.0));
        let masks = DropoutMasks::sample(&cfg, n, rng.random());
        let targets = random_targets(&mut rng, n, cfg.n_phones);
        let spec = LossSpec::new(if rng.random() { Weighting::Balanced } else { Weighting::Flat });

        let loss_of = |p: &HeadParams| {
            let t = p.forward_with_masks(x.view(), Mode::Train, masks.clone()).unwrap();
            batch_loss(t.probabilities.view(), &targets, &spec).unwrap().loss
        };
        let trace = params.forward_with_masks(x.view(), Mode::Train, masks.clone()).unwrap();
        let out = batch_loss(trace.probabilities.view(), &targets, &spec).unwrap();
        let dense = out.dense_grads(&targets, trace.probabilities.dim());
        let grads = params.backward(&trace, dense.view(), Trainable { hidden: true }).unwrap();
        let mut analytic: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        if let Some(h) = &grads.hidden {
            analytic.insert("hidden", h.iter().copied().collect());
        }
        if let Some(g) = &grads.gamma {
            analytic.insert("gamma", g.to_vec());
        }
        if let Some(b) = &grads.beta {
            analytic.insert("beta", b.to_vec());
        }
        analytic.insert("output_weight", grads.output_weight.iter().copied().collect());
        analytic.insert("output_bias", grads.output_bias.to_vec());

        let h = 1e-5;
        let names: Vec<(&str, usize)> = param_slices(&mut params).iter().map(|(n, s)| (*n, s.len())).collect();
        for (name, len) in names {
            let a = &analytic[name];
            if a.len() != len {
                return Err(format!("{name}: {} grads for {len} params", a.len()));
            }
            for i in 0..len {
                let mut plus = params.clone();
                param_slices(&mut plus).into_iter().find(|(n, _)| *n == name).unwrap().1[i] += h;
                let mut minus = params.clone();
                param_slices(&mut minus).into_iter().find(|(n, _)| *n == name).unwrap().1[i] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let rel = (a[i] - numeric).abs() / a[i].abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    check(
        worst <= 1e-4 && combos.len() == 8,
        format!("max relative error {worst:.2e} over 20 configs, {} flag combinations", combos.len()),
    )
}

fn brute_force_loss(probs: ArrayView2<f64>, targets: &[FrameTarget], n_phones: usize, balanced: bool, excluded: &BTreeSet<usize>) -> f64 {
    let mut total = 0.0;
    for p in 0..n_phones {
        for y in [0u8, 1] {
            let group: Vec<&FrameTarget> = targets.iter().filter(|t| t.phone == p && t.label.bit() == y).collect();
            let w = if excluded.contains(&p) || group.is_empty() {
                0.0
            } else if balanced {
                1.0 / group.len() as f64
            } else {
                1.0
            };
            let mut s = 0.0;
            for t in group {
                let q = probs[[t.frame, p]].clamp(1e-7, 1.0 - 1e-7);
                let yt = y as f64;
                s += yt * q.ln() + (1.0 - yt) * (1.0 - q).ln();
            }
            total -= w * s;
        }
    }
    total
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    let mut worst_dup = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let n_phones = rng.random_range(1..6);
        let probs = Array2::from_shape_simple_fn((n, n_phones), || match rng.random_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            2 => rng.random_range(0.0..1e-8),
            _ => rng.random_range(0.001..0.999),
        });
        let targets = random_targets(&mut rng, n, n_phones);
        let excluded: BTreeSet<usize> = (0..n_phones).filter(|_| rng.random_range(0..5) == 0).collect();
        for (weighting, balanced) in [(Weighting::Flat, false), (Weighting::Balanced, true)] {
            let spec = LossSpec::new(weighting).excluding(excluded.iter().copied());
            let got = batch_loss(probs.view(), &targets, &spec).unwrap().loss;
            let want = brute_force_loss(probs.view(), &targets, n_phones, balanced, &excluded);
            worst = worst.max((got - want).abs());
        }

        // duplicate one (phone, class) group k times
        let t0 = targets[rng.random_range(0..n)];
        let k = rng.random_range(2..5);
        let mut rows: Vec<Vec<f64>> = probs.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut dup_targets = targets.clone();
        for t in targets.iter().filter(|t| t.phone == t0.phone && t.label == t0.label) {
            for _ in 1..k {
                dup_targets.push(FrameTarget { frame: rows.len(), ..*t });
                rows.push(rows[t.frame].clone());
            }
        }
        let dup = Array2::from_shape_vec((rows.len(), n_phones), rows.concat()).unwrap();
        let spec = LossSpec::new(Weighting::Balanced);
        let a = batch_loss(probs.view(), &targets, &spec).unwrap().loss;
        let b = batch_loss(dup.view(), &dup_targets, &spec).unwrap().loss;
        worst_dup = worst_dup.max((a - b).abs());
        // flat weighting scales that group's contribution by k
        let none = BTreeSet::new();
        let group_only: Vec<FrameTarget> =
            targets.iter().copied().filter(|t| t.phone == t0.phone && t.label == t0.label).collect();
        let g = brute_force_loss(probs.view(), &group_only, n_phones, false, &none);
        let fa = batch_loss(probs.view(), &targets, &LossSpec::new(Weighting::Flat)).unwrap().loss;
        let fb = batch_loss(dup.view(), &dup_targets, &LossSpec::new(Weighting::Flat)).unwrap().loss;
        worst_dup = worst_dup.max((fb - fa - (k as f64 - 1.0) * g).abs() / fb.abs().max(1.0));
    }
    check(
        worst <= 1e-10 && worst_dup <= 1e-10,
        format!("max |loss - brute force| {worst:.1e}, duplication invariance error {worst_dup:.1e} (100 batches)"),
    )
}

fn gop_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n_phones = rng.random_range(2..8);
        let per = rng.random_range(1..4);
        let n_senones = n_phones * per;
        let phones = PhoneSet::new((0..n_phones).map(|p| format!("p{p}"))).unwrap();
        let mut owner: Vec<usize> = (0..n_senones).map(|s| s % n_phones).collect();
        owner.shuffle(&mut rng);
        let map = SenonePhoneMap::new(owner.clone(), &phones).unwrap();
        let n_frames = rng.random_range(1..30);
        let mut values = Vec::new();
        for _ in 0..n_frames {
            let raw: Vec<f64> = (0..n_senones)
                .map(|_| if rng.random_range(0..6) == 0 { 0.0 } else { rng.random::<f64>().powi(4) })
                .collect();
            let z: f64 = raw.iter().sum::<f64>().max(1e-300);
            values.extend(raw.iter().map(|v| (v / z) as f32));
        }
        let fm = FrameMatrix::new(MatrixKind::Posteriors, n_frames, n_senones, values.clone()).unwrap();
        let start = rng.random_range(0..n_frames);
        let duration = rng.random_range(1..=n_frames - start);
        let phone = rng.random_range(0..n_phones);
        let seg = Segment { phone, start, duration };
        let got = gop_score(&collapse_senones(&fm, &map, &phones).unwrap(), &seg, DEFAULT_FLOOR).unwrap();

        let mut acc = 0.0;
        for t in start..start + duration {
            let mut p = 0.0f64;
            for s in 0..n_senones {
                if owner[s] == phone {
                    p += values[t * n_senones + s] as f64;
                }
            }
            acc += p.max(1e-10).ln();
        }
        let want = -acc / duration as f64;
        worst = worst.max((got - want).abs());
    }
    let flat = PhonePosteriorMatrix(Array2::from_elem((7, 39), 1.0 / 39.0));
    let g = gop_score(&flat, &Segment { phone: 5, start: 1, duration: 5 }, DEFAULT_FLOOR).unwrap();
    let flat_err = (g - 39f64.ln()).abs();
    check(
        worst <= 1e-12 && flat_err <= 1e-9 && (g - 3.6636).abs() < 5e-5,
        format!("max |gop - scalar| {worst:.1e} (100 segments); flat 1/39 -> {g:.10}"),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let spec = CostSpec::default();
    let mut worst_auc = 0.0f64;
    let mut sets = 0;
    for _ in 0..300 {
        let n = rng.random_range(2..=500);
        let coarse = rng.random::<bool>();
        let mut raw: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let s: f64 = rng.random_range(-3.0..3.0);
                (if coarse { (s * 2.0).round() / 2.0 } else { s }, rng.random())
            })
            .collect();
        raw[0].1 = true;
        raw[1].1 = false;
        let set = instances(&raw);
        let correct: Vec<f64> = raw.iter().filter(|r| r.1).map(|r| r.0).collect();
        let incorrect: Vec<f64> = raw.iter().filter(|r| !r.1).map(|r| r.0).collect();

        let mut twice = 0u64;
        for &c in &correct {
            for &i in &incorrect {
                twice += if c > i { 2 } else if c == i { 1 } else { 0 };
            }
        }
        let want = twice as f64 / (2 * correct.len() * incorrect.len()) as f64;
        worst_auc = worst_auc.max((auc(&set).unwrap() - want).abs());

        let best = min_cost(&set, &spec).unwrap();
        if (best.cost - oracle_cost(&correct, &incorrect, best.threshold)).abs() > 1e-12 {
            return Err(format!("min_cost {} does not match its own threshold", best.cost));
        }
        for _ in 0..1000 {
            let theta = rng.random_range(-4.0..4.0);
            let c = oracle_cost(&correct, &incorrect, theta);
            if best.cost > c {
                return Err(format!("min_cost {} exceeds cost {c} at {theta}", best.cost));
            }
        }
        let act = act_cost(&set, &set, &spec).unwrap();
        if act.cost != best.cost {
            return Err(format!("act_cost(X, X) {} != min_cost(X) {}", act.cost, best.cost));
        }
        let lo = cost_at(&set, -10.0, &spec).unwrap().cost;
        let hi = cost_at(&set, 10.0, &spec).unwrap().cost;
        if lo != 0.5 || hi != 1.0 {
            return Err(format!("endpoint costs {lo}, {hi}"));
        }
        sets += 1;
    }
    check(
        worst_auc <= 1e-12,
        format!("{sets} sets: max |auc - pairwise| {worst_auc:.1e}; min_cost optimal on 1000 thresholds each; act(X,X)=min(X); endpoints 0.5/1.0"),
    )
}

fn separability_run(separation: f64) -> (f64, f64, usize) {
    let spec = SynthSpec {
        n_phones: 10,
        n_speakers: 10,
        separation: PerPhone::All(separation),
        seed: 5,
        ..SynthSpec::default()
    };
    let corpus = synthesize(&spec).unwrap().activations;
    let per_class = min_class_count(&corpus);
    let split = make_speaker_folds(&corpus.speakers(), 5, 5).unwrap();
    let head = HeadConfig::output_only(corpus.dim(), corpus.phones.len());
    let cfg = TrainConfig {
        checkpoint_every: 20,
        ..quick_train(60, 5)
    };
    let opts = CrossvalOptions { jobs: 5, ..CrossvalOptions::default() };
    let loss = LossSpec::new(Weighting::Balanced);
    let result = crossval(&corpus, &head, &cfg, &loss, &split, &opts).unwrap();
    // judged on the last checkpoint, not the selected one
    let eligible = eligible_phones(&corpus, opts.min_minority);
    let report = evaluate(result.final_scores(), None, &opts.cost, &eligible).unwrap();
    (report.average.min_cost, report.average.one_minus_auc, per_class)
}

fn synthetic_separability() -> Outcome {
    let start = Instant::now();
    let (mc, oma, per_class) = separability_run(6.0);
    let (_, oma0, _) = separability_run(0.0);
    let auc0 = 1.0 - oma0;
    let elapsed = start.elapsed();
    check(
        per_class >= 200 && mc < 0.05 && oma < 0.01 && (auc0 - 0.5).abs() <= 0.05 && elapsed < Duration::from_secs(300),
        format!("6 sigma: avg MinCost {mc:.4}, 1-AUC {oma:.4}; 0 sigma: AUC {auc0:.4}; min class count {per_class}"),
    )
}

fn beats_permissive_gop() -> Outcome {
    let spec = SynthSpec {
        kind: SynthKind::Both,
        dim: 24,
        dev_speakers: Some(5),
        asr_correctness_weight: 0.0,
        seed: 6,
        ..SynthSpec::default()
    };
    let corpora = synthesize(&spec).unwrap();
    let post = corpora.posteriors.unwrap();
    let act = corpora.activations;
    let eval_post = post.eval_subset();
    let eval_act = act.eval_subset();
    let eligible = eligible_phones(&eval_act, 50);
    let cost = CostSpec::default();

    let gop: Vec<InstanceScore> = score_corpus_gop(&eval_post, DEFAULT_FLOOR)
        .unwrap()
        .iter()
        .map(|g| g.to_instance())
        .collect();
    let gop_report = evaluate(&gop, None, &cost, &eligible).unwrap();

    let head = HeadConfig::output_only(act.dim(), act.phones.len());
    let (params, _) = train(&act.dev_subset(), &head, &quick_train(60, 6), &LossSpec::new(Weighting::Balanced)).unwrap();
    let scores = score_corpus(&params, &eval_act, Aggregation::MeanProb).unwrap();
    let head_report = evaluate(&scores, None, &cost, &eligible).unwrap();

    let (g, h) = (gop_report.normalized_min_cost(), head_report.normalized_min_cost());
    check(
        g >= 0.9 && h <= 0.5,
        format!("normalized avg MinCost: GOP {g:.3}, head {h:.3} ({} phones)", eligible.len()),
    )
}

fn threshold_generalization() -> Outcome {
    let spec = SynthSpec {
        kind: SynthKind::Posteriors,
        n_phones: 5,
        n_speakers: 20,
        utterances_per_speaker: 25,
        segments_per_utterance: 40,
        separation: PerPhone::All(1.5),
        dev_speakers: Some(10),
        seed: 7,
        ..SynthSpec::default()
    };
    let post = synthesize(&spec).unwrap().posteriors.unwrap();
    let (dev, eval) = (post.dev_subset(), post.eval_subset());
    let per_class = min_class_count(&dev).min(min_class_count(&eval));
    let to_inst = |c: &Corpus| -> Vec<InstanceScore> {
        score_corpus_gop(c, DEFAULT_FLOOR).unwrap().iter().map(|g| g.to_instance()).collect()
    };
    let eligible: BTreeSet<usize> = (0..5).collect();
    let report = evaluate(&to_inst(&eval), Some(&to_inst(&dev)), &CostSpec::default(), &eligible).unwrap();
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for p in &report.phones {
        let act = p.act_cost.unwrap();
        let rel = (act - p.min_cost) / p.min_cost;
        worst = worst.max(rel.abs());
        detail.push(format!("{:.3}/{:.3}", act, p.min_cost));
    }
    check(
        per_class >= 500 && worst <= 0.10 && report.phones.len() == 5,
        format!("worst relative gap {:.1}%, act/min per phone {}, min class count {per_class}", worst * 100.0, detail.join(" ")),
    )
}

fn crossval_mechanics() -> Outcome {
    let spec = SynthSpec {
        n_speakers: 30,
        utterances_per_speaker: 2,
        segments_per_utterance: 6,
        n_phones: 3,
        dim: 6,
        seed: 8,
        ..SynthSpec::default()
    };
    let corpus = synthesize(&spec).unwrap().activations;
    let split = make_speaker_folds(&corpus.speakers(), 6, 8).unwrap();
    let sizes = split.fold_sizes();
    let head = HeadConfig::output_only(corpus.dim(), corpus.phones.len());
    let cfg = TrainConfig {
        batch_size: 4,
        checkpoint_every: 1,
        ..quick_train(3, 8)
    };
    let opts = CrossvalOptions { min_minority: 1, jobs: 3, ..CrossvalOptions::default() };
    let result = crossval(&corpus, &head, &cfg, &LossSpec::new(Weighting::Balanced), &split, &opts).unwrap();

    let mut expected: BTreeMap<(String, usize), Label> = BTreeMap::new();
    for u in &corpus.utterances {
        for (i, label) in u.labels.iter().enumerate() {
            expected.insert((u.id.clone(), i), *label);
        }
    }
    for (epoch, pooled) in &result.pooled {
        let mut seen: BTreeMap<(String, usize), usize> = BTreeMap::new();
        for s in pooled {
            *seen.entry((s.utterance_id.clone(), s.segment_index)).or_default() += 1;
            if expected.get(&(s.utterance_id.clone(), s.segment_index)) != Some(&s.label) {
                return Err(format!("epoch {epoch}: unexpected instance {}#{}", s.utterance_id, s.segment_index));
            }
        }
        if seen.len() != expected.len() || seen.values().any(|&c| c != 1) {
            return Err(format!("epoch {epoch}: {} distinct of {} instances, some scored twice", seen.len(), expected.len()));
        }
    }
    // every speaker is held out by exactly the fold that owns it
    let owners: BTreeSet<usize> = corpus.speakers().iter().map(|s| split.fold_of(s).unwrap()).collect();
    check(
        sizes == vec![5; 6] && owners.len() == 6 && result.pooled.len() == 3,
        format!("fold sizes {sizes:?}; {} instances scored exactly once at each of {} checkpoints", expected.len(), result.pooled.len()),
    )
}

fn reproducibility() -> Outcome {
    let run = || {
        let spec = SynthSpec {
            n_speakers: 4,
            utterances_per_speaker: 5,
            segments_per_utterance: 12,
            n_phones: 4,
            dim: 8,
            seed: 9,
            dev_speakers: Some(2),
            ..SynthSpec::default()
        };
        let corpus = synthesize(&spec).unwrap().activations;
        let head = HeadConfig {
            input_dim: 8,
            use_hidden: true,
            hidden_dim: 6,
            use_batchnorm: true,
            dropout_rate: 0.4,
            n_phones: 4,
        };
        let cfg = TrainConfig {
            stage: Stage::OutputPlusHidden,
            stage1_epochs: 3,
            batch_size: 4,
            ..quick_train(6, 9)
        };
        let (params, log) = train(&corpus.dev_subset(), &head, &cfg, &LossSpec::new(Weighting::Balanced)).unwrap();
        let ckpt = checkpoint_bytes(&params, cfg.seed, "layo+1", cfg.epochs).unwrap();
        let eval = corpus.eval_subset();
        let scores = score_corpus(&params, &eval, Aggregation::MeanProb).unwrap();
        let dev_scores = score_corpus(&params, &corpus.dev_subset(), Aggregation::MeanProb).unwrap();
        let csv = scores_to_csv(&scores, &corpus.phones).unwrap();
        let all: BTreeSet<usize> = (0..4).collect();
        let report = evaluate(&scores, Some(&dev_scores), &CostSpec::default(), &all).unwrap();
        let phones = corpus.phones.clone();
        let report_csv = report.to_csv(|p| phones.symbol(p).unwrap().to_string(), false);

        let split = make_speaker_folds(&corpus.speakers(), 2, 9).unwrap();
        let cv = |jobs| {
            let opts = CrossvalOptions { min_minority: 1, jobs, ..CrossvalOptions::default() };
            let r = crossval(&corpus, &head, &TrainConfig { checkpoint_every: 2, ..cfg.clone() }, &LossSpec::new(Weighting::Balanced), &split, &opts).unwrap();
            (r.curve_csv(), scores_to_csv(r.final_scores(), &corpus.phones).unwrap())
        };
        (ckpt, csv, report_csv, log.to_csv(), cv(1), cv(2))
    };
    let a = run();
    let b = run();
    let same_runs = a == b;
    let jobs_invariant = a.4 == a.5;
    check(
        same_runs && jobs_invariant,
        format!(
            "checkpoint ({} bytes), score CSV, report CSV, training log identical across runs: {same_runs}; crossval identical for 1 vs 2 jobs: {jobs_invariant}",
            a.0.len()
        ),
    )
}

/// `a * b^k` in double-double arithmetic: roughly 1e-30 relative accuracy.
fn dd_scaled_power(a: f64, b: f64, k: u32) -> f64 {
    let mul = |(hi, lo): (f64, f64), x: f64| {
        let p = hi * x;
        let e = hi.mul_add(x, -p) + lo * x;
        let s = p + e;
        (s, e - (s - p))
    };
    let mut acc = (a, 0.0);
    for _ in 0..k {
        acc = mul(acc, b);
    }
    acc.0 + acc.1
}

fn lr_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let epochs = [0, 9, 10, 599];
    let got: Vec<f64> = epochs.iter().map(|&e| lr_at_epoch(&cfg, e)).collect();
    // within 2 ulp of the exact value for the stored f64 inputs
    let exact: Vec<f64> = epochs.iter().map(|&e| dd_scaled_power(0.01, 0.9, (e / 10) as u32)).collect();
    let ulp_ok = got.iter().zip(&exact).all(|(g, x)| (g - x).abs() <= 2.0 * f64::EPSILON * x);
    // and the decimal targets, up to the f64 representation error of 0.01 and 0.9
    let decimal = [0.01, 0.01, 0.009, 1.9966781110160346e-5];
    let rep_bound = 61.0 * f64::EPSILON / 2.0;
    let dec_ok = got.iter().zip(&decimal).all(|(g, d)| (g - d).abs() <= rep_bound * d);
    check(
        ulp_ok && dec_ok && got[0] == 0.01 && got[1] == 0.01,
        format!("lr(0)={:e} lr(9)={:e} lr(10)={:e} lr(599)={:e}", got[0], got[1], got[2], got[3]),
    )
}
