//! Criterion checks shared by the acceptance gate and the per-module suites.
//! Each returns a one-line summary on success and a diagnostic on failure.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signmix_core::clip::{
    boundary_targets, clip_at, sample_clip, squash, ClipSpec, BOUNDARY_SLACK,
};
use signmix_core::cotrain::{
    compute_loss, gate_split, language_weights, loss_and_grad, merge_sub_batches,
    plain_loss_and_grad, BatchItem, LossConfig, MixedBatch, SoftLabel,
};
use signmix_core::eval::{build_label_map, PredictionRow, PredictionSet};
use signmix_core::grouping::{
    aggregate_votes, merge_matched, Adjudication, GroupingState, PairKey, VoteRecord,
};
use signmix_core::schedule::{lr_at, rescale_plan, TrainPlan};
use signmix_core::split::{optimize_matrix, optimize_split, test_signer_count, SplitConfig};
use signmix_core::{GlossId, LanguageTag, SampleId, SampleRecord, SignerId, Subset};

use super::*;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- split ----

pub fn split_optimality(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    let mut solver_time = 0.0;
    for i in 0..instances {
        let mat = random_matrix(&mut rng, 12, 8);
        let opt = exhaustive_optimum(&mat, 0.2);
        let cfg = SplitConfig {
            seed: i as u64,
            restarts: 8,
            ..SplitConfig::default()
        };
        let t = Instant::now();
        let (trace, _) = optimize_matrix(&mat, &cfg).map_err(|e| e.to_string())?;
        solver_time += t.elapsed().as_secs_f64();
        let d = trace.worst_dev();
        ensure(d >= opt - 1e-12, || {
            format!("instance {i}: {d} below optimum {opt}")
        })?;
        if (d - opt).abs() <= 1e-12 {
            hits += 1;
        }
    }
    let need = (instances * 9).div_ceil(10);
    ensure(hits >= need, || {
        format!("{hits}/{instances} at optimum, need {need}")
    })?;
    ensure(solver_time < 10.0, || {
        format!("solver took {solver_time:.2}s")
    })?;
    Ok(format!(
        "{hits}/{instances} at optimum, solver {solver_time:.3}s"
    ))
}

pub fn split_balance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let counts: Vec<Vec<u64>> = (0..40)
        .map(|_| (0..400).map(|_| rng.random_range(0..=6)).collect())
        .collect();
    let m = manifest_from_counts(&counts);
    let (state, split) = optimize_split(&m, &SplitConfig::default()).map_err(|e| e.to_string())?;
    let test = state.test_signers.len();
    ensure(test == 80, || format!("{test} test signers, expected 80"))?;
    let marked: BTreeSet<&SignerId> = split
        .samples()
        .iter()
        .filter(|s| s.subset == Subset::Test)
        .map(|s| &s.signer)
        .collect();
    ensure(marked.len() == 80, || {
        format!("{} signers marked test", marked.len())
    })?;
    ensure(state.worst_dev <= 0.05, || {
        format!("worst deviation {}", state.worst_dev)
    })?;
    Ok(format!(
        "fraction {test}/400, worst deviation {:.5}",
        state.worst_dev
    ))
}

pub fn split_descent_determinism(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for i in 0..instances {
        let mat = random_matrix(&mut rng, 12, 8);
        let cfg = SplitConfig {
            seed: i as u64,
            restarts: 1,
            ..SplitConfig::default()
        };
        let (a, ra) = optimize_matrix(&mat, &cfg).map_err(|e| e.to_string())?;
        let (b, rb) = optimize_matrix(&mat, &cfg).map_err(|e| e.to_string())?;
        ensure(a.in_test == b.in_test && ra == rb, || {
            format!("instance {i}: seed not reproducible")
        })?;
        ensure(a.history.windows(2).all(|w| w[1] < w[0]), || {
            format!("instance {i}: non-decreasing step {:?}", a.history)
        })?;
        let k = a.in_test.iter().filter(|&&t| t).count();
        ensure(k == test_signer_count(0.2, mat.signers().len()), || {
            format!("instance {i}: |T| = {k}")
        })?;
        let recomputed = worst_deviation(&mat, &a.in_test, 0.2);
        ensure((recomputed - a.worst_dev()).abs() < 1e-12, || {
            format!("instance {i}: reported deviation")
        })?;
    }
    Ok(format!("{instances} instances"))
}

// ---- grouping ----

pub fn grouping_components(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for i in 0..instances {
        let n = rng.random_range(2..=30);
        let glosses: Vec<GlossId> = (0..n).map(|g| GlossId::new(format!("g{g:02}"))).collect();
        let m = rng.random_range(0..=2 * n);
        let edges: Vec<(usize, usize)> = (0..m)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .filter(|(a, b)| a != b)
            .collect();
        let pairs: Vec<PairKey> = edges
            .iter()
            .map(|&(a, b)| PairKey::new(glosses[a].clone(), glosses[b].clone()).expect("distinct"))
            .collect();
        let gs = merge_matched(GroupingState::new(glosses.clone()), &pairs)
            .map_err(|e| e.to_string())?;
        let got: BTreeSet<BTreeSet<GlossId>> = gs.groups().into_iter().map(|g| g.members).collect();
        let want: BTreeSet<BTreeSet<GlossId>> = bfs_components(n, &edges)
            .into_iter()
            .map(|c| c.into_iter().map(|i| glosses[i].clone()).collect())
            .collect();
        ensure(got == want, || {
            format!("instance {i}: partition differs from BFS")
        })?;
        ensure(gs.num_groups() == want.len(), || {
            format!("instance {i}: group count")
        })?;
    }
    Ok(format!("{instances} pair sets"))
}

pub fn vote_patterns() -> Check {
    for mask in 0u32..32 {
        let verdicts: Vec<bool> = (0..5).map(|e| mask & (1 << e) != 0).collect();
        for cast in 1..=5 {
            let votes: Vec<VoteRecord> = verdicts[..cast]
                .iter()
                .enumerate()
                .map(|(e, &v)| VoteRecord {
                    a: GlossId::new("a"),
                    b: GlossId::new("b"),
                    expert: format!("e{e}"),
                    verdict: v,
                    timestamp: e as u64,
                })
                .collect();
            let out = aggregate_votes(&votes, 5, 3).map_err(|e| e.to_string())?;
            let got = match out[0].status {
                Adjudication::Matched => "matched",
                Adjudication::Rejected => "rejected",
                Adjudication::Pending => "pending",
            };
            let want = majority_rule(&verdicts[..cast], 5, 3);
            ensure(got == want, || {
                format!("pattern {mask:05b} after {cast} votes: {got} vs {want}")
            })?;
        }
    }
    Ok("32 patterns".into())
}

// ---- co-training ----

pub fn random_mixed_batch(rng: &mut ChaCha8Rng) -> (MixedBatch, Vec<LanguageTag>) {
    let n_lang = rng.random_range(1..=5);
    let langs: Vec<LanguageTag> = (0..n_lang).map(lang).collect();
    let n = rng.random_range(1..=64);
    let items = (0..n)
        .map(|i| BatchItem {
            features: Array2::from_elem((1, 1), i as f64),
            target: SoftLabel::hard(rng.random_range(0..7)),
            language: langs[rng.random_range(0..n_lang)].clone(),
            boundary: [0.0, 0.0],
        })
        .collect();
    (MixedBatch::new(items), langs)
}

pub fn gate(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (batch, langs) = random_mixed_batch(&mut rng);
        let subs = gate_split(&batch, &langs).map_err(|e| e.to_string())?;
        let mut positions: Vec<usize> = subs.values().flat_map(|s| s.positions.clone()).collect();
        positions.sort_unstable();
        ensure(positions == (0..batch.len()).collect::<Vec<_>>(), || {
            format!("batch {i}: positions")
        })?;
        for (l, s) in &subs {
            ensure(s.items.iter().all(|x| &x.language == l), || {
                format!("batch {i}: mixed sub-batch")
            })?;
        }
        let merged = merge_sub_batches(subs);
        let key = |b: &MixedBatch| {
            let mut v: Vec<(String, u64)> = b
                .items
                .iter()
                .map(|x| (x.language.to_string(), x.features[[0, 0]].to_bits()))
                .collect();
            v.sort();
            v
        };
        ensure(key(&merged) == key(&batch), || {
            format!("batch {i}: not a permutation")
        })?;
        let s: f64 = language_weights(&batch).values().sum();
        worst = worst.max((s - 1.0).abs());
        ensure((s - 1.0).abs() <= 1e-12, || {
            format!("batch {i}: weights sum to {s}")
        })?;
    }
    Ok(format!(
        "{instances} batches, max weight-sum error {worst:.1e}"
    ))
}

pub fn loss_identity(instances: u64) -> Check {
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let setup = tiny_setup(seed);
        let r = compute_loss(&setup.batch, &setup.model, &cfg).map_err(|e| e.to_string())?;
        let oracle = scalar_loss(&setup.model, &setup.batch, 0.1, 2.5);
        let err = (r.total - oracle.total).abs();
        worst = worst.max(err);
        ensure(err <= 1e-10, || {
            format!("seed {seed}: {} vs {}", r.total, oracle.total)
        })?;
    }
    let mut worst_plain: f64 = 0.0;
    for seed in 0..instances {
        let mut setup = tiny_setup(seed);
        let only = setup.batch.items[0].language.clone();
        setup.batch.items.retain(|x| x.language == only);
        setup.model.heads.retain(|l, _| *l == only);
        let co = compute_loss(&setup.batch, &setup.model, &cfg).map_err(|e| e.to_string())?;
        let plain = plain_loss_and_grad(
            &setup.batch,
            &setup.model.encoder,
            &setup.model.heads[&only],
            &setup.model.regression,
            &cfg,
            false,
        )
        .map_err(|e| e.to_string())?;
        let err = (co.total - plain.total).abs();
        worst_plain = worst_plain.max(err);
        ensure(err <= 1e-10, || {
            format!(
                "seed {seed}: single-language {} vs plain {}",
                co.total, plain.total
            )
        })?;
    }
    Ok(format!(
        "{instances} batches, max error {worst:.1e}, single-language vs plain {worst_plain:.1e}"
    ))
}

pub fn gradient_check(instances: u64) -> Check {
    let cfg = LossConfig::default();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let setup = tiny_setup(10_000 + i);
        let (_, grads) =
            loss_and_grad(&setup.batch, &setup.model, &cfg, true).map_err(|e| e.to_string())?;
        let flat = grads.flatten(&setup.model);
        let names: Vec<String> = setup
            .model
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (k, g) in flat.iter().enumerate() {
            for ((r, c), &analytic) in g.indexed_iter() {
                let eval = |delta: f64| {
                    let mut m = setup.model.clone();
                    m.named_params_mut()[k].1[[r, c]] += delta;
                    compute_loss(&setup.batch, &m, &cfg).map(|x| x.total)
                };
                let plus = eval(h).map_err(|e| e.to_string())?;
                let minus = eval(-h).map_err(|e| e.to_string())?;
                let numeric = (plus - minus) / (2.0 * h);
                let err = rel_err(analytic, numeric);
                worst = worst.max(err);
                ensure(err < 1e-4, || {
                    format!(
                        "instance {i} {}[{r},{c}]: analytic {analytic} numeric {numeric}",
                        names[k]
                    )
                })?;
            }
        }
    }
    Ok(format!(
        "{instances} instances, max relative error {worst:.1e}"
    ))
}

// ---- schedule ----

pub fn schedule_exactness() -> Check {
    let mut worst: f64 = 0.0;
    for spe in [1usize, 7, 100, 333] {
        let p = TrainPlan::baseline(spe);
        let lr = |s: usize| lr_at(&p, s).map_err(|e| e.to_string());
        let points = [
            (0, 8e-6),
            (p.warmup_end_step(), 4.8e-3),
            (p.cosine_end_step(), 8e-5),
            (p.total_steps() - 1, 8e-5),
        ];
        for (step, want) in points {
            let got = lr(step)?;
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-12, || {
                format!("{spe} steps/epoch, step {step}: {got} vs {want}")
            })?;
        }
        for s in p.cosine_end_step()..p.total_steps() {
            ensure(lr(s)? == 8e-5, || format!("tail not constant at step {s}"))?;
        }
        ensure(lr_at(&p, p.total_steps()).is_err(), || {
            "step past the end accepted".into()
        })?;
    }
    let half = rescale_plan(&TrainPlan::baseline(100), 0.5).map_err(|e| e.to_string())?;
    ensure(half.total_epochs == 100.0, || {
        format!("{} epochs", half.total_epochs)
    })?;
    ensure(half.cosine_epochs_one_based() == (11.0, 80.0), || {
        format!("cosine over {:?}", half.cosine_epochs_one_based())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(76);
    for _ in 0..1000 {
        let base = TrainPlan::baseline(rng.random_range(1..=500));
        let f: f64 = rng.random_range(0.05..4.0);
        let r = rescale_plan(&base, f).map_err(|e| e.to_string())?;
        let (a, b) = (base.total_steps() as i64, r.total_steps() as i64);
        ensure((a - b).abs() <= 1, || {
            format!("fraction {f}: {a} -> {b} steps")
        })?;
    }
    Ok(format!(
        "breakpoint error {worst:.1e}, rescale(0.5) = 100 epochs, cosine 11..80"
    ))
}

// ---- clips ----

fn random_record(rng: &mut ChaCha8Rng, max_len: usize) -> SampleRecord {
    let video_length = rng.random_range(1..=max_len);
    let sign_start = rng.random_range(0..video_length);
    let sign_end = rng.random_range(sign_start + 1..=video_length);
    SampleRecord {
        sample_id: SampleId::new("x"),
        signer: SignerId::new("s"),
        gloss: GlossId::new("g"),
        language: LanguageTag::new("l"),
        video_length,
        sign_start,
        sign_end,
        subset: Subset::Train,
    }
}

/// Every start whose span lies inside the sign extended by the slack on
/// both sides and inside the video, found by trying each position.
fn admissible_starts(rec: &SampleRecord, span: usize) -> BTreeSet<usize> {
    let lo = rec.sign_start as i64 - BOUNDARY_SLACK as i64;
    let hi = (rec.sign_end + BOUNDARY_SLACK) as i64;
    (0..rec.video_length)
        .filter(|&s| {
            let (a, b) = (s as i64, (s + span) as i64);
            a >= lo && b <= hi && b <= rec.video_length as i64
        })
        .collect()
}

pub fn clip_sampler(records: usize) -> Check {
    let spec = ClipSpec::default();
    let span = spec.span();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut long = 0;
    for i in 0..records {
        let rec = random_record(&mut rng, 300);
        let clip = sample_clip(&rec, &spec, &mut rng).map_err(|e| e.to_string())?;
        let idx = &clip.frame_indices;
        ensure(idx.len() == 32, || {
            format!("record {i}: {} indices", idx.len())
        })?;
        ensure(idx.iter().all(|&f| f < rec.video_length), || {
            format!("record {i}: out of bounds")
        })?;
        ensure(idx.windows(2).all(|w| w[0] <= w[1]), || {
            format!("record {i}: decreasing")
        })?;
        if rec.sign_len() >= span {
            long += 1;
            let ok = admissible_starts(&rec, span);
            ensure(ok.contains(&clip.clip_start), || {
                format!("record {i}: start {} outside window", clip.clip_start)
            })?;
        } else {
            ensure(clip.clip_start == rec.sign_start, || {
                format!("record {i}: short sign start")
            })?;
        }
    }
    // small videos: the sampler reaches exactly the admissible starts
    let mut small = 0;
    while small < 40 {
        let rec = random_record(&mut rng, 90);
        if rec.sign_len() < span {
            continue;
        }
        small += 1;
        let want = admissible_starts(&rec, span);
        let seen: BTreeSet<usize> = (0..2000)
            .map(|_| sample_clip(&rec, &spec, &mut rng).map(|c| c.clip_start))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(seen == want, || {
            format!("{rec:?}: starts {seen:?}, expected {want:?}")
        })?;
    }
    Ok(format!(
        "{records} records ({long} long signs), {small} windows enumerated"
    ))
}

pub fn boundary_target_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10_000 {
        let x: f64 = rng.random_range(-50.0..50.0);
        let y = squash(x);
        ensure(squash(-x) == -y, || format!("not odd at {x}"))?;
        ensure(y.abs() < 1.0 || x.abs() > 30.0, || {
            format!("unbounded at {x}")
        })?;
        ensure(y.abs() <= 1.0, || format!("outside [-1, 1] at {x}"))?;
    }
    let sigma = 1.0 / (1.0 + (-1.0f64).exp());
    ensure((squash(1.0) - (2.0 * sigma - 1.0)).abs() < 1e-9, || {
        "value at 1".into()
    })?;
    let spec = ClipSpec::default();
    for start in [0usize, 3, 40] {
        let rec = SampleRecord {
            video_length: start + spec.span() + 7,
            sign_start: start,
            sign_end: start + spec.span(),
            ..random_record(&mut rng, 10)
        };
        let clip = clip_at(&rec, start, &spec).map_err(|e| e.to_string())?;
        ensure(clip.boundary_targets == (0.0, 0.0), || {
            format!("aligned clip gives {:?}", clip.boundary_targets)
        })?;
        ensure(boundary_targets(&rec, &clip) == (0.0, 0.0), || {
            "aligned recomputation".into()
        })?;
    }
    for i in 0..10_000 {
        let rec = random_record(&mut rng, 300);
        let clip = sample_clip(&rec, &spec, &mut rng).map_err(|e| e.to_string())?;
        let (a, b) = clip.boundary_targets;
        ensure(a.abs() < 1.0 && b.abs() < 1.0, || {
            format!("record {i}: targets {a}, {b}")
        })?;
    }
    Ok("odd, bounded, aligned clips at (0, 0), squash(1) within 1e-9".into())
}

// ---- label map ----

pub fn label_map_oracle(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    for i in 0..instances {
        let source_classes = rng.random_range(1..=12);
        let n_labels = rng.random_range(1..=12);
        // few distinct names so ties on counts are common
        let mut labels: Vec<String> = (0..n_labels)
            .map(|t| format!("w{:02}", (t * 7 + 3) % 97))
            .collect();
        labels.sort_by_key(|_| rng.random::<u32>());
        let n = rng.random_range(0..=80);
        let pairs: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0..source_classes),
                    rng.random_range(0..n_labels),
                )
            })
            .collect();
        let rows = pairs
            .iter()
            .enumerate()
            .map(|(j, &(s, t))| PredictionRow {
                sample_id: SampleId::new(format!("m{j:03}")),
                predicted: Some(s),
                truth: t,
                language: LanguageTag::new("tgt"),
            })
            .collect();
        let preds = PredictionSet::new(rows).map_err(|e| e.to_string())?;
        let map = build_label_map(&preds, source_classes, &labels).map_err(|e| e.to_string())?;
        let want = brute_force_label_map(&pairs, source_classes, &labels);
        let got: std::collections::BTreeMap<usize, usize> =
            map.entries.iter().map(|(&s, e)| (s, e.target)).collect();
        ensure(got == want, || format!("table {i}: {got:?} vs {want:?}"))?;
        let unmapped: Vec<usize> = (0..source_classes)
            .filter(|c| !want.contains_key(c))
            .collect();
        ensure(map.unmapped == unmapped, || {
            format!("table {i}: unmapped classes")
        })?;
        ensure(map.entries.values().all(|e| e.target < n_labels), || {
            format!("table {i}: outside vocabulary")
        })?;
    }
    Ok(format!("{instances} tables"))
}
