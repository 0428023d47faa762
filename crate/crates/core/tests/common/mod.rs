//! Reference implementations used as test oracles.
#![allow(dead_code)]

pub mod checks;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signmix_core::cotrain::{
    BatchItem, CoTrainModel, LinearHead, MixedBatch, MlpEncoder, SoftLabel,
};
use signmix_core::split::{test_signer_count, RatioMatrix};
use signmix_core::{
    DatasetManifest, GlossId, GlossLabel, LanguageTag, SampleId, SampleRecord, SignerId, Subset,
};

// ---- split ----

pub fn random_matrix(rng: &mut ChaCha8Rng, max_signers: usize, max_glosses: usize) -> RatioMatrix {
    let n = rng.random_range(5..=max_signers);
    let g = rng.random_range(1..=max_glosses);
    let mut counts = vec![vec![0u64; n]; g];
    for row in counts.iter_mut() {
        for c in row.iter_mut() {
            *c = if rng.random_bool(0.3) {
                0
            } else {
                rng.random_range(1..=6)
            };
        }
        if row.iter().all(|&c| c == 0) {
            row[rng.random_range(0..n)] = 1;
        }
    }
    RatioMatrix::from_counts(
        (0..g).map(|i| GlossId::new(format!("g{i:02}"))).collect(),
        (0..n).map(|i| SignerId::new(format!("s{i:03}"))).collect(),
        counts,
    )
    .unwrap()
}

/// Exhaustive optimum of the worst per-gloss test-share deviation over all test sets of size `k`.
pub fn exhaustive_optimum(mat: &RatioMatrix, p: f64) -> f64 {
    let n = mat.signers().len();
    let k = test_signer_count(p, n);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let mut worst: f64 = 0.0;
        for g in 0..mat.glosses().len() {
            let mut t = 0u64;
            for s in 0..n {
                if mask & (1 << s) != 0 {
                    t += mat.count(g, s);
                }
            }
            worst = worst.max((t as f64 / mat.total(g) as f64 - p).abs());
        }
        best = best.min(worst);
    }
    best
}

/// the worst per-gloss test-share deviation recomputed from scratch for a test mask.
pub fn worst_deviation(mat: &RatioMatrix, in_test: &[bool], p: f64) -> f64 {
    (0..mat.glosses().len())
        .map(|g| {
            let d: f64 = (0..mat.signers().len())
                .filter(|&s| in_test[s])
                .map(|s| mat.ratio(g, s))
                .sum();
            (d - p).abs()
        })
        .fold(0.0, f64::max)
}

pub fn manifest_from_counts(counts: &[Vec<u64>]) -> DatasetManifest {
    let lang = LanguageTag::new("syn");
    let n = counts[0].len();
    let glosses = (0..counts.len())
        .map(|g| GlossLabel {
            id: GlossId::new(format!("g{g:02}")),
            language: lang.clone(),
        })
        .collect();
    let signers = (0..n).map(|s| SignerId::new(format!("s{s:03}"))).collect();
    let mut samples = Vec::new();
    for (g, row) in counts.iter().enumerate() {
        for (s, &c) in row.iter().enumerate() {
            for k in 0..c {
                samples.push(SampleRecord {
                    sample_id: SampleId::new(format!("x{g:02}-{s:03}-{k}")),
                    signer: SignerId::new(format!("s{s:03}")),
                    gloss: GlossId::new(format!("g{g:02}")),
                    language: lang.clone(),
                    video_length: 80,
                    sign_start: 5,
                    sign_end: 70,
                    subset: Subset::Unassigned,
                });
            }
        }
    }
    DatasetManifest::new(lang, glosses, vec![], signers, samples).unwrap()
}

// ---- grouping ----

/// Connected components of the graph on `0..n` with the given edges, each
/// as a sorted member list; components sorted by smallest member.
pub fn bfs_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Matched / rejected / pending by direct counting.
pub fn majority_rule(verdicts: &[bool], quorum: usize, majority: usize) -> &'static str {
    if verdicts.len() < quorum {
        "pending"
    } else if verdicts.iter().filter(|&&v| v).count() >= majority {
        "matched"
    } else {
        "rejected"
    }
}

// ---- co-training ----

pub fn lang(i: usize) -> LanguageTag {
    LanguageTag::new(format!("l{i}"))
}

pub struct TinySetup {
    pub model: CoTrainModel<MlpEncoder>,
    pub batch: MixedBatch,
}

/// Random tiny model and batch: 1-3 languages, soft or hard targets, random
/// frame counts.
pub fn tiny_setup(seed: u64) -> TinySetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=4);
    let hidden = rng.random_range(2..=5);
    let embed = rng.random_range(2..=5);
    let n_lang = rng.random_range(1..=3);
    let classes: BTreeMap<LanguageTag, usize> = (0..n_lang)
        .map(|l| (lang(l), rng.random_range(2..=5)))
        .collect();
    let enc = MlpEncoder::new(d, hidden, embed, &mut rng);
    let mut model = CoTrainModel::new(enc, &classes, &mut rng);
    // non-zero biases so their gradients are exercised
    for (_, p) in model.named_params_mut() {
        if p.nrows() == 1 {
            p.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
    let n = rng.random_range(1..=6);
    let items = (0..n)
        .map(|_| {
            let l = rng.random_range(0..n_lang);
            let c = classes[&lang(l)];
            let frames = rng.random_range(1..=5);
            let a = rng.random_range(0..c);
            let target = if rng.random_bool(0.5) {
                SoftLabel::hard(a)
            } else {
                SoftLabel::hard(a).mix(&SoftLabel::hard(rng.random_range(0..c)), rng.random())
            };
            BatchItem {
                features: Array2::from_shape_fn((frames, d), |_| rng.random_range(-1.5..1.5)),
                target,
                language: lang(l),
                boundary: [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)],
            }
        })
        .collect();
    TinySetup {
        model,
        batch: MixedBatch::new(items),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(w: &Array2<f64>, b: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|i| b[[0, i]] + (0..w.ncols()).map(|j| w[[i, j]] * x[j]).sum::<f64>())
        .collect()
}

pub fn scalar_embedding(enc: &MlpEncoder, x: &Array2<f64>) -> Vec<f64> {
    let mut acc = vec![0.0; enc.w2.nrows()];
    for t in 0..x.nrows() {
        let frame: Vec<f64> = x.row(t).to_vec();
        let h: Vec<f64> = affine(&enc.w1, &enc.b1, &frame)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let z: Vec<f64> = affine(&enc.w2, &enc.b2, &h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        for (a, v) in acc.iter_mut().zip(z) {
            *a += v;
        }
    }
    acc.iter().map(|v| v / x.nrows() as f64).collect()
}

pub struct ScalarLoss {
    pub per_language: BTreeMap<LanguageTag, f64>,
    pub weights: BTreeMap<LanguageTag, f64>,
    pub regression: f64,
    pub total: f64,
}

/// Label-smoothed cross-entropy per language, averaged within the
/// language and weighted by its batch share, plus `reg_weight` times the
/// squared error of `2 sigmoid(x) - 1` boundary predictions.
pub fn scalar_loss(
    model: &CoTrainModel<MlpEncoder>,
    batch: &MixedBatch,
    eps: f64,
    reg_weight: f64,
) -> ScalarLoss {
    let mut sums: BTreeMap<LanguageTag, (f64, usize)> = BTreeMap::new();
    let mut reg = 0.0;
    for item in &batch.items {
        let emb = scalar_embedding(&model.encoder, &item.features);
        let head: &LinearHead = &model.heads[&item.language];
        let logits = affine(&head.weight, &head.bias, &emb);
        let c = logits.len();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let mut loss = 0.0;
        for (k, l) in logits.iter().enumerate() {
            let q = (1.0 - eps) * item.target.weight_of(k) + eps / c as f64;
            let logp = l - max - z.ln();
            loss -= q * logp;
        }
        let e = sums.entry(item.language.clone()).or_insert((0.0, 0));
        e.0 += loss;
        e.1 += 1;
        let raw = affine(&model.regression.weight, &model.regression.bias, &emb);
        for (r, b) in raw.iter().zip(item.boundary) {
            let y = 2.0 * sigmoid(*r) - 1.0;
            reg += (y - b).powi(2);
        }
    }
    let n = batch.len() as f64;
    let regression = reg / (2.0 * n);
    let per_language: BTreeMap<LanguageTag, f64> = sums
        .iter()
        .map(|(l, (s, c))| (l.clone(), s / *c as f64))
        .collect();
    let weights: BTreeMap<LanguageTag, f64> = sums
        .iter()
        .map(|(l, (_, c))| (l.clone(), *c as f64 / n))
        .collect();
    let total = per_language
        .iter()
        .map(|(l, v)| weights[l] * v)
        .sum::<f64>()
        + reg_weight * regression;
    ScalarLoss {
        per_language,
        weights,
        regression,
        total,
    }
}

/// `|a - b| / max(|a|, |b|)`, or the absolute difference when both are tiny.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

// ---- evaluation ----

/// Most frequent target per source class, ties to the smallest label
/// string, by nested loops over all candidates.
pub fn brute_force_label_map(
    pairs: &[(usize, usize)],
    source_classes: usize,
    labels: &[String],
) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for s in 0..source_classes {
        let mut best: Option<(usize, usize)> = None;
        for t in 0..labels.len() {
            let count = pairs.iter().filter(|&&(p, q)| p == s && q == t).count();
            if count == 0 {
                continue;
            }
            best = match best {
                None => Some((t, count)),
                Some((bt, bc)) => {
                    if count > bc || (count == bc && labels[t] < labels[bt]) {
                        Some((t, count))
                    } else {
                        Some((bt, bc))
                    }
                }
            };
        }
        if let Some((t, _)) = best {
            out.insert(s, t);
        }
    }
    out
}

/// Set of distinct values in a slice.
pub fn distinct<T: Ord + Clone>(xs: &[T]) -> BTreeSet<T> {
    xs.iter().cloned().collect()
}
