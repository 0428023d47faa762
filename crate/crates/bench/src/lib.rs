//! Benchmark fixtures.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signmix_core::cotrain::{BatchItem, CoTrainModel, MixedBatch, MlpEncoder, SoftLabel};
use signmix_core::split::RatioMatrix;
use signmix_core::{GlossId, LanguageTag, SampleId, SampleRecord, SignerId, Subset};

/// Per-gloss signer counts with roughly a third of the cells empty.
pub fn ratio_matrix(signers: usize, glosses: usize, seed: u64) -> RatioMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = (0..glosses)
        .map(|_| {
            let mut row: Vec<u64> = (0..signers)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        0
                    } else {
                        rng.random_range(1..=6)
                    }
                })
                .collect();
            row[rng.random_range(0..signers)] += 1;
            row
        })
        .collect();
    RatioMatrix::from_counts(
        (0..glosses)
            .map(|i| GlossId::new(format!("g{i:04}")))
            .collect(),
        (0..signers)
            .map(|i| SignerId::new(format!("s{i:04}")))
            .collect(),
        counts,
    )
    .expect("valid counts")
}

pub struct TrainingFixture {
    pub model: CoTrainModel<MlpEncoder>,
    pub batch: MixedBatch,
}

/// A model and a mixed-language batch with soft targets.
pub fn training_fixture(
    batch: usize,
    frames: usize,
    dim: usize,
    languages: usize,
    seed: u64,
) -> TrainingFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lang = |l: usize| LanguageTag::new(format!("lang{l}"));
    let classes: BTreeMap<LanguageTag, usize> = (0..languages).map(|l| (lang(l), 50)).collect();
    let model = CoTrainModel::new(MlpEncoder::new(dim, 64, 64, &mut rng), &classes, &mut rng);
    let items = (0..batch)
        .map(|i| {
            let l = i % languages;
            let a = SoftLabel::hard(rng.random_range(0..50));
            let b = SoftLabel::hard(rng.random_range(0..50));
            BatchItem {
                features: Array2::from_shape_fn((frames, dim), |_| rng.random_range(-1.0..1.0)),
                target: a.mix(&b, rng.random()),
                language: lang(l),
                boundary: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            }
        })
        .collect();
    TrainingFixture {
        model,
        batch: MixedBatch::new(items),
    }
}

/// Videos of 40 to 300 frames with a sign somewhere inside.
pub fn videos(n: usize, seed: u64) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(40..=300);
            let start = rng.random_range(0..len / 3);
            let end = rng.random_range(start + 8..=len);
            SampleRecord {
                sample_id: SampleId::new(format!("v{i}")),
                signer: SignerId::new("s0"),
                gloss: GlossId::new("g0"),
                language: LanguageTag::new("lang0"),
                video_length: len,
                sign_start: start,
                sign_end: end,
                subset: Subset::Unassigned,
            }
        })
        .collect()
}
