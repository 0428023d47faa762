use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use signmix_core::clip::{
    apply_temporal_augment_traced, sample_clip, squash, AugmentConfig, ClipSpec,
};
use signmix_core::{GlossId, LanguageTag, SampleId, SampleRecord, SignerId, Subset};

mod common;
use common::checks;

#[test]
fn sampler_over_random_records() {
    checks::clip_sampler(10_000).unwrap();
}

#[test]
fn boundary_targets_properties() {
    checks::boundary_target_properties().unwrap();
}

fn record(video_length: usize, sign_start: usize, sign_end: usize) -> SampleRecord {
    SampleRecord {
        sample_id: SampleId::new("x"),
        signer: SignerId::new("s"),
        gloss: GlossId::new("g"),
        language: LanguageTag::new("l"),
        video_length,
        sign_start,
        sign_end,
        subset: Subset::Test,
    }
}

proptest! {
    #[test]
    fn squash_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        if a < b {
            prop_assert!(squash(a) <= squash(b));
        }
    }

    #[test]
    fn augmented_chain_keeps_length_and_order(
        start in 0usize..50,
        step in 1usize..4,
        seed in any::<u64>(),
    ) {
        let chain: Vec<usize> = (0..32).map(|i| start + i * step).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, trace) = apply_temporal_augment_traced(&chain, &AugmentConfig::default(), &mut rng);
        prop_assert_eq!(out.len(), 32);
        prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        let allowed: BTreeSet<usize> = chain.iter().copied().collect();
        prop_assert!(out.iter().all(|i| allowed.contains(i)));
        prop_assert!(trace.dropped == 0 || trace.dropped == 3);
        prop_assert!(trace.truncated == 0 || trace.truncated == 10);
    }

    #[test]
    fn sampling_is_reproducible(len in 1usize..200, seed in any::<u64>()) {
        let rec = record(len, 0, len);
        let a = sample_clip(&rec, &ClipSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_clip(&rec, &ClipSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn empty_video_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_clip(&record(0, 0, 0), &ClipSpec::default(), &mut rng).is_err());
}

#[test]
fn one_frame_video_repeats_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = sample_clip(&record(1, 0, 1), &ClipSpec::default(), &mut rng).unwrap();
    assert_eq!(c.frame_indices, vec![0; 32]);
}
