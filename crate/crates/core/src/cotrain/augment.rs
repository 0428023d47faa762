//! Inter-sample augmentation inside a single-language sub-batch. Item `i`
//! is paired with item `n - 1 - i`.

use ndarray::s;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::batch::BatchItem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    Mixup,
    Cutmix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub alpha: f64,
    /// Chance that a sub-batch is mixed at all.
    pub prob: f64,
    /// Chance of CutMix rather than Mixup when mixing.
    pub cutmix_prob: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            prob: 0.5,
            cutmix_prob: 0.5,
        }
    }
}

impl MixConfig {
    pub fn disabled() -> Self {
        Self {
            prob: 0.0,
            ..Self::default()
        }
    }
}

/// Frames replaced by the partner's under CutMix for a given `lambda`.
pub fn cutmix_span(lambda: f64, frames: usize) -> usize {
    (((1.0 - lambda) * frames as f64).round() as usize).min(frames)
}

/// Mixes every item with its partner using a fixed `lambda`. For CutMix the
/// partner's frames `[cut_start, cut_start + span)` replace the item's and the
/// label weight is the share of frames kept.
pub fn mix_with_lambda(
    sub: &[BatchItem],
    mode: MixMode,
    lambda: f64,
    cut_start: usize,
) -> Vec<BatchItem> {
    let n = sub.len();
    if n < 2 {
        return sub.to_vec();
    }
    (0..n)
        .map(|i| {
            let own = &sub[i];
            let other = &sub[n - 1 - i];
            match mode {
                MixMode::Mixup => BatchItem {
                    features: &own.features * lambda + &other.features * (1.0 - lambda),
                    target: own.target.mix(&other.target, lambda),
                    language: own.language.clone(),
                    boundary: mix_pair(own.boundary, other.boundary, lambda),
                },
                MixMode::Cutmix => {
                    let frames = own.features.nrows();
                    let span = cutmix_span(lambda, frames);
                    let start = cut_start.min(frames - span);
                    let mut features = own.features.clone();
                    features
                        .slice_mut(s![start..start + span, ..])
                        .assign(&other.features.slice(s![start..start + span, ..]));
                    let keep = 1.0 - span as f64 / frames as f64;
                    BatchItem {
                        features,
                        target: own.target.mix(&other.target, keep),
                        language: own.language.clone(),
                        boundary: mix_pair(own.boundary, other.boundary, keep),
                    }
                }
            }
        })
        .collect()
}

fn mix_pair(a: [f64; 2], b: [f64; 2], lambda: f64) -> [f64; 2] {
    [
        lambda * a[0] + (1.0 - lambda) * b[0],
        lambda * a[1] + (1.0 - lambda) * b[1],
    ]
}

/// Draws `lambda ~ Beta(alpha, alpha)` (and a cut position for CutMix) and
/// mixes the sub-batch. Sub-batches of one item come back unchanged.
pub fn intersample_augment(
    sub: &[BatchItem],
    mode: MixMode,
    alpha: f64,
    rng: &mut impl Rng,
) -> Vec<BatchItem> {
    if sub.len() < 2 {
        return sub.to_vec();
    }
    let lambda = Beta::new(alpha, alpha)
        .expect("alpha must be positive")
        .sample(rng);
    let frames = sub[0].features.nrows();
    let span = cutmix_span(lambda, frames);
    let cut_start = match mode {
        MixMode::Mixup => 0,
        MixMode::Cutmix => rng.random_range(0..=frames - span),
    };
    mix_with_lambda(sub, mode, lambda, cut_start)
}

/// Applies [`intersample_augment`] with the configured probabilities.
pub fn maybe_mix(sub: &[BatchItem], cfg: &MixConfig, rng: &mut impl Rng) -> Vec<BatchItem> {
    if sub.len() < 2 || cfg.prob <= 0.0 || rng.random::<f64>() >= cfg.prob {
        return sub.to_vec();
    }
    let mode = if rng.random::<f64>() < cfg.cutmix_prob {
        MixMode::Cutmix
    } else {
        MixMode::Mixup
    };
    intersample_augment(sub, mode, cfg.alpha, rng)
}
