//! Fixed-length clip sampling over frame indices, temporal augmentation of
//! the sampled chain, and boundary-regression targets.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{Error, Result};

/// Frames of slack allowed on each side of the sign when picking a clip
/// start for long signs.
pub const BOUNDARY_SLACK: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    #[default]
    RepeatLast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub length: usize,
    pub step: usize,
    pub pad_policy: PadPolicy,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            length: 32,
            step: 2,
            pad_policy: PadPolicy::RepeatLast,
        }
    }
}

impl ClipSpec {
    /// Frames covered by the chain: `(length - 1) * step + 1`.
    pub fn span(&self) -> usize {
        (self.length - 1) * self.step + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSample {
    pub frame_indices: Vec<usize>,
    pub clip_start: usize,
    /// Exclusive end of the covered span, `clip_start + span`. May exceed the
    /// video length for padded clips.
    pub clip_end: usize,
    pub boundary_targets: (f64, f64),
}

/// `2 * sigmoid(x) - 1`, written as `tanh(x / 2)` so it is exactly odd.
pub fn squash(x: f64) -> f64 {
    (0.5 * x).tanh()
}

/// Inclusive range of admissible clip starts for a sign at least one span
/// long, or `None` for shorter signs (which start at the sign start).
pub fn start_window(rec: &SampleRecord, spec: &ClipSpec) -> Option<(usize, usize)> {
    let span = spec.span();
    if rec.sign_len() < span {
        return None;
    }
    let lo = rec.sign_start.saturating_sub(BOUNDARY_SLACK);
    let hi = (rec.sign_end + BOUNDARY_SLACK).min(rec.video_length) - span;
    Some((lo, hi))
}

/// Frame indices of the clip starting at `start`, capped at the last frame.
pub fn clip_indices(start: usize, video_length: usize, spec: &ClipSpec) -> Vec<usize> {
    (0..spec.length)
        .map(|i| (start + i * spec.step).min(video_length - 1))
        .collect()
}

/// Builds the clip at a given start, with its boundary targets.
pub fn clip_at(rec: &SampleRecord, start: usize, spec: &ClipSpec) -> Result<ClipSample> {
    if rec.video_length == 0 {
        return Err(Error::InvalidArgument(format!(
            "sample `{}` has no frames",
            rec.sample_id
        )));
    }
    let mut clip = ClipSample {
        frame_indices: clip_indices(start, rec.video_length, spec),
        clip_start: start,
        clip_end: start + spec.span(),
        boundary_targets: (0.0, 0.0),
    };
    clip.boundary_targets = boundary_targets(rec, &clip);
    Ok(clip)
}

/// Samples a clip: uniformly inside the slack-extended sign window when the
/// sign covers a full span, otherwise from the sign start with tail padding.
pub fn sample_clip(rec: &SampleRecord, spec: &ClipSpec, rng: &mut impl Rng) -> Result<ClipSample> {
    if rec.video_length == 0 {
        return Err(Error::InvalidArgument(format!(
            "sample `{}` has no frames",
            rec.sample_id
        )));
    }
    let start = match start_window(rec, spec) {
        Some((lo, hi)) => rng.random_range(lo..=hi),
        None => rec.sign_start,
    };
    clip_at(rec, start, spec)
}

/// Sign boundaries relative to the clip, in units of the clip span, squashed
/// into `(-1, 1)`. The start is measured from the clip start and the end from
/// the clip end, so a sign exactly covering the clip maps to `(0, 0)`.
pub fn boundary_targets(rec: &SampleRecord, clip: &ClipSample) -> (f64, f64) {
    let span = (clip.clip_end - clip.clip_start) as f64;
    let raw_start = (rec.sign_start as f64 - clip.clip_start as f64) / span;
    let raw_end = (rec.sign_end as f64 - clip.clip_end as f64) / span;
    (squash(raw_start), squash(raw_end))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_speed: f64,
    pub p_drop: f64,
    pub drop_frac: f64,
    pub p_truncate: f64,
    pub truncate_frac: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_speed: 0.25,
            p_drop: 0.5,
            drop_frac: 0.10,
            p_truncate: 0.25,
            truncate_frac: 0.30,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            p_speed: 0.0,
            p_drop: 0.0,
            p_truncate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_speed * 2.0, self.p_drop, self.p_truncate];
        let fracs = [self.drop_frac, self.truncate_frac];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "augmentation probabilities must lie in [0, 1] (speed: [0, 0.5])".into(),
            ));
        }
        if fracs.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::InvalidArgument(
                "augmentation fractions must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedChange {
    SpeedUp,
    SlowDown,
}

/// What [`apply_temporal_augment_traced`] did to a chain.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentTrace {
    pub speed: Option<SpeedChange>,
    pub dropped: usize,
    pub truncated: usize,
}

/// Doubles playback speed: every second index, tail padded with the last.
pub fn speed_up(indices: &[usize]) -> Vec<usize> {
    let n = indices.len();
    let mut out: Vec<usize> = indices.iter().step_by(2).copied().collect();
    let last = *out.last().unwrap_or(&0);
    out.resize(n, last);
    out
}

/// Halves playback speed: each index of the first half repeated twice.
pub fn slow_down(indices: &[usize]) -> Vec<usize> {
    let n = indices.len();
    indices.iter().flat_map(|&i| [i, i]).take(n).collect()
}

/// Re-extends `chain` to `len` by duplicating randomly chosen entries in
/// place, preserving order.
pub fn stretch_random(mut chain: Vec<usize>, len: usize, rng: &mut impl Rng) -> Vec<usize> {
    if chain.is_empty() {
        return chain;
    }
    while chain.len() < len {
        let i = rng.random_range(0..chain.len());
        chain.insert(i, chain[i]);
    }
    chain
}

/// Removes `count` random positions.
pub fn drop_positions(chain: &[usize], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let count = count.min(chain.len().saturating_sub(1));
    let mut gone = vec![false; chain.len()];
    for i in index::sample(rng, chain.len(), count).iter() {
        gone[i] = true;
    }
    chain
        .iter()
        .zip(gone)
        .filter(|(_, g)| !g)
        .map(|(&i, _)| i)
        .collect()
}

fn frac_count(frac: f64, n: usize) -> usize {
    (frac * n as f64).round() as usize
}

pub fn apply_temporal_augment(
    indices: &[usize],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Vec<usize> {
    apply_temporal_augment_traced(indices, cfg, rng).0
}

/// Speed change, then random drop, then truncation; the output always has
/// the input's length.
pub fn apply_temporal_augment_traced(
    indices: &[usize],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> (Vec<usize>, AugmentTrace) {
    let n = indices.len();
    let mut trace = AugmentTrace::default();
    let mut chain = indices.to_vec();
    if n == 0 {
        return (chain, trace);
    }

    let u: f64 = rng.random();
    if u < cfg.p_speed {
        chain = speed_up(&chain);
        trace.speed = Some(SpeedChange::SpeedUp);
    } else if u < 2.0 * cfg.p_speed {
        chain = slow_down(&chain);
        trace.speed = Some(SpeedChange::SlowDown);
    }

    if rng.random::<f64>() < cfg.p_drop {
        let k = frac_count(cfg.drop_frac, n);
        chain = drop_positions(&chain, k, rng);
        trace.dropped = n - chain.len();
        chain = stretch_random(chain, n, rng);
    }

    if rng.random::<f64>() < cfg.p_truncate {
        let cut = frac_count(cfg.truncate_frac, n).min(n - 1);
        let offset = rng.random_range(0..=cut);
        chain = chain[offset..offset + n - cut].to_vec();
        trace.truncated = cut;
        chain = stretch_random(chain, n, rng);
    }

    (chain, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{GlossId, LanguageTag, SampleId, SignerId, Subset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(video: usize, start: usize, end: usize) -> SampleRecord {
        SampleRecord {
            sample_id: SampleId::new("x"),
            signer: SignerId::new("s"),
            gloss: GlossId::new("g"),
            language: LanguageTag::new("l"),
            video_length: video,
            sign_start: start,
            sign_end: end,
            subset: Subset::Unassigned,
        }
    }

    #[test]
    fn default_span_is_63() {
        assert_eq!(ClipSpec::default().span(), 63);
    }

    #[test]
    fn short_sign_starts_at_sign_and_pads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = sample_clip(&rec(40, 10, 40), &ClipSpec::default(), &mut rng).unwrap();
        assert_eq!(c.clip_start, 10);
        let expect: Vec<usize> = (0..32).map(|i| (10 + 2 * i).min(39)).collect();
        assert_eq!(c.frame_indices, expect);
        assert_eq!(
            &c.frame_indices[..15],
            &[10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30, 32, 34, 36, 38]
        );
        assert!(c.frame_indices[15..].iter().all(|&i| i == 39));
    }

    #[test]
    fn exact_span_has_unique_start() {
        let r = rec(63, 0, 63);
        assert_eq!(start_window(&r, &ClipSpec::default()), Some((0, 0)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = sample_clip(&r, &ClipSpec::default(), &mut rng).unwrap();
        assert_eq!((c.clip_start, c.clip_end), (0, 63));
        assert_eq!(c.boundary_targets, (0.0, 0.0));
    }

    #[test]
    fn long_sign_window() {
        assert_eq!(
            start_window(&rec(120, 0, 100), &ClipSpec::default()),
            Some((0, 42))
        );
        assert_eq!(
            start_window(&rec(200, 20, 100), &ClipSpec::default()),
            Some((15, 42))
        );
    }

    #[test]
    fn squash_values() {
        assert!((squash(1.0) - 0.462_117_157_260_009_8).abs() < 1e-12);
        let two_sigma = 2.0 / (1.0 + (-1.0f64).exp()) - 1.0;
        assert!((squash(1.0) - two_sigma).abs() < 1e-15);
        assert_eq!(squash(0.0), 0.0);
    }

    #[test]
    fn disabled_augment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<usize> = (0..32).map(|i| 2 * i).collect();
        for _ in 0..20 {
            assert_eq!(
                apply_temporal_augment(&x, &AugmentConfig::disabled(), &mut rng),
                x
            );
        }
    }

    #[test]
    fn drop_removes_three_of_32() {
        let cfg = AugmentConfig {
            p_drop: 1.0,
            ..AugmentConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<usize> = (0..32).collect();
        let (out, trace) = apply_temporal_augment_traced(&x, &cfg, &mut rng);
        assert_eq!(trace.dropped, 3);
        assert_eq!(out.len(), 32);
        let distinct: std::collections::BTreeSet<_> = out.iter().collect();
        assert_eq!(distinct.len(), 29);
    }

    #[test]
    fn truncate_cuts_ten_of_32() {
        let cfg = AugmentConfig {
            p_truncate: 1.0,
            ..AugmentConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<usize> = (0..32).collect();
        let (out, trace) = apply_temporal_augment_traced(&x, &cfg, &mut rng);
        assert_eq!(trace.truncated, 10);
        let distinct: std::collections::BTreeSet<_> = out.iter().collect();
        assert_eq!(distinct.len(), 22);
    }

    #[test]
    fn speed_changes() {
        let x: Vec<usize> = (0..8).collect();
        assert_eq!(speed_up(&x), vec![0, 2, 4, 6, 6, 6, 6, 6]);
        assert_eq!(slow_down(&x), vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }
}
