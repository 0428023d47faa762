//! Synthetic multilingual sign data. Every class is a smooth prototype
//! trajectory through feature space; part of each non-source language reuses
//! perturbed prototypes of the source language (`languages[0]`). A sample is
//! its class prototype played over the annotated sign, plus a per-signer
//! offset and frame noise, with rest features outside the sign.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clip::{sample_clip, ClipSpec};
use crate::dataset::{
    DatasetManifest, GlossId, GlossLabel, GroupId, GroupLabel, LanguageTag, SampleId, SampleRecord,
    SignerId, Subset,
};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::split::derive_seed;

/// Frames in a class prototype trajectory.
pub const PROTOTYPE_FRAMES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_languages: usize,
    pub classes_per_language: usize,
    /// Share of each non-source language's classes built from a source
    /// prototype.
    pub shared_prototype_fraction: f64,
    pub samples_per_class: usize,
    /// Signers per language.
    pub signers: usize,
    pub feature_dim: usize,
    /// Dimension of the space prototypes move in. It is embedded into the
    /// feature space by one random linear map shared by all languages.
    pub latent_dim: usize,
    pub noise_scale: f64,
    /// Standard deviation of the per-signer feature offset.
    pub signer_scale: f64,
    /// Standard deviation of the perturbation applied to shared prototypes.
    pub share_perturbation: f64,
    /// Pairs of near-duplicate classes planted in every language. Classes
    /// `2k` and `2k + 1` form pair `k` and share a group in the manifest.
    pub confusable_pairs: usize,
    /// Standard deviation of the difference between the two classes of a
    /// planted pair.
    pub confusable_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_languages: 3,
            classes_per_language: 20,
            shared_prototype_fraction: 0.5,
            samples_per_class: 20,
            signers: 10,
            feature_dim: 64,
            latent_dim: 4,
            noise_scale: 2.0,
            signer_scale: 1.5,
            share_perturbation: 0.3,
            confusable_pairs: 0,
            confusable_scale: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_languages", self.n_languages),
            ("classes_per_language", self.classes_per_language),
            ("samples_per_class", self.samples_per_class),
            ("signers", self.signers),
            ("feature_dim", self.feature_dim),
            ("latent_dim", self.latent_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.shared_prototype_fraction) {
            return Err(Error::InvalidArgument(
                "shared_prototype_fraction must lie in [0, 1]".into(),
            ));
        }
        let scales = [
            self.noise_scale,
            self.signer_scale,
            self.share_perturbation,
            self.confusable_scale,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument(
                "scales must be finite and non-negative".into(),
            ));
        }
        if 2 * self.confusable_pairs > self.classes_per_language {
            return Err(Error::InvalidArgument(
                "confusable pairs need two classes each".into(),
            ));
        }
        Ok(())
    }

    pub fn language(&self, l: usize) -> LanguageTag {
        LanguageTag::new(format!("lang{l}"))
    }

    /// Number of classes of a non-source language built from source
    /// prototypes.
    pub fn shared_classes(&self) -> usize {
        (self.shared_prototype_fraction * self.classes_per_language as f64).round() as usize
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub manifests: Vec<DatasetManifest>,
    pub features: FeatureStore,
    /// `shared[l][c]`: source class whose prototype class `c` of language
    /// `l` reuses.
    pub shared: Vec<Vec<Option<usize>>>,
}

fn normal_array(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Smooth random trajectory: a position plus two slow oscillations.
fn prototype(dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    let base = normal_array(3, dim, 1.0, rng);
    Array2::from_shape_fn((PROTOTYPE_FRAMES, dim), |(t, j)| {
        let phase = t as f64 / (PROTOTYPE_FRAMES - 1) as f64;
        base[[0, j]] + base[[1, j]] * (PI * phase).cos() + base[[2, j]] * (2.0 * PI * phase).sin()
    })
}

/// Prototype value at `phase` in `[0, 1]`, linearly interpolated.
fn sample_trajectory(proto: &Array2<f64>, phase: f64) -> Array1<f64> {
    let x = phase.clamp(0.0, 1.0) * (proto.nrows() - 1) as f64;
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(proto.nrows() - 1);
    let w = x - lo as f64;
    &proto.row(lo) * (1.0 - w) + &proto.row(hi) * w
}

struct LanguagePrototypes {
    protos: Vec<Array2<f64>>,
    shared: Vec<Option<usize>>,
}

fn build_prototypes(
    spec: &SyntheticSpec,
    source: Option<&[Array2<f64>]>,
    rng: &mut impl Rng,
) -> LanguagePrototypes {
    let c = spec.classes_per_language;
    let d = spec.latent_dim;
    let mut protos: Vec<Array2<f64>> = (0..c).map(|_| prototype(d, rng)).collect();
    let mut shared = vec![None; c];
    if let Some(src) = source {
        let k = spec.shared_classes();
        let picks = index::sample(rng, c, k).into_vec();
        let targets = index::sample(rng, c, k).into_vec();
        for (&t, &s) in targets.iter().zip(&picks) {
            protos[t] = &src[s] + &normal_array(PROTOTYPE_FRAMES, d, spec.share_perturbation, rng);
            shared[t] = Some(s);
        }
    }
    for pair in 0..spec.confusable_pairs {
        let (a, b) = (2 * pair, 2 * pair + 1);
        protos[b] = &protos[a] + &normal_array(PROTOTYPE_FRAMES, d, spec.confusable_scale, rng);
    }
    LanguagePrototypes { protos, shared }
}

/// Generates one manifest per language (subsets unassigned) and the clip
/// features of every sample.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let clip = ClipSpec::default();
    let mut store = FeatureStore::new(clip.length, spec.feature_dim);
    let mut manifests = Vec::with_capacity(spec.n_languages);
    let mut shared = Vec::with_capacity(spec.n_languages);
    let mut source_protos: Vec<Array2<f64>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    let embedding = normal_array(
        spec.latent_dim,
        spec.feature_dim,
        (1.0 / spec.latent_dim as f64).sqrt(),
        &mut rng,
    );

    for l in 0..spec.n_languages {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, l as u64 + 1));
        let lang = spec.language(l);
        let src = (l > 0).then_some(source_protos.as_slice());
        let LanguagePrototypes { protos, shared: sh } = build_prototypes(spec, src, &mut rng);
        let offsets = normal_array(spec.signers, spec.feature_dim, spec.signer_scale, &mut rng);

        let gloss_ids: Vec<GlossId> = (0..spec.classes_per_language)
            .map(|c| GlossId::new(format!("{lang}_g{c:04}")))
            .collect();
        let signer_ids: Vec<SignerId> = (0..spec.signers)
            .map(|s| SignerId::new(format!("{lang}_s{s:04}")))
            .collect();
        let mut samples = Vec::new();
        for (c, gloss) in gloss_ids.iter().enumerate() {
            for j in 0..spec.samples_per_class {
                let signer = j % spec.signers;
                let sign_len = rng.random_range(40..=96);
                let lead = rng.random_range(0..=20);
                let tail = rng.random_range(0..=20);
                let rec = SampleRecord {
                    sample_id: SampleId::new(format!("{lang}_{c:04}_{j:04}")),
                    signer: signer_ids[signer].clone(),
                    gloss: gloss.clone(),
                    language: lang.clone(),
                    video_length: lead + sign_len + tail,
                    sign_start: lead,
                    sign_end: lead + sign_len,
                    subset: Subset::Unassigned,
                };
                let clip = sample_clip(&rec, &clip, &mut rng)?;
                let noise = normal_array(
                    clip.frame_indices.len(),
                    spec.feature_dim,
                    spec.noise_scale,
                    &mut rng,
                );
                let mut feats = Array2::zeros((clip.frame_indices.len(), spec.feature_dim));
                for (t, &f) in clip.frame_indices.iter().enumerate() {
                    let mut row = feats.row_mut(t);
                    if (rec.sign_start..rec.sign_end).contains(&f) {
                        let phase = (f - rec.sign_start) as f64 / (sign_len - 1) as f64;
                        row.assign(&sample_trajectory(&protos[c], phase).dot(&embedding));
                        row += &offsets.row(signer);
                    }
                    row += &noise.row(t);
                }
                store.push(rec.sample_id.clone(), clip.clip_start, &feats)?;
                samples.push(rec);
            }
        }

        let mut groups: Vec<GroupLabel> = Vec::new();
        for pair in 0..spec.confusable_pairs {
            let members: BTreeSet<GlossId> =
                [gloss_ids[2 * pair].clone(), gloss_ids[2 * pair + 1].clone()].into();
            groups.push(GroupLabel {
                id: GroupId::new(gloss_ids[2 * pair].as_str()),
                members,
            });
        }
        for g in &gloss_ids[2 * spec.confusable_pairs..] {
            groups.push(GroupLabel {
                id: GroupId::new(g.as_str()),
                members: [g.clone()].into(),
            });
        }
        let glosses = gloss_ids
            .iter()
            .map(|id| GlossLabel {
                id: id.clone(),
                language: lang.clone(),
            })
            .collect();
        manifests.push(DatasetManifest::new(
            lang, glosses, groups, signer_ids, samples,
        )?);
        shared.push(sh);
        if l == 0 {
            source_protos = protos;
        }
    }
    Ok(SyntheticData {
        manifests,
        features: store,
        shared,
    })
}
