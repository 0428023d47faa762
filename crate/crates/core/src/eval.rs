//! Accuracy metrics, grouped breakdowns, the label-mapping baseline and
//! k-shot truncation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, LabelSpace, LanguageTag, SampleId, Subset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: SampleId,
    /// `None` when no label could be produced; always scored incorrect.
    pub predicted: Option<usize>,
    pub truth: usize,
    pub language: LanguageTag,
}

impl PredictionRow {
    pub fn correct(&self) -> bool {
        self.predicted == Some(self.truth)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    rows: Vec<PredictionRow>,
}

impl PredictionSet {
    pub fn new(rows: Vec<PredictionRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(&r.sample_id) {
                return Err(Error::Integrity(format!(
                    "duplicate prediction for sample `{}`",
                    r.sample_id
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Rows from parallel slices of ids, predictions and ground truth.
    pub fn from_parts(
        language: &LanguageTag,
        ids: &[SampleId],
        predicted: &[usize],
        truth: &[usize],
    ) -> Result<Self> {
        if ids.len() != predicted.len() || ids.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "{} ids, {} predictions, {} labels",
                ids.len(),
                predicted.len(),
                truth.len()
            )));
        }
        Self::new(
            ids.iter()
                .zip(predicted)
                .zip(truth)
                .map(|((id, &p), &t)| PredictionRow {
                    sample_id: id.clone(),
                    predicted: Some(p),
                    truth: t,
                    language: language.clone(),
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks every index against the class count of its language.
    pub fn check_classes(&self, classes: &BTreeMap<LanguageTag, usize>) -> Result<()> {
        for r in &self.rows {
            let c = *classes
                .get(&r.language)
                .ok_or_else(|| Error::UnknownLanguage(r.language.to_string()))?;
            if r.truth >= c || r.predicted.is_some_and(|p| p >= c) {
                return Err(Error::Dimension(format!(
                    "sample `{}` has a class index outside 0..{c}",
                    r.sample_id
                )));
            }
        }
        Ok(())
    }
}

pub fn top1_accuracy(p: &PredictionSet) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Empty("prediction set".into()));
    }
    let correct = p.rows.iter().filter(|r| r.correct()).count();
    Ok(correct as f64 / p.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub samples: usize,
    pub correct: usize,
    /// `None` when the stratum is empty.
    pub accuracy: Option<f64>,
}

impl Stratum {
    fn new(samples: usize, correct: usize) -> Self {
        Self {
            samples,
            correct,
            accuracy: (samples > 0).then(|| correct as f64 / samples as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub whole: Stratum,
    pub non_vssign: Stratum,
    pub vssign: Stratum,
}

/// Top-1 on group labels, split by whether the true group has one member or
/// several. Predictions in [`LabelSpace::Gloss`] are projected to groups
/// first.
pub fn grouped_accuracy_breakdown(
    p: &PredictionSet,
    m: &DatasetManifest,
    space: LabelSpace,
) -> Result<Breakdown> {
    if !m.has_grouping() {
        return Err(Error::MissingGrouping);
    }
    if p.is_empty() {
        return Err(Error::Empty("prediction set".into()));
    }
    let gloss_group: Vec<usize> = {
        let map = m.gloss_to_group()?;
        m.glosses().iter().map(|g| map[&g.id]).collect()
    };
    let n_classes = m.num_classes(space);
    let to_group = |c: usize| -> Result<usize> {
        if c >= n_classes {
            return Err(Error::Dimension(format!(
                "class {c} outside 0..{n_classes}"
            )));
        }
        Ok(match space {
            LabelSpace::Gloss => gloss_group[c],
            LabelSpace::Group => c,
        })
    };
    let sizes: Vec<usize> = m.groups().iter().map(|g| g.members.len()).collect();
    let (mut n_single, mut c_single, mut n_multi, mut c_multi) = (0, 0, 0, 0);
    for r in p.rows() {
        let truth = to_group(r.truth)?;
        let pred = r.predicted.map(to_group).transpose()?;
        let hit = pred == Some(truth);
        if sizes[truth] >= 2 {
            n_multi += 1;
            c_multi += hit as usize;
        } else {
            n_single += 1;
            c_single += hit as usize;
        }
    }
    Ok(Breakdown {
        whole: Stratum::new(n_single + n_multi, c_single + c_multi),
        non_vssign: Stratum::new(n_single, c_single),
        vssign: Stratum::new(n_multi, c_multi),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub target: usize,
    pub target_label: String,
    /// Samples of the source class carrying the chosen target label.
    pub votes: usize,
    /// Samples the source model assigned to this class.
    pub support: usize,
    /// Another target label reached the same count.
    pub tied: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub entries: BTreeMap<usize, MapEntry>,
    /// Source classes never predicted on the mapping set.
    pub unmapped: Vec<usize>,
}

impl LabelMap {
    pub fn get(&self, source: usize) -> Option<usize> {
        self.entries.get(&source).map(|e| e.target)
    }
}

/// For every source class, the most frequent ground-truth target label among
/// the samples the source model assigned to it. Rows carry the source
/// prediction in `predicted` and the target label index in `truth`; ties go
/// to the lexicographically smallest target label.
pub fn build_label_map(
    source_preds: &PredictionSet,
    source_classes: usize,
    target_labels: &[String],
) -> Result<LabelMap> {
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for r in source_preds.rows() {
        if r.truth >= target_labels.len() {
            return Err(Error::Dimension(format!(
                "target class {} outside 0..{}",
                r.truth,
                target_labels.len()
            )));
        }
        if let Some(s) = r.predicted {
            *counts.entry(s).or_default().entry(r.truth).or_default() += 1;
        }
    }
    let mut entries = BTreeMap::new();
    for (source, row) in counts {
        let best = *row.values().max().expect("non-empty row");
        let winners: Vec<usize> = row
            .iter()
            .filter(|(_, &c)| c == best)
            .map(|(&t, _)| t)
            .collect();
        let target = *winners
            .iter()
            .min_by(|&&a, &&b| target_labels[a].cmp(&target_labels[b]).then(a.cmp(&b)))
            .expect("at least one winner");
        entries.insert(
            source,
            MapEntry {
                target,
                target_label: target_labels[target].clone(),
                votes: best,
                support: row.values().sum(),
                tied: winners.len() > 1,
            },
        );
    }
    let unmapped = (0..source_classes)
        .filter(|c| !entries.contains_key(c))
        .collect();
    Ok(LabelMap { entries, unmapped })
}

/// Replaces each source-class prediction by its mapped target class.
/// Predictions of unmapped classes become `None`.
pub fn apply_label_map(map: &LabelMap, preds: &PredictionSet) -> PredictionSet {
    PredictionSet {
        rows: preds
            .rows()
            .iter()
            .map(|r| PredictionRow {
                predicted: r.predicted.and_then(|s| map.get(s)),
                ..r.clone()
            })
            .collect(),
    }
}

/// Keeps at most `k` randomly chosen train samples per gloss. Test and
/// unassigned samples are untouched.
pub fn kshot_truncate(m: &DatasetManifest, k: usize, seed: u64) -> Result<DatasetManifest> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in m.samples().iter().enumerate() {
        if s.subset == Subset::Train {
            by_class.entry(s.gloss.as_str()).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; m.samples().len()];
    for idx in by_class.values() {
        if idx.len() <= k {
            continue;
        }
        let chosen: BTreeSet<usize> = index::sample(&mut rng, idx.len(), k).into_iter().collect();
        for (j, &i) in idx.iter().enumerate() {
            keep[i] = chosen.contains(&j);
        }
    }
    let samples = m
        .samples()
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect();
    m.with_samples(samples)
}
