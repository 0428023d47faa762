use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::LanguageTag;
use crate::error::{Error, Result};

/// Class distribution of one item: `(class index, weight)` pairs summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel(pub Vec<(usize, f64)>);

impl SoftLabel {
    pub fn hard(class: usize) -> Self {
        Self(vec![(class, 1.0)])
    }

    /// `lambda * self + (1 - lambda) * other`, merged by class.
    pub fn mix(&self, other: &SoftLabel, lambda: f64) -> SoftLabel {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(c, w) in &self.0 {
            *acc.entry(c).or_default() += lambda * w;
        }
        for &(c, w) in &other.0 {
            *acc.entry(c).or_default() += (1.0 - lambda) * w;
        }
        SoftLabel(acc.into_iter().filter(|(_, w)| *w != 0.0).collect())
    }

    pub fn weight_of(&self, class: usize) -> f64 {
        self.0
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn max_class(&self) -> Option<usize> {
        self.0.iter().map(|(c, _)| *c).max()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    /// Frames x feature dimension.
    pub features: Array2<f64>,
    pub target: SoftLabel,
    pub language: LanguageTag,
    /// Squashed boundary targets `(start, end)`.
    pub boundary: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MixedBatch {
    pub items: Vec<BatchItem>,
}

impl MixedBatch {
    pub fn new(items: Vec<BatchItem>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.items.iter().map(|i| i.features.view()).collect()
    }
}

/// Items of one language together with their positions in the mixed batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBatch {
    pub positions: Vec<usize>,
    pub items: Vec<BatchItem>,
}

/// Splits a mixed batch by language tag, keeping within-language order.
pub fn gate_split(
    batch: &MixedBatch,
    languages: &[LanguageTag],
) -> Result<BTreeMap<LanguageTag, SubBatch>> {
    let mut out: BTreeMap<LanguageTag, SubBatch> = BTreeMap::new();
    for (pos, item) in batch.items.iter().enumerate() {
        if !languages.contains(&item.language) {
            return Err(Error::UnknownLanguage(item.language.to_string()));
        }
        let sub = out
            .entry(item.language.clone())
            .or_insert_with(|| SubBatch {
                positions: Vec::new(),
                items: Vec::new(),
            });
        sub.positions.push(pos);
        sub.items.push(item.clone());
    }
    Ok(out)
}

/// Inverse of [`gate_split`]: puts every item back at its original position.
pub fn merge_sub_batches(subs: BTreeMap<LanguageTag, SubBatch>) -> MixedBatch {
    let mut placed: Vec<(usize, BatchItem)> = subs
        .into_values()
        .flat_map(|s| s.positions.into_iter().zip(s.items))
        .collect();
    placed.sort_by_key(|(p, _)| *p);
    MixedBatch::new(placed.into_iter().map(|(_, i)| i).collect())
}

/// Per-language loss weights: the language's share of the batch.
pub fn language_weights(batch: &MixedBatch) -> BTreeMap<LanguageTag, f64> {
    let mut counts: BTreeMap<LanguageTag, usize> = BTreeMap::new();
    for item in &batch.items {
        *counts.entry(item.language.clone()).or_default() += 1;
    }
    let n = batch.len() as f64;
    counts.into_iter().map(|(l, c)| (l, c as f64 / n)).collect()
}
