//! Training objective: label-smoothed cross-entropy per language head,
//! weighted by each language's share of the batch, plus a weighted
//! mean-squared error on squashed boundary predictions.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::batch::{gate_split, BatchItem, MixedBatch, SoftLabel};
use super::model::{log_softmax, CoTrainModel, Encoder, LinearHead};
use crate::dataset::LanguageTag;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub label_smoothing: f64,
    pub regression_weight: f64,
    /// Languages whose items feed the regression loss; `None` means all.
    pub regression_languages: Option<BTreeSet<LanguageTag>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            label_smoothing: 0.1,
            regression_weight: 2.5,
            regression_languages: None,
        }
    }
}

impl LossConfig {
    fn regresses(&self, lang: &LanguageTag) -> bool {
        self.regression_languages
            .as_ref()
            .is_none_or(|s| s.contains(lang))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageLoss {
    pub count: usize,
    pub weight: f64,
    pub cls_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_language: BTreeMap<LanguageTag, LanguageLoss>,
    pub regression: f64,
    pub total: f64,
}

impl LossReport {
    /// Classification loss summed over languages with their batch weights.
    pub fn weighted_cls(&self) -> f64 {
        self.per_language
            .values()
            .map(|l| l.weight * l.cls_loss)
            .sum()
    }
}

/// Parameter gradients, aligned with [`CoTrainModel::named_params`].
#[derive(Clone, Debug)]
pub struct Gradients {
    /// Empty when encoder gradients were not requested.
    pub encoder: Vec<Array2<f64>>,
    pub heads: BTreeMap<LanguageTag, (Array2<f64>, Array2<f64>)>,
    pub regression: (Array2<f64>, Array2<f64>),
}

impl Gradients {
    /// Gradients in `named_params` order; heads without a gradient get zeros.
    pub fn flatten<E: Encoder>(&self, model: &CoTrainModel<E>) -> Vec<Array2<f64>> {
        let mut out = if self.encoder.is_empty() {
            model
                .encoder
                .params()
                .iter()
                .map(|(_, p)| Array2::zeros(p.raw_dim()))
                .collect()
        } else {
            self.encoder.clone()
        };
        for (lang, head) in &model.heads {
            match self.heads.get(lang) {
                Some((w, b)) => {
                    out.push(w.clone());
                    out.push(b.clone());
                }
                None => {
                    out.push(Array2::zeros(head.weight.raw_dim()));
                    out.push(Array2::zeros(head.bias.raw_dim()));
                }
            }
        }
        out.push(self.regression.0.clone());
        out.push(self.regression.1.clone());
        out
    }
}

/// Smoothed target `(1 - eps) * t + eps / C` as a dense row.
pub fn smoothed_target(target: &SoftLabel, classes: usize, eps: f64) -> Vec<f64> {
    let mut q = vec![eps / classes as f64; classes];
    for &(c, w) in &target.0 {
        q[c] += (1.0 - eps) * w;
    }
    q
}

/// Per-row losses and `softmax - q` for label-smoothed cross-entropy.
fn smoothed_ce(logits: &Array2<f64>, targets: &[&SoftLabel], eps: f64) -> (Vec<f64>, Array2<f64>) {
    let classes = logits.ncols();
    let ls = log_softmax(logits);
    let mut losses = Vec::with_capacity(targets.len());
    let mut grad = ls.mapv(f64::exp);
    for (i, t) in targets.iter().enumerate() {
        let q = smoothed_target(t, classes, eps);
        let mut loss = 0.0;
        for c in 0..classes {
            loss -= q[c] * ls[[i, c]];
            grad[[i, c]] -= q[c];
        }
        losses.push(loss);
    }
    (losses, grad)
}

fn validate<E: Encoder>(batch: &MixedBatch, model: &CoTrainModel<E>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let d = model.encoder.input_dim();
    for item in &batch.items {
        if item.features.ncols() != d {
            return Err(Error::Dimension(format!(
                "item has {} features, encoder expects {d}",
                item.features.ncols()
            )));
        }
        let head = model
            .heads
            .get(&item.language)
            .ok_or_else(|| Error::UnknownLanguage(item.language.to_string()))?;
        if item.target.max_class().is_some_and(|c| c >= head.outputs()) {
            return Err(Error::Dimension(format!(
                "class index outside the {} classes of `{}`",
                head.outputs(),
                item.language
            )));
        }
    }
    Ok(())
}

struct RegressionPart {
    loss: f64,
    grads: (Array2<f64>, Array2<f64>),
    d_emb: Array2<f64>,
}

/// Regression loss over the rows `rows` of `emb`, with gradients scaled by
/// the regression weight. `d_emb` covers every batch row.
fn regression_part(
    head: &LinearHead,
    emb: &Array2<f64>,
    items: &[BatchItem],
    rows: &[usize],
    weight: f64,
) -> RegressionPart {
    let mut d_emb = Array2::zeros(emb.raw_dim());
    if rows.is_empty() {
        return RegressionPart {
            loss: 0.0,
            grads: (
                Array2::zeros(head.weight.raw_dim()),
                Array2::zeros(head.bias.raw_dim()),
            ),
            d_emb,
        };
    }
    let sub = emb.select(Axis(0), rows);
    let raw = head.forward(&sub.view());
    let denom = (2 * rows.len()) as f64;
    let mut loss = 0.0;
    let mut d_raw = Array2::zeros(raw.raw_dim());
    for (k, &i) in rows.iter().enumerate() {
        for j in 0..2 {
            let y = (0.5 * raw[[k, j]]).tanh();
            let diff = y - items[i].boundary[j];
            loss += diff * diff;
            d_raw[[k, j]] = weight * 2.0 * diff / denom * 0.5 * (1.0 - y * y);
        }
    }
    let (grads, d_sub) = head.backward(&sub.view(), &d_raw);
    for (k, &i) in rows.iter().enumerate() {
        d_emb.row_mut(i).assign(&d_sub.row(k));
    }
    RegressionPart {
        loss: loss / denom,
        grads,
        d_emb,
    }
}

pub fn compute_loss<E: Encoder>(
    batch: &MixedBatch,
    model: &CoTrainModel<E>,
    cfg: &LossConfig,
) -> Result<LossReport> {
    evaluate(batch, model, cfg, false).map(|(r, _)| r)
}

/// Loss and gradients through the language gate. With `encoder_grad` false
/// the encoder backward pass is skipped.
pub fn loss_and_grad<E: Encoder>(
    batch: &MixedBatch,
    model: &CoTrainModel<E>,
    cfg: &LossConfig,
    encoder_grad: bool,
) -> Result<(LossReport, Gradients)> {
    evaluate(batch, model, cfg, encoder_grad)
}

fn evaluate<E: Encoder>(
    batch: &MixedBatch,
    model: &CoTrainModel<E>,
    cfg: &LossConfig,
    encoder_grad: bool,
) -> Result<(LossReport, Gradients)> {
    validate(batch, model)?;
    let n = batch.len();
    let (emb, cache) = model.encoder.forward(&batch.views());
    let languages: Vec<LanguageTag> = model.heads.keys().cloned().collect();
    let subs = gate_split(batch, &languages)?;

    let mut d_emb = Array2::zeros(emb.raw_dim());
    let mut per_language = BTreeMap::new();
    let mut head_grads = BTreeMap::new();
    for (lang, sub) in &subs {
        let head = &model.heads[lang];
        let count = sub.positions.len();
        let weight = count as f64 / n as f64;
        let e_sub = emb.select(Axis(0), &sub.positions);
        let logits = head.forward(&e_sub.view());
        let targets: Vec<&SoftLabel> = sub.items.iter().map(|i| &i.target).collect();
        let (losses, mut d_logits) = smoothed_ce(&logits, &targets, cfg.label_smoothing);
        let cls_loss = losses.iter().sum::<f64>() / count as f64;
        d_logits *= weight / count as f64;
        let (grads, d_sub) = head.backward(&e_sub.view(), &d_logits);
        for (k, &pos) in sub.positions.iter().enumerate() {
            d_emb.row_mut(pos).assign(&d_sub.row(k));
        }
        head_grads.insert(lang.clone(), grads);
        per_language.insert(
            lang.clone(),
            LanguageLoss {
                count,
                weight,
                cls_loss,
            },
        );
    }

    let rows: Vec<usize> = (0..n)
        .filter(|&i| cfg.regresses(&batch.items[i].language))
        .collect();
    let reg = regression_part(
        &model.regression,
        &emb,
        &batch.items,
        &rows,
        cfg.regression_weight,
    );
    d_emb += &reg.d_emb;

    let cls: f64 = per_language
        .values()
        .map(|l: &LanguageLoss| l.weight * l.cls_loss)
        .sum();
    let report = LossReport {
        per_language,
        regression: reg.loss,
        total: cls + cfg.regression_weight * reg.loss,
    };
    let encoder = if encoder_grad {
        model.encoder.backward(&cache, &d_emb)
    } else {
        Vec::new()
    };
    Ok((
        report,
        Gradients {
            encoder,
            heads: head_grads,
            regression: reg.grads,
        },
    ))
}

pub struct PlainStep {
    pub total: f64,
    pub cls: f64,
    pub regression: f64,
    pub encoder: Vec<Array2<f64>>,
    pub head: (Array2<f64>, Array2<f64>),
    pub regression_grads: (Array2<f64>, Array2<f64>),
}

/// Single-head objective without the language gate: mean smoothed
/// cross-entropy of `head` over the whole batch plus the regression term.
/// Serves as the single-dataset pipeline.
pub fn plain_loss_and_grad<E: Encoder>(
    batch: &MixedBatch,
    encoder: &E,
    head: &LinearHead,
    regression: &LinearHead,
    cfg: &LossConfig,
    encoder_grad: bool,
) -> Result<PlainStep> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let n = batch.len();
    let (emb, cache) = encoder.forward(&batch.views());
    let logits = head.forward(&emb.view());
    let targets: Vec<&SoftLabel> = batch.items.iter().map(|i| &i.target).collect();
    let (losses, mut d_logits) = smoothed_ce(&logits, &targets, cfg.label_smoothing);
    let cls = losses.iter().sum::<f64>() / n as f64;
    d_logits *= 1.0 / n as f64;
    let (head_grads, mut d_emb) = head.backward(&emb.view(), &d_logits);
    let rows: Vec<usize> = (0..n)
        .filter(|&i| cfg.regresses(&batch.items[i].language))
        .collect();
    let reg = regression_part(regression, &emb, &batch.items, &rows, cfg.regression_weight);
    d_emb += &reg.d_emb;
    let total = cls + cfg.regression_weight * reg.loss;
    let enc = if encoder_grad {
        encoder.backward(&cache, &d_emb)
    } else {
        Vec::new()
    };
    Ok(PlainStep {
        total,
        cls,
        regression: reg.loss,
        encoder: enc,
        head: head_grads,
        regression_grads: reg.grads,
    })
}
