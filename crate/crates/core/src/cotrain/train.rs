//! Training loop over one or more language datasets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{maybe_mix, MixConfig};
use super::batch::{gate_split, merge_sub_batches, BatchItem, MixedBatch, SoftLabel};
use super::checkpoint::Checkpoint;
use super::loss::{loss_and_grad, plain_loss_and_grad, LossConfig};
use super::model::{argmax, CoTrainModel, Encoder, MlpEncoder};
use super::optim::{AdamW, AdamWConfig};
use crate::clip::{apply_temporal_augment, AugmentConfig};
use crate::dataset::{LanguageTag, SampleId};
use crate::digest::json_hash;
use crate::error::{Error, Result};
use crate::schedule::{lr_at, TrainPlan};
use crate::split::derive_seed;

/// One clip ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub sample_id: SampleId,
    /// Frames x feature dimension.
    pub features: Array2<f64>,
    pub class: usize,
    pub boundary: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub language: LanguageTag,
    pub classes: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    #[default]
    Scratch,
    Pretrained,
    Frozen,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Language gate with one head per language.
    #[default]
    CoTrain,
    /// One dataset, one head, no gate.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub encoder_mode: EncoderMode,
    pub pipeline: Pipeline,
    /// Breakpoints are read in epochs; `steps_per_epoch` is replaced by the
    /// number of batches the data actually yields.
    pub plan: TrainPlan,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
    pub mix: MixConfig,
    /// Temporal augmentation of the 32 clip positions; `None` disables it.
    pub temporal: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            hidden_dim: 64,
            embed_dim: 64,
            encoder_mode: EncoderMode::Scratch,
            pipeline: Pipeline::CoTrain,
            plan: TrainPlan::baseline(1),
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
            mix: MixConfig::default(),
            temporal: None,
        }
    }
}

impl TrainConfig {
    pub fn hash(&self) -> String {
        json_hash(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_owned(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    /// Mean classification loss per language over the epoch's batches.
    pub loss: BTreeMap<LanguageTag, f64>,
    pub regression: f64,
    pub total: f64,
    /// Top-1 accuracy on each non-empty test set.
    pub accuracy: BTreeMap<LanguageTag, f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<E> {
    pub model: CoTrainModel<E>,
    pub metrics: Vec<EpochMetrics>,
    pub steps: usize,
    pub config_hash: String,
}

fn class_counts(data: &[DatasetSplit]) -> BTreeMap<LanguageTag, usize> {
    data.iter()
        .map(|d| (d.language.clone(), d.classes))
        .collect()
}

fn input_dim(data: &[DatasetSplit]) -> Result<usize> {
    data.iter()
        .flat_map(|d| d.train.iter().chain(&d.test))
        .map(|e| e.features.ncols())
        .next()
        .ok_or_else(|| Error::Empty("no examples in any dataset".into()))
}

/// Builds the reference model. Pretrained and frozen modes copy every
/// checkpoint tensor whose name and shape match; the encoder must be among
/// them.
pub fn init_model(
    cfg: &TrainConfig,
    data: &[DatasetSplit],
    init: Option<&Checkpoint>,
) -> Result<CoTrainModel<MlpEncoder>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x1417));
    let encoder = MlpEncoder::new(input_dim(data)?, cfg.hidden_dim, cfg.embed_dim, &mut rng);
    let mut model = CoTrainModel::new(encoder, &class_counts(data), &mut rng);
    match (cfg.encoder_mode, init) {
        (EncoderMode::Scratch, _) => {}
        (_, None) => {
            return Err(Error::InvalidArgument(
                "pretrained and frozen modes need an initial checkpoint".into(),
            ))
        }
        (_, Some(ck)) => {
            let before = model.encoder.params().len();
            let copied = ck.load_into(&mut model, "encoder.")?;
            if copied != before {
                return Err(Error::Integrity(format!(
                    "checkpoint supplies {copied} of {before} encoder tensors"
                )));
            }
            for lang in data.iter().map(|d| &d.language) {
                let prefix = format!("head.{lang}.");
                if ck.tensors.keys().any(|k| k.starts_with(&prefix)) {
                    ck.load_into(&mut model, &prefix)?;
                }
            }
            ck.load_into(&mut model, "regression.")?;
        }
    }
    Ok(model)
}

/// One epoch of `(dataset, example)` slots, cut into batches. Each slot
/// draws a dataset with probability proportional to its remaining examples.
pub fn epoch_batches(
    data: &[DatasetSplit],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<(usize, usize)>> {
    let mut queues: Vec<Vec<usize>> = data
        .iter()
        .map(|d| {
            let mut q: Vec<usize> = (0..d.train.len()).collect();
            q.shuffle(rng);
            q
        })
        .collect();
    let mut remaining: usize = queues.iter().map(Vec::len).sum();
    let mut batches = Vec::new();
    while remaining > 0 {
        let mut batch = Vec::with_capacity(batch_size.min(remaining));
        while batch.len() < batch_size && remaining > 0 {
            let live = queues.iter().filter(|q| !q.is_empty()).count();
            let ds = if live == 1 {
                queues.iter().position(|q| !q.is_empty()).unwrap()
            } else {
                let mut r = rng.random_range(0..remaining);
                let mut pick = 0;
                for (i, q) in queues.iter().enumerate() {
                    if r < q.len() {
                        pick = i;
                        break;
                    }
                    r -= q.len();
                }
                pick
            };
            let ex = queues[ds].pop().expect("non-empty queue");
            batch.push((ds, ex));
            remaining -= 1;
        }
        batches.push(batch);
    }
    batches
}

fn make_item(
    ds: &DatasetSplit,
    ex: &Example,
    temporal: Option<&AugmentConfig>,
    rng: &mut impl Rng,
) -> BatchItem {
    let features = match temporal {
        Some(aug) => {
            let positions: Vec<usize> = (0..ex.features.nrows()).collect();
            let chain = apply_temporal_augment(&positions, aug, rng);
            ex.features.select(Axis(0), &chain)
        }
        None => ex.features.clone(),
    };
    BatchItem {
        features,
        target: SoftLabel::hard(ex.class),
        language: ds.language.clone(),
        boundary: ex.boundary,
    }
}

/// Predicted class for every example under `language`'s head.
pub fn predict<E: Encoder>(
    model: &CoTrainModel<E>,
    language: &LanguageTag,
    examples: &[Example],
) -> Result<Vec<usize>> {
    let head = model
        .heads
        .get(language)
        .ok_or_else(|| Error::UnknownLanguage(language.to_string()))?;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(256) {
        let views: Vec<ArrayView2<'_, f64>> = chunk.iter().map(|e| e.features.view()).collect();
        let emb = model.encoder.embed(&views);
        let logits = head.forward(&emb.view());
        out.extend(logits.rows().into_iter().map(|r| argmax(r.iter().copied())));
    }
    Ok(out)
}

/// Top-1 accuracy of `language`'s head on `examples`; `None` when empty.
pub fn accuracy<E: Encoder>(
    model: &CoTrainModel<E>,
    language: &LanguageTag,
    examples: &[Example],
) -> Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let preds = predict(model, language, examples)?;
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.class)
        .count();
    Ok(Some(correct as f64 / examples.len() as f64))
}

/// Encoder embeddings of `examples`, one row each.
pub fn export_embeddings<E: Encoder>(encoder: &E, examples: &[Example]) -> Array2<f64> {
    let views: Vec<ArrayView2<'_, f64>> = examples.iter().map(|e| e.features.view()).collect();
    encoder.embed(&views)
}

struct StepResult {
    cls: BTreeMap<LanguageTag, f64>,
    regression: f64,
    total: f64,
    grads: Vec<Array2<f64>>,
}

fn step_grads<E: Encoder>(
    cfg: &TrainConfig,
    model: &CoTrainModel<E>,
    batch: &MixedBatch,
    encoder_grad: bool,
) -> Result<StepResult> {
    match cfg.pipeline {
        Pipeline::CoTrain => {
            let (report, grads) = loss_and_grad(batch, model, &cfg.loss, encoder_grad)?;
            Ok(StepResult {
                cls: report
                    .per_language
                    .iter()
                    .map(|(l, v)| (l.clone(), v.cls_loss))
                    .collect(),
                regression: report.regression,
                total: report.total,
                grads: grads.flatten(model),
            })
        }
        Pipeline::Plain => {
            let (lang, head) = model.heads.iter().next().expect("one head");
            let step = plain_loss_and_grad(
                batch,
                &model.encoder,
                head,
                &model.regression,
                &cfg.loss,
                encoder_grad,
            )?;
            let mut grads = if step.encoder.is_empty() {
                model
                    .encoder
                    .params()
                    .iter()
                    .map(|(_, p)| Array2::zeros(p.raw_dim()))
                    .collect()
            } else {
                step.encoder
            };
            grads.extend([step.head.0, step.head.1]);
            grads.extend([step.regression_grads.0, step.regression_grads.1]);
            Ok(StepResult {
                cls: [(lang.clone(), step.cls)].into_iter().collect(),
                regression: step.regression,
                total: step.total,
                grads,
            })
        }
    }
}

fn check_data<E: Encoder>(
    cfg: &TrainConfig,
    data: &[DatasetSplit],
    model: &CoTrainModel<E>,
) -> Result<()> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    cfg.validate()?;
    if cfg.pipeline == Pipeline::Plain && (data.len() != 1 || model.heads.len() != 1) {
        return Err(Error::InvalidArgument(
            "the plain pipeline trains exactly one dataset with one head".into(),
        ));
    }
    let d = model.encoder.input_dim();
    for ds in data {
        let head = model
            .heads
            .get(&ds.language)
            .ok_or_else(|| Error::UnknownLanguage(ds.language.to_string()))?;
        for ex in ds.train.iter().chain(&ds.test) {
            if ex.features.ncols() != d {
                return Err(Error::Dimension(format!(
                    "sample `{}` has {} features, encoder expects {d}",
                    ex.sample_id,
                    ex.features.ncols()
                )));
            }
            if ex.class >= head.outputs() {
                return Err(Error::Dimension(format!(
                    "sample `{}` has class {} but `{}` has {} classes",
                    ex.sample_id,
                    ex.class,
                    ds.language,
                    head.outputs()
                )));
            }
        }
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.loss.label_smoothing) {
            return Err(Error::InvalidArgument(
                "label_smoothing must lie in [0, 1)".into(),
            ));
        }
        if let Some(t) = &self.temporal {
            t.validate()?;
        }
        Ok(())
    }
}

/// Trains `model` on the train parts of `data` and scores every test part
/// after each epoch.
pub fn train<E: Encoder>(
    cfg: &TrainConfig,
    data: &[DatasetSplit],
    mut model: CoTrainModel<E>,
) -> Result<TrainOutcome<E>> {
    check_data(cfg, data, &model)?;
    let n_train: usize = data.iter().map(|d| d.train.len()).sum();
    let mut plan = cfg.plan.clone();
    plan.steps_per_epoch = n_train.div_ceil(cfg.batch_size).max(1);
    plan.validate()?;
    let total_steps = if n_train == 0 { 0 } else { plan.total_steps() };

    let frozen = cfg.encoder_mode == EncoderMode::Frozen;
    let trainable: Vec<bool> = model
        .named_params()
        .iter()
        .map(|(name, _)| !(frozen && name.starts_with("encoder.")))
        .collect();
    let mut opt = AdamW::new(cfg.optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7EA1));
    let mut metrics = Vec::new();
    let mut step = 0;
    let mut epoch = 0;
    while step < total_steps {
        epoch += 1;
        let mut sums: BTreeMap<LanguageTag, (f64, usize)> = BTreeMap::new();
        let (mut reg_sum, mut total_sum, mut batches_run) = (0.0, 0.0, 0usize);
        let mut lr = 0.0;
        for slots in epoch_batches(data, cfg.batch_size, &mut rng) {
            if step >= total_steps {
                break;
            }
            let items: Vec<BatchItem> = slots
                .iter()
                .map(|&(d, e)| {
                    make_item(&data[d], &data[d].train[e], cfg.temporal.as_ref(), &mut rng)
                })
                .collect();
            let batch = match cfg.pipeline {
                Pipeline::CoTrain => {
                    let langs: Vec<LanguageTag> = model.heads.keys().cloned().collect();
                    let mut subs = gate_split(&MixedBatch::new(items), &langs)?;
                    for sub in subs.values_mut() {
                        sub.items = maybe_mix(&sub.items, &cfg.mix, &mut rng);
                    }
                    merge_sub_batches(subs)
                }
                Pipeline::Plain => MixedBatch::new(maybe_mix(&items, &cfg.mix, &mut rng)),
            };
            let res = step_grads(cfg, &model, &batch, !frozen)?;
            if !res.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!(
                        "classification {:?}, regression {}",
                        res.cls, res.regression
                    ),
                });
            }
            lr = lr_at(&plan, step)?;
            let mut params = model.named_params_mut();
            opt.step(&mut params, &res.grads, &trainable, lr)?;
            for (l, v) in res.cls {
                let e = sums.entry(l).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
            reg_sum += res.regression;
            total_sum += res.total;
            batches_run += 1;
            step += 1;
        }
        let mut accuracy = BTreeMap::new();
        for ds in data {
            if let Some(a) = self::accuracy(&model, &ds.language, &ds.test)? {
                accuracy.insert(ds.language.clone(), a);
            }
        }
        let denom = batches_run.max(1) as f64;
        metrics.push(EpochMetrics {
            epoch,
            step,
            lr,
            loss: sums
                .into_iter()
                .map(|(l, (s, c))| (l, s / c as f64))
                .collect(),
            regression: reg_sum / denom,
            total: total_sum / denom,
            accuracy,
        });
    }
    Ok(TrainOutcome {
        model,
        metrics,
        steps: step,
        config_hash: cfg.hash(),
    })
}

pub fn write_metrics(metrics: &[EpochMetrics], w: &mut impl Write) -> std::io::Result<()> {
    for m in metrics {
        writeln!(w, "{}", serde_json::to_string(m)?)?;
    }
    Ok(())
}
