//! Named end-to-end experiments over a set of language datasets: split,
//! optional k-shot truncation of the target, training, and a comparison
//! table.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clip::{clip_at, ClipSpec};
use crate::cotrain::{
    accuracy, init_model, predict, train, Checkpoint, CoTrainModel, DatasetSplit, EncoderMode,
    Example, MlpEncoder, TrainConfig,
};
use crate::dataset::{load_manifest, DatasetManifest, LabelSpace, Subset};
use crate::digest::{json_hash, sha256_hex};
use crate::error::{Error, Result};
use crate::eval::{
    apply_label_map, build_label_map, grouped_accuracy_breakdown, kshot_truncate, top1_accuracy,
    PredictionSet,
};
use crate::features::FeatureStore;
use crate::schedule::{frozen_plan, rescale_plan, TrainPlan};
use crate::split::{derive_seed, optimize_split, SplitConfig};
use crate::synth::{gen_synthetic, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Baseline,
    TransferFrozen,
    TransferFull,
    Cotrain,
    LabelMap,
    Kshot,
    GroupedVsUngrouped,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Baseline,
        Scenario::TransferFrozen,
        Scenario::TransferFull,
        Scenario::Cotrain,
        Scenario::LabelMap,
        Scenario::Kshot,
        Scenario::GroupedVsUngrouped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::TransferFrozen => "transfer-frozen",
            Scenario::TransferFull => "transfer-full",
            Scenario::Cotrain => "cotrain",
            Scenario::LabelMap => "label-map",
            Scenario::Kshot => "kshot",
            Scenario::GroupedVsUngrouped => "grouped-vs-ungrouped",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_owned()))
    }
}

fn default_p() -> f64 {
    0.2
}

fn default_kshots() -> Vec<usize> {
    vec![10, 3, 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    /// Index of the source language among the loaded datasets.
    #[serde(default)]
    pub source: usize,
    /// Index of the target language; the last dataset when absent.
    #[serde(default)]
    pub target: Option<usize>,
    /// Train samples kept per target class.
    #[serde(default)]
    pub target_shots: Option<usize>,
    #[serde(default = "default_kshots")]
    pub kshot_values: Vec<usize>,
    #[serde(default = "default_p")]
    pub split_p: f64,
    #[serde(default)]
    pub train: TrainConfig,
    /// Generate the data instead of reading it.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub manifests: Vec<PathBuf>,
    #[serde(default)]
    pub features: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, synthetic: SyntheticSpec) -> Self {
        Self {
            scenario: scenario.name().to_owned(),
            seed: 0,
            source: 0,
            target: None,
            target_shots: None,
            kshot_values: default_kshots(),
            split_p: default_p(),
            train: TrainConfig::default(),
            synthetic: Some(synthetic),
            manifests: Vec::new(),
            features: None,
        }
    }

    /// Reads a TOML config; relative data paths resolve against its folder.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_owned(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut cfg.manifests {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        if let Some(f) = &mut cfg.features {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub language: String,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Hash of the sorted test sample ids.
    pub test_hash: String,
    pub accuracy: f64,
    pub non_vssign: Option<f64>,
    pub vssign: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Plain-text comparison table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "scenario {}  config {}  seed {}\n",
            self.scenario,
            &self.config_hash[..12],
            self.seed
        );
        out.push_str(&format!(
            "{:<22} {:<10} {:>6} {:>6} {:>8} {:>11} {:>8}  {}\n",
            "row", "language", "train", "test", "whole", "non-vssign", "vssign", "test-set"
        ));
        let pct = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{:.2}", 100.0 * v));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<22} {:<10} {:>6} {:>6} {:>8} {:>11} {:>8}  {}\n",
                r.name,
                r.language,
                r.train_samples,
                r.test_samples,
                pct(Some(r.accuracy)),
                pct(r.non_vssign),
                pct(r.vssign),
                &r.test_hash[..12]
            ));
        }
        out
    }
}

/// Split manifests, one per language, with their features.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifests: Vec<DatasetManifest>,
    pub features: FeatureStore,
}

impl Corpus {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let (manifests, features) = match &cfg.synthetic {
            Some(spec) => {
                let data = gen_synthetic(spec)?;
                (data.manifests, data.features)
            }
            None => {
                let manifests = cfg
                    .manifests
                    .iter()
                    .map(load_manifest)
                    .collect::<Result<Vec<_>>>()?;
                let path = cfg
                    .features
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("config names no feature file".into()))?;
                (manifests, FeatureStore::load(path)?)
            }
        };
        if manifests.is_empty() {
            return Err(Error::Empty("no manifests".into()));
        }
        let split = SplitConfig {
            p: cfg.split_p,
            seed: cfg.seed,
            restarts: 8,
            ..SplitConfig::default()
        };
        let manifests = manifests
            .into_iter()
            .map(|m| {
                if m.count_subset(Subset::Unassigned) == 0 {
                    Ok(m)
                } else {
                    optimize_split(&m, &split).map(|(_, m)| m)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifests,
            features,
        })
    }

    /// Train and test examples of one manifest under `space`.
    pub fn dataset(&self, m: &DatasetManifest, space: LabelSpace) -> Result<DatasetSplit> {
        let classes = m.class_indices(space)?;
        let spec = ClipSpec::default();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (rec, &class) in m.samples().iter().zip(&classes) {
            let features = self
                .features
                .get(&rec.sample_id)
                .ok_or_else(|| Error::Integrity(format!("no features for `{}`", rec.sample_id)))?;
            let start = self
                .features
                .clip_start(&rec.sample_id)
                .expect("stored with features");
            let clip = clip_at(rec, start, &spec)?;
            let ex = Example {
                sample_id: rec.sample_id.clone(),
                features,
                class,
                boundary: [clip.boundary_targets.0, clip.boundary_targets.1],
            };
            match rec.subset {
                Subset::Train => train.push(ex),
                Subset::Test => test.push(ex),
                Subset::Unassigned => {}
            }
        }
        Ok(DatasetSplit {
            language: m.language().clone(),
            classes: m.num_classes(space),
            train,
            test,
        })
    }
}

pub fn test_set_hash(ds: &DatasetSplit) -> String {
    let mut ids: Vec<&str> = ds.test.iter().map(|e| e.sample_id.as_str()).collect();
    ids.sort_unstable();
    sha256_hex(ids.join("\n").as_bytes())
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    /// Train samples of the largest run; plans for smaller runs are rescaled
    /// to the same number of optimizer steps.
    reference_train: usize,
}

impl Runner<'_> {
    fn train_cfg(&self, n_train: usize, mode: EncoderMode) -> Result<TrainConfig> {
        let mut tc = self.cfg.train.clone();
        tc.seed = self.cfg.seed;
        tc.encoder_mode = mode;
        let b = tc.batch_size.max(1);
        let mut base = tc.plan.clone();
        base.steps_per_epoch = self.reference_train.div_ceil(b).max(1);
        let fraction = n_train.max(1) as f64 / self.reference_train.max(1) as f64;
        let mut plan: TrainPlan = rescale_plan(&base, fraction)?;
        if mode == EncoderMode::Frozen {
            plan = frozen_plan(&plan);
        }
        tc.plan = plan;
        Ok(tc)
    }

    fn fit(
        &self,
        data: &[DatasetSplit],
        mode: EncoderMode,
        init: Option<&Checkpoint>,
    ) -> Result<CoTrainModel<MlpEncoder>> {
        let n: usize = data.iter().map(|d| d.train.len()).sum();
        let tc = self.train_cfg(n, mode)?;
        let model = init_model(&tc, data, init)?;
        Ok(train(&tc, data, model)?.model)
    }
}

fn row(
    name: &str,
    model: &CoTrainModel<MlpEncoder>,
    ds: &DatasetSplit,
    train_samples: usize,
) -> Result<ReportRow> {
    let acc = accuracy(model, &ds.language, &ds.test)?
        .ok_or_else(|| Error::Empty(format!("test set of `{}`", ds.language)))?;
    Ok(ReportRow {
        name: name.to_owned(),
        language: ds.language.to_string(),
        train_samples,
        test_samples: ds.test.len(),
        test_hash: test_set_hash(ds),
        accuracy: acc,
        non_vssign: None,
        vssign: None,
    })
}

fn truncate(m: &DatasetManifest, shots: Option<usize>, seed: u64) -> Result<DatasetManifest> {
    match shots {
        Some(k) => kshot_truncate(m, k, derive_seed(seed, 0x5107)),
        None => Ok(m.clone()),
    }
}

fn test_predictions(
    model: &CoTrainModel<MlpEncoder>,
    head: &DatasetSplit,
    ds: &DatasetSplit,
    examples: &[Example],
) -> Result<PredictionSet> {
    let preds = predict(model, &head.language, examples)?;
    let ids: Vec<_> = examples.iter().map(|e| e.sample_id.clone()).collect();
    let truth: Vec<usize> = examples.iter().map(|e| e.class).collect();
    PredictionSet::from_parts(&ds.language, &ids, &preds, &truth)
}

/// Runs the scenario named in `cfg` and returns its comparison table.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let scenario: Scenario = cfg.scenario.parse()?;
    let corpus = Corpus::load(cfg)?;
    run_on_corpus(cfg, scenario, &corpus)
}

pub fn run_on_corpus(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    corpus: &Corpus,
) -> Result<Report> {
    let n_lang = corpus.manifests.len();
    let target = cfg.target.unwrap_or(n_lang - 1);
    if target >= n_lang || cfg.source >= n_lang {
        return Err(Error::InvalidArgument(format!(
            "source {} / target {target} outside the {n_lang} datasets",
            cfg.source
        )));
    }
    let needs_source = matches!(
        scenario,
        Scenario::TransferFrozen | Scenario::TransferFull | Scenario::LabelMap
    );
    if needs_source && cfg.source == target {
        return Err(Error::InvalidArgument(
            "source and target must differ".into(),
        ));
    }

    let target_m = truncate(&corpus.manifests[target], cfg.target_shots, cfg.seed)?;
    let datasets: Vec<DatasetSplit> = corpus
        .manifests
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if i == target {
                corpus.dataset(&target_m, LabelSpace::Gloss)
            } else {
                corpus.dataset(m, LabelSpace::Gloss)
            }
        })
        .collect::<Result<_>>()?;
    let all_train: usize = datasets.iter().map(|d| d.train.len()).sum();
    let runner = Runner {
        cfg,
        reference_train: all_train,
    };
    let tgt = &datasets[target];
    let src = &datasets[cfg.source];
    let mut rows = Vec::new();

    let baseline = |rows: &mut Vec<ReportRow>| -> Result<()> {
        let model = runner.fit(std::slice::from_ref(tgt), EncoderMode::Scratch, None)?;
        rows.push(row("baseline", &model, tgt, tgt.train.len())?);
        Ok(())
    };
    let cotrain = |rows: &mut Vec<ReportRow>| -> Result<CoTrainModel<MlpEncoder>> {
        let model = runner.fit(&datasets, EncoderMode::Scratch, None)?;
        rows.push(row("cotrain", &model, tgt, all_train)?);
        Ok(model)
    };
    let source_model = || runner.fit(std::slice::from_ref(src), EncoderMode::Scratch, None);

    match scenario {
        Scenario::Baseline => baseline(&mut rows)?,
        Scenario::Cotrain => {
            baseline(&mut rows)?;
            cotrain(&mut rows)?;
        }
        Scenario::TransferFrozen | Scenario::TransferFull => {
            let src_model = source_model()?;
            let ck = Checkpoint::from_model(
                &src_model,
                runner
                    .train_cfg(src.train.len(), EncoderMode::Scratch)?
                    .hash(),
            );
            let mode = if scenario == Scenario::TransferFrozen {
                EncoderMode::Frozen
            } else {
                EncoderMode::Pretrained
            };
            baseline(&mut rows)?;
            let model = runner.fit(std::slice::from_ref(tgt), mode, Some(&ck))?;
            rows.push(row(scenario.name(), &model, tgt, tgt.train.len())?);
        }
        Scenario::LabelMap => {
            let src_model = source_model()?;
            let build = test_predictions(&src_model, src, tgt, &tgt.train)?;
            let names = target_m.class_names(LabelSpace::Gloss);
            let map = build_label_map(&build, src.classes, &names)?;
            let mapped = apply_label_map(&map, &test_predictions(&src_model, src, tgt, &tgt.test)?);
            rows.push(ReportRow {
                name: "label-map".into(),
                language: tgt.language.to_string(),
                train_samples: tgt.train.len(),
                test_samples: tgt.test.len(),
                test_hash: test_set_hash(tgt),
                accuracy: top1_accuracy(&mapped)?,
                non_vssign: None,
                vssign: None,
            });
            cotrain(&mut rows)?;
        }
        Scenario::Kshot => {
            for &k in &cfg.kshot_values {
                let m = truncate(&corpus.manifests[target], Some(k), cfg.seed)?;
                let t = corpus.dataset(&m, LabelSpace::Gloss)?;
                let mut data = datasets.clone();
                data[target] = t.clone();
                let n_all: usize = data.iter().map(|d| d.train.len()).sum();
                let base = runner.fit(std::slice::from_ref(&t), EncoderMode::Scratch, None)?;
                rows.push(row(&format!("baseline@{k}"), &base, &t, t.train.len())?);
                let co = runner.fit(&data, EncoderMode::Scratch, None)?;
                rows.push(row(&format!("cotrain@{k}"), &co, &t, n_all)?);
            }
        }
        Scenario::GroupedVsUngrouped => {
            if !target_m.has_grouping() {
                return Err(Error::MissingGrouping);
            }
            for (name, space) in [
                ("ungrouped", LabelSpace::Gloss),
                ("grouped", LabelSpace::Group),
            ] {
                let ds = corpus.dataset(&target_m, space)?;
                let model = runner.fit(std::slice::from_ref(&ds), EncoderMode::Scratch, None)?;
                let preds = test_predictions(&model, &ds, &ds, &ds.test)?;
                let b = grouped_accuracy_breakdown(&preds, &target_m, space)?;
                rows.push(ReportRow {
                    name: name.into(),
                    language: ds.language.to_string(),
                    train_samples: ds.train.len(),
                    test_samples: ds.test.len(),
                    test_hash: test_set_hash(&ds),
                    accuracy: b.whole.accuracy.expect("non-empty test set"),
                    non_vssign: b.non_vssign.accuracy,
                    vssign: b.vssign.accuracy,
                });
            }
        }
    }
    Ok(Report {
        scenario: scenario.name().to_owned(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows,
    })
}
