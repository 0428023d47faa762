use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::dataset::LanguageTag;

/// Maps a feature sequence (frames x features) to a fixed-size embedding and
/// back-propagates gradients of that embedding into its own parameters.
pub trait Encoder: Clone + Send + Sync {
    type Cache;

    fn input_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;

    /// Embeddings, one row per item, plus whatever `backward` needs.
    fn forward(&self, items: &[ArrayView2<'_, f64>]) -> (Array2<f64>, Self::Cache);

    /// Parameter gradients, in `params()` order, for the given gradient of
    /// the loss with respect to the embeddings.
    fn backward(&self, cache: &Self::Cache, d_embed: &Array2<f64>) -> Vec<Array2<f64>>;

    fn params(&self) -> Vec<(String, &Array2<f64>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)>;

    fn embed(&self, items: &[ArrayView2<'_, f64>]) -> Array2<f64> {
        self.forward(items).0
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Two tanh layers applied frame by frame, then a mean over frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpEncoder {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

pub struct MlpCache {
    x: Array2<f64>,
    h: Array2<f64>,
    z: Array2<f64>,
    offsets: Vec<usize>,
}

impl MlpEncoder {
    pub fn new(input_dim: usize, hidden: usize, embed: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: xavier(hidden, input_dim, rng),
            b1: Array2::zeros((1, hidden)),
            w2: xavier(embed, hidden, rng),
            b2: Array2::zeros((1, embed)),
        }
    }
}

impl Encoder for MlpEncoder {
    type Cache = MlpCache;

    fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    fn embed_dim(&self) -> usize {
        self.w2.nrows()
    }

    fn forward(&self, items: &[ArrayView2<'_, f64>]) -> (Array2<f64>, MlpCache) {
        let mut offsets = Vec::with_capacity(items.len() + 1);
        offsets.push(0);
        for it in items {
            offsets.push(offsets.last().unwrap() + it.nrows());
        }
        let x = if items.is_empty() {
            Array2::zeros((0, self.input_dim()))
        } else {
            ndarray::concatenate(Axis(0), items).expect("consistent feature width")
        };
        let mut h = x.dot(&self.w1.t());
        h += &self.b1;
        h.mapv_inplace(f64::tanh);
        let mut z = h.dot(&self.w2.t());
        z += &self.b2;
        z.mapv_inplace(f64::tanh);

        let mut emb = Array2::zeros((items.len(), self.embed_dim()));
        for i in 0..items.len() {
            let (a, b) = (offsets[i], offsets[i + 1]);
            if b > a {
                let mean = z.slice(s![a..b, ..]).sum_axis(Axis(0)) / (b - a) as f64;
                emb.row_mut(i).assign(&mean);
            }
        }
        (emb, MlpCache { x, h, z, offsets })
    }

    fn backward(&self, cache: &MlpCache, d_embed: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut dz = Array2::zeros(cache.z.raw_dim());
        for i in 0..d_embed.nrows() {
            let (a, b) = (cache.offsets[i], cache.offsets[i + 1]);
            if b > a {
                let g = &d_embed.row(i) / (b - a) as f64;
                for mut row in dz.slice_mut(s![a..b, ..]).rows_mut() {
                    row.assign(&g);
                }
            }
        }
        let da2 = dz * &cache.z.mapv(|v| 1.0 - v * v);
        let dw2 = da2.t().dot(&cache.h);
        let db2 = da2.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dh = da2.dot(&self.w2);
        let da1 = dh * &cache.h.mapv(|v| 1.0 - v * v);
        let dw1 = da1.t().dot(&cache.x);
        let db1 = da1.sum_axis(Axis(0)).insert_axis(Axis(0));
        vec![dw1, db1, dw2, db2]
    }

    fn params(&self) -> Vec<(String, &Array2<f64>)> {
        vec![
            ("encoder.w1".into(), &self.w1),
            ("encoder.b1".into(), &self.b1),
            ("encoder.w2".into(), &self.w2),
            ("encoder.b2".into(), &self.b2),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        vec![
            ("encoder.w1".into(), &mut self.w1),
            ("encoder.b1".into(), &mut self.b1),
            ("encoder.w2".into(), &mut self.w2),
            ("encoder.b2".into(), &mut self.b2),
        ]
    }
}

/// Affine map from embeddings to `outputs` values.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl LinearHead {
    pub fn new(embed: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: xavier(outputs, embed, rng),
            bias: Array2::zeros((1, outputs)),
        }
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, emb: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = emb.dot(&self.weight.t());
        out += &self.bias;
        out
    }

    /// Gradients `(d_weight, d_bias)` and the gradient flowing back into the
    /// embeddings.
    pub fn backward(
        &self,
        emb: &ArrayView2<'_, f64>,
        d_out: &Array2<f64>,
    ) -> ((Array2<f64>, Array2<f64>), Array2<f64>) {
        let dw = d_out.t().dot(emb);
        let db = d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let demb = d_out.dot(&self.weight);
        ((dw, db), demb)
    }
}

/// Shared encoder, one classification head per language, and a two-output
/// boundary regression head.
#[derive(Clone, Debug)]
pub struct CoTrainModel<E> {
    pub encoder: E,
    pub heads: BTreeMap<LanguageTag, LinearHead>,
    pub regression: LinearHead,
}

impl<E: Encoder> CoTrainModel<E> {
    pub fn new(encoder: E, classes: &BTreeMap<LanguageTag, usize>, rng: &mut impl Rng) -> Self {
        let e = encoder.embed_dim();
        let heads = classes
            .iter()
            .map(|(lang, &c)| (lang.clone(), LinearHead::new(e, c, rng)))
            .collect();
        let regression = LinearHead::new(e, 2, rng);
        Self {
            encoder,
            heads,
            regression,
        }
    }

    /// Every parameter with its stable name: encoder, heads by language,
    /// then the regression head.
    pub fn named_params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = self.encoder.params();
        for (lang, head) in &self.heads {
            out.push((format!("head.{lang}.weight"), &head.weight));
            out.push((format!("head.{lang}.bias"), &head.bias));
        }
        out.push(("regression.weight".into(), &self.regression.weight));
        out.push(("regression.bias".into(), &self.regression.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = self.encoder.params_mut();
        for (lang, head) in self.heads.iter_mut() {
            out.push((format!("head.{lang}.weight"), &mut head.weight));
            out.push((format!("head.{lang}.bias"), &mut head.bias));
        }
        out.push(("regression.weight".into(), &mut self.regression.weight));
        out.push(("regression.bias".into(), &mut self.regression.bias));
        out
    }

    /// Predicted class of each item under `language`'s head.
    pub fn predict(
        &self,
        items: &[ArrayView2<'_, f64>],
        language: &LanguageTag,
    ) -> Option<Vec<usize>> {
        let head = self.heads.get(language)?;
        let emb = self.encoder.embed(items);
        let logits = head.forward(&emb.view());
        Some(
            logits
                .rows()
                .into_iter()
                .map(|r| argmax(r.iter().copied()))
                .collect(),
        )
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
