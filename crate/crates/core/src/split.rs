//! Signer-disjoint train/test split that keeps every gloss's test-sample
//! ratio close to a target `p`.
//!
//! The solver holds exactly `round(p * |S|)` test signers at all times and
//! repeatedly swaps a test signer with a non-test signer whenever the swap
//! lowers the worst per-gloss deviation `max_g |share(g) - p|`, where
//! `share(g)` is the fraction of gloss `g`'s samples recorded by test signers. Candidate test
//! signers are tried in order of their share of the worst gloss: largest
//! first when that gloss is over-represented in test, smallest first
//! otherwise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, GlossId, SignerId, Subset};
use crate::error::{Error, Result};

/// Tolerance used when comparing deviations.
pub const DEVIATION_EPS: f64 = 1e-12;

/// Per-(gloss, signer) sample counts. Ratios are evaluated on demand from the
/// integer counts so `R[g][s] = N[g][s] / N[g]` holds exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioMatrix {
    glosses: Vec<GlossId>,
    signers: Vec<SignerId>,
    counts: Vec<Vec<u64>>,
    totals: Vec<u64>,
}

impl RatioMatrix {
    pub fn glosses(&self) -> &[GlossId] {
        &self.glosses
    }

    pub fn signers(&self) -> &[SignerId] {
        &self.signers
    }

    pub fn count(&self, gloss: usize, signer: usize) -> u64 {
        self.counts[gloss][signer]
    }

    pub fn total(&self, gloss: usize) -> u64 {
        self.totals[gloss]
    }

    pub fn ratio(&self, gloss: usize, signer: usize) -> f64 {
        self.counts[gloss][signer] as f64 / self.totals[gloss] as f64
    }

    /// Builds the matrix from raw counts, indexed `[gloss][signer]`.
    pub fn from_counts(
        glosses: Vec<GlossId>,
        signers: Vec<SignerId>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if counts.len() != glosses.len() || counts.iter().any(|r| r.len() != signers.len()) {
            return Err(Error::Dimension(format!(
                "count table must be {} x {}",
                glosses.len(),
                signers.len()
            )));
        }
        let totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        if let Some(g) = totals.iter().position(|&t| t == 0) {
            return Err(Error::EmptyGloss(glosses[g].to_string()));
        }
        Ok(Self {
            glosses,
            signers,
            counts,
            totals,
        })
    }

    /// Per-gloss test share for the given test-signer membership mask.
    pub fn test_ratios(&self, in_test: &[bool]) -> Vec<f64> {
        (0..self.glosses.len())
            .map(|g| {
                let t: u64 = self.counts[g]
                    .iter()
                    .zip(in_test)
                    .filter(|(_, &t)| t)
                    .map(|(c, _)| *c)
                    .sum();
                t as f64 / self.totals[g] as f64
            })
            .collect()
    }
}

pub fn build_ratio_matrix(m: &DatasetManifest) -> Result<RatioMatrix> {
    let mut counts = vec![vec![0u64; m.signers().len()]; m.glosses().len()];
    for s in m.samples() {
        let g = m.gloss_position(&s.gloss).expect("validated manifest");
        let k = m.signer_position(&s.signer).expect("validated manifest");
        counts[g][k] += 1;
    }
    RatioMatrix::from_counts(
        m.glosses().iter().map(|g| g.id.clone()).collect(),
        m.signers().to_vec(),
        counts,
    )
}

/// How the swap loop picks among improving swaps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwapStrategy {
    /// Accept the first improving swap in scan order.
    #[default]
    FirstImprovement,
    /// Scan all swaps and accept the one with the lowest resulting deviation.
    BestImprovement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub p: f64,
    pub seed: u64,
    /// Swap-round limit; `None` means `10 * |S|`.
    pub max_rounds: Option<usize>,
    /// Extra random initializations on top of the first one.
    pub restarts: usize,
    pub strategy: SwapStrategy,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            p: 0.2,
            seed: 0,
            max_rounds: None,
            restarts: 0,
            strategy: SwapStrategy::FirstImprovement,
        }
    }
}

/// Number of test signers for `n` signers: `p * n` rounded half-up.
pub fn test_signer_count(p: f64, n: usize) -> usize {
    (p * n as f64 + 0.5).floor() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitState {
    pub test_signers: BTreeSet<SignerId>,
    pub deviations: BTreeMap<GlossId, f64>,
    pub worst_dev: f64,
    pub worst_gloss: GlossId,
    pub p: f64,
    /// `worst_dev` after initialization and after every accepted swap.
    pub history: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
    /// Index of the restart that produced this state.
    pub restart: usize,
}

/// Result of one local-search run over signer indices.
#[derive(Clone, Debug)]
pub struct SearchTrace {
    pub in_test: Vec<bool>,
    pub test_counts: Vec<u64>,
    pub history: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
}

impl SearchTrace {
    pub fn worst_dev(&self) -> f64 {
        *self
            .history
            .last()
            .expect("history holds the initial deviation")
    }
}

fn deviation(test: u64, total: u64, p: f64) -> f64 {
    (test as f64 / total as f64 - p).abs()
}

/// Worst deviation and its gloss; ties go to the lowest gloss index.
fn worst(mat: &RatioMatrix, test_counts: &[u64], p: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (g, &t) in test_counts.iter().enumerate() {
        let d = deviation(t, mat.totals[g], p);
        if d > best.0 + DEVIATION_EPS {
            best = (d, g);
        }
    }
    best
}

/// Worst deviation after swapping `out` for `inn`, or `None` as soon as it is
/// known not to beat `bound`.
fn swapped_worst(
    mat: &RatioMatrix,
    test_counts: &[u64],
    p: f64,
    out: usize,
    inn: usize,
    first_gloss: usize,
    bound: f64,
) -> Option<f64> {
    let eval = |g: usize| {
        let t = test_counts[g] - mat.counts[g][out] + mat.counts[g][inn];
        deviation(t, mat.totals[g], p)
    };
    // the worst gloss must itself improve, so check it first
    let d0 = eval(first_gloss);
    if d0 >= bound - DEVIATION_EPS {
        return None;
    }
    let mut w = d0;
    for g in 0..test_counts.len() {
        if g == first_gloss {
            continue;
        }
        let d = eval(g);
        if d >= bound - DEVIATION_EPS {
            return None;
        }
        w = w.max(d);
    }
    Some(w)
}

/// Runs the swap loop from the initial test set `in_test`.
pub fn local_search(
    mat: &RatioMatrix,
    mut in_test: Vec<bool>,
    p: f64,
    max_rounds: usize,
    strategy: SwapStrategy,
) -> SearchTrace {
    let n_glosses = mat.glosses.len();
    let mut test_counts: Vec<u64> = (0..n_glosses)
        .map(|g| {
            mat.counts[g]
                .iter()
                .zip(&in_test)
                .filter(|(_, &t)| t)
                .map(|(c, _)| *c)
                .sum()
        })
        .collect();

    let mut history = Vec::new();
    let mut rounds = 0;
    let mut converged = false;
    loop {
        let (worst_dev, worst_g) = if n_glosses == 0 {
            (0.0, 0)
        } else {
            worst(mat, &test_counts, p)
        };
        history.push(worst_dev);
        if n_glosses == 0 || worst_dev <= DEVIATION_EPS {
            converged = true;
            break;
        }
        if rounds == max_rounds {
            break;
        }

        let over = test_counts[worst_g] as f64 / mat.totals[worst_g] as f64 > p;
        let mut candidates: Vec<usize> = (0..in_test.len()).filter(|&s| in_test[s]).collect();
        // stable sort keeps signer-id order among ties
        candidates.sort_by(|&a, &b| {
            let (ca, cb) = (mat.counts[worst_g][a], mat.counts[worst_g][b]);
            if over {
                cb.cmp(&ca)
            } else {
                ca.cmp(&cb)
            }
        });
        let outside: Vec<usize> = (0..in_test.len()).filter(|&s| !in_test[s]).collect();

        let mut chosen: Option<(usize, usize, f64)> = None;
        'scan: for &out in &candidates {
            for &inn in &outside {
                let bound = match (strategy, chosen) {
                    (SwapStrategy::BestImprovement, Some((_, _, d))) => d,
                    _ => worst_dev,
                };
                if let Some(d) = swapped_worst(mat, &test_counts, p, out, inn, worst_g, bound) {
                    chosen = Some((out, inn, d));
                    if strategy == SwapStrategy::FirstImprovement {
                        break 'scan;
                    }
                }
            }
        }

        match chosen {
            Some((out, inn, _)) => {
                in_test[out] = false;
                in_test[inn] = true;
                for (t, row) in test_counts.iter_mut().zip(&mat.counts) {
                    *t = *t - row[out] + row[inn];
                }
                rounds += 1;
            }
            None => {
                converged = true;
                break;
            }
        }
    }

    SearchTrace {
        in_test,
        test_counts,
        history,
        rounds,
        converged,
    }
}

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random initial test set of size `k` for restart `restart`.
pub fn initial_test_set(n_signers: usize, k: usize, seed: u64, restart: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, restart as u64));
    let mut in_test = vec![false; n_signers];
    for i in index::sample(&mut rng, n_signers, k).iter() {
        in_test[i] = true;
    }
    in_test
}

/// Optimizes the split on a ratio matrix, returning the best trace and the
/// restart index that produced it.
pub fn optimize_matrix(mat: &RatioMatrix, cfg: &SplitConfig) -> Result<(SearchTrace, usize)> {
    let n = mat.signers.len();
    if !(cfg.p > 0.0 && cfg.p < 1.0) {
        return Err(Error::Infeasible(format!(
            "p = {} is outside (0, 1)",
            cfg.p
        )));
    }
    if n < 2 {
        return Err(Error::Infeasible(format!(
            "{n} signers; at least 2 required"
        )));
    }
    let k = test_signer_count(cfg.p, n);
    if k == 0 || k >= n {
        return Err(Error::Infeasible(format!(
            "round({} * {n}) = {k} test signers leaves an empty side",
            cfg.p
        )));
    }
    let max_rounds = cfg.max_rounds.unwrap_or(10 * n);

    let runs: Vec<SearchTrace> = (0..=cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let init = initial_test_set(n, k, cfg.seed, r);
            local_search(mat, init, cfg.p, max_rounds, cfg.strategy)
        })
        .collect();

    let (best_idx, _) =
        runs.iter()
            .enumerate()
            .fold((0usize, f64::INFINITY), |(bi, bd), (i, t)| {
                if t.worst_dev() < bd - DEVIATION_EPS {
                    (i, t.worst_dev())
                } else {
                    (bi, bd)
                }
            });
    let best = runs.into_iter().nth(best_idx).expect("at least one run");
    Ok((best, best_idx))
}

fn state_from_trace(mat: &RatioMatrix, trace: &SearchTrace, p: f64, restart: usize) -> SplitState {
    let deviations: BTreeMap<GlossId, f64> = mat
        .glosses
        .iter()
        .enumerate()
        .map(|(g, id)| {
            (
                id.clone(),
                trace.test_counts[g] as f64 / mat.totals[g] as f64,
            )
        })
        .collect();
    let (worst_dev, g) = if mat.glosses.is_empty() {
        (0.0, None)
    } else {
        let (d, g) = worst(mat, &trace.test_counts, p);
        (d, Some(g))
    };
    SplitState {
        test_signers: trace
            .in_test
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(s, _)| mat.signers[s].clone())
            .collect(),
        deviations,
        worst_dev,
        worst_gloss: g
            .map(|g| mat.glosses[g].clone())
            .unwrap_or_else(|| GlossId::new("")),
        p,
        history: trace.history.clone(),
        rounds: trace.rounds,
        converged: trace.converged,
        restart,
    }
}

/// Chooses test signers and marks every sample train or test accordingly.
pub fn optimize_split(
    m: &DatasetManifest,
    cfg: &SplitConfig,
) -> Result<(SplitState, DatasetManifest)> {
    let mat = build_ratio_matrix(m)?;
    let (trace, restart) = optimize_matrix(&mat, cfg)?;
    let state = state_from_trace(&mat, &trace, cfg.p, restart);
    let samples = m
        .samples()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.subset = if state.test_signers.contains(&s.signer) {
                Subset::Test
            } else {
                Subset::Train
            };
            s
        })
        .collect();
    Ok((state, m.with_samples(samples)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub p: f64,
    pub signers_total: usize,
    pub signers_test: usize,
    pub signer_test_fraction: f64,
    pub samples_total: usize,
    pub samples_test: usize,
    pub sample_test_fraction: f64,
    pub worst_dev: f64,
    pub worst_gloss: Option<GlossId>,
    pub threshold: f64,
    /// Histogram of per-gloss test shares over ten equal bins of `[0, 1]`.
    pub histogram: Vec<HistogramBin>,
    pub deviations: BTreeMap<GlossId, f64>,
    /// Glosses whose test share is more than `threshold` away from `p`, with
    /// that share.
    pub exceeding: Vec<(GlossId, f64)>,
}

/// Audits an assigned split: test fractions, per-gloss ratios and the worst
/// deviation from `p`.
pub fn verify_split(m: &DatasetManifest, p: f64, threshold: f64) -> Result<SplitReport> {
    let unassigned = m.count_subset(Subset::Unassigned);
    if unassigned > 0 {
        return Err(Error::Unassigned(unassigned));
    }
    let mut signer_side: BTreeMap<&SignerId, Subset> = BTreeMap::new();
    for s in m.samples() {
        if let Some(prev) = signer_side.insert(&s.signer, s.subset) {
            if prev != s.subset {
                return Err(Error::Integrity(format!(
                    "signer `{}` contributes to both train and test",
                    s.signer
                )));
            }
        }
    }
    let signers_test = signer_side.values().filter(|&&v| v == Subset::Test).count();

    let mut totals = vec![0u64; m.glosses().len()];
    let mut tests = vec![0u64; m.glosses().len()];
    for s in m.samples() {
        let g = m.gloss_position(&s.gloss).expect("validated");
        totals[g] += 1;
        if s.subset == Subset::Test {
            tests[g] += 1;
        }
    }

    let mut deviations = BTreeMap::new();
    let mut histogram: Vec<HistogramBin> = (0..10)
        .map(|i| HistogramBin {
            lo: i as f64 / 10.0,
            hi: (i + 1) as f64 / 10.0,
            count: 0,
        })
        .collect();
    let mut worst_dev = 0.0;
    let mut worst_gloss = None;
    let mut exceeding = Vec::new();
    for (g, gloss) in m.glosses().iter().enumerate() {
        if totals[g] == 0 {
            continue;
        }
        let d = tests[g] as f64 / totals[g] as f64;
        let dev = (d - p).abs();
        deviations.insert(gloss.id.clone(), d);
        histogram[((d * 10.0).floor() as usize).min(9)].count += 1;
        if worst_gloss.is_none() || dev > worst_dev + DEVIATION_EPS {
            worst_dev = dev;
            worst_gloss = Some(gloss.id.clone());
        }
        if dev > threshold {
            exceeding.push((gloss.id.clone(), d));
        }
    }

    let samples_total = m.samples().len();
    let samples_test = m.count_subset(Subset::Test);
    let signers_total = m.signers().len();
    Ok(SplitReport {
        p,
        signers_total,
        signers_test,
        signer_test_fraction: ratio(signers_test, signers_total),
        samples_total,
        samples_test,
        sample_test_fraction: ratio(samples_test, samples_total),
        worst_dev,
        worst_gloss,
        threshold,
        histogram,
        deviations,
        exceeding,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
