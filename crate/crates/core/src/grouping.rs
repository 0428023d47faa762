//! Grouping of visually similar signs.
//!
//! Two stages feed one partition of the gloss vocabulary. First, a
//! classifier's confidence vectors on the template videos propose the `k`
//! most similar glosses for every gloss; experts vote on each proposed pair
//! and pairs matched by a majority are merged. Then, over several refinement
//! rounds, the most confused class pairs of a model trained on the current
//! groups are queued for another vote.
//!
//! Merging is transitive: groups are the connected components of the graph of
//! matched pairs. The partition only ever coarsens.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, GlossId, GroupId, GroupLabel};
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_QUORUM: usize = 5;
pub const DEFAULT_MAJORITY: usize = 3;
pub const DEFAULT_REFINEMENT_ROUNDS: usize = 3;

/// Disjoint-set forest with path compression and union by rank.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    components: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            components: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Finds the root without compressing paths.
    pub fn root(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    /// Returns true if `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        self.components -= 1;
        true
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }
}

/// Canonical unordered gloss pair, `a < b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub a: GlossId,
    pub b: GlossId,
}

impl PairKey {
    /// Orders the two ids; `None` when they are equal.
    pub fn new(x: GlossId, y: GlossId) -> Option<Self> {
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Some(Self { a: x, b: y }),
            std::cmp::Ordering::Greater => Some(Self { a: y, b: x }),
            std::cmp::Ordering::Equal => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    TemplateSimilarity,
    ConfusionRefinement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub a: GlossId,
    pub b: GlossId,
    pub rank: usize,
    pub source: CandidateSource,
}

impl CandidatePair {
    pub fn key(&self) -> PairKey {
        PairKey {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }
}

/// Square score table over a label vocabulary: template confidences or a
/// confusion matrix. Row `i` belongs to `labels[i]`; columns follow the same
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    labels: Vec<GlossId>,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRow {
    label: GlossId,
    scores: Vec<f64>,
}

impl ScoreTable {
    fn checked(labels: Vec<GlossId>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != labels.len() || rows.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::Dimension(format!(
                "score table must be square over {} labels",
                labels.len()
            )));
        }
        let distinct: BTreeSet<&GlossId> = labels.iter().collect();
        if distinct.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "duplicate labels in score table".into(),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "score table entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { labels, rows })
    }

    /// Template confidence table; each row must sum to 1 within 1e-6.
    pub fn templates(labels: Vec<GlossId>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self::checked(labels, rows)?;
        for (label, row) in t.labels.iter().zip(&t.rows) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "row `{label}` sums to {s}, expected 1"
                )));
            }
        }
        Ok(t)
    }

    /// Confusion matrix without a normalization requirement.
    pub fn confusion(labels: Vec<GlossId>, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::checked(labels, rows)
    }

    /// Row-normalized confusion matrix from `(true, predicted)` class index
    /// pairs. Rows of classes without samples stay zero.
    pub fn confusion_from_predictions(
        labels: Vec<GlossId>,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let n = labels.len();
        let mut rows = vec![vec![0.0; n]; n];
        for &(t, p) in pairs {
            if t >= n || p >= n {
                return Err(Error::Dimension(format!("class index out of range 0..{n}")));
            }
            rows[t][p] += 1.0;
        }
        for row in rows.iter_mut() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        Self::checked(labels, rows)
    }

    /// Cosine similarity between embedding vectors, one per label.
    pub fn cosine_similarity(labels: Vec<GlossId>, embeddings: &[Vec<f64>]) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::Dimension("one embedding per label required".into()));
        }
        let norms: Vec<f64> = embeddings
            .iter()
            .map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rows = embeddings
            .iter()
            .zip(&norms)
            .map(|(x, nx)| {
                embeddings
                    .iter()
                    .zip(&norms)
                    .map(|(y, ny)| {
                        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                        if *nx == 0.0 || *ny == 0.0 {
                            0.0
                        } else {
                            // cosine mapped to [0, 1]
                            (1.0 + dot / (nx * ny)) / 2.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self::checked(labels, rows)
    }

    pub fn labels(&self) -> &[GlossId] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn load(path: impl AsRef<Path>, normalized: bool) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ScoreRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            labels.push(row.label);
            rows.push(row.scores);
        }
        if normalized {
            Self::templates(labels, rows)
        } else {
            Self::confusion(labels, rows)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (label, row) in self.labels.iter().zip(&self.rows) {
            let rec = ScoreRow {
                label: label.clone(),
                scores: row.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Top-`k` off-diagonal entries of every row as canonical pairs. A pair
/// proposed from both rows keeps its better rank. Output is sorted by rank,
/// then pair.
pub fn candidate_pairs_from_templates(t: &ScoreTable, k: usize) -> Result<Vec<CandidatePair>> {
    let n = t.labels.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..{n} for a {n}-gloss vocabulary"
        )));
    }
    let mut best: BTreeMap<PairKey, usize> = BTreeMap::new();
    for (i, row) in t.rows.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
        for (pos, &j) in order.iter().take(k).enumerate() {
            let key = PairKey::new(t.labels[i].clone(), t.labels[j].clone()).expect("i != j");
            let rank = pos + 1;
            best.entry(key)
                .and_modify(|r| *r = (*r).min(rank))
                .or_insert(rank);
        }
    }
    let mut out: Vec<CandidatePair> = best
        .into_iter()
        .map(|(key, rank)| CandidatePair {
            a: key.a,
            b: key.b,
            rank,
            source: CandidateSource::TemplateSimilarity,
        })
        .collect();
    out.sort_by(|x, y| x.rank.cmp(&y.rank).then_with(|| x.key().cmp(&y.key())));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRecord {
    pub a: GlossId,
    pub b: GlossId,
    pub expert: String,
    /// True when the two signs differ only in non-manual components.
    pub verdict: bool,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl VoteRecord {
    pub fn key(&self) -> Option<PairKey> {
        PairKey::new(self.a.clone(), self.b.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjudication {
    Matched,
    Rejected,
    Pending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub a: GlossId,
    pub b: GlossId,
    pub votes: usize,
    pub yes: usize,
    pub status: Adjudication,
}

impl PairOutcome {
    pub fn matched(&self) -> bool {
        self.status == Adjudication::Matched
    }

    pub fn key(&self) -> PairKey {
        PairKey {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }
}

/// Closes a pair once `quorum` verdicts exist; it is matched when at least
/// `majority` of them are true. Outcomes are sorted by pair.
pub fn aggregate_votes(
    votes: &[VoteRecord],
    quorum: usize,
    majority: usize,
) -> Result<Vec<PairOutcome>> {
    if quorum == 0 || majority == 0 || majority > quorum {
        return Err(Error::InvalidArgument(format!(
            "majority {majority} of quorum {quorum} is not a valid rule"
        )));
    }
    let mut by_pair: BTreeMap<PairKey, BTreeMap<&str, bool>> = BTreeMap::new();
    for v in votes {
        let key = v.key().ok_or_else(|| {
            Error::InvalidArgument(format!("vote pairs gloss `{}` with itself", v.a))
        })?;
        let experts = by_pair.entry(key.clone()).or_default();
        if experts.insert(v.expert.as_str(), v.verdict).is_some() {
            return Err(Error::DuplicateVote {
                expert: v.expert.clone(),
                a: key.a.to_string(),
                b: key.b.to_string(),
            });
        }
    }
    Ok(by_pair
        .into_iter()
        .map(|(key, experts)| {
            let votes = experts.len();
            let yes = experts.values().filter(|&&v| v).count();
            let status = if votes < quorum {
                Adjudication::Pending
            } else if yes >= majority {
                Adjudication::Matched
            } else {
                Adjudication::Rejected
            };
            PairOutcome {
                a: key.a,
                b: key.b,
                votes,
                yes,
                status,
            }
        })
        .collect())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads a vote log; a missing file holds no votes.
pub fn load_votes(path: impl AsRef<Path>) -> Result<Vec<VoteRecord>> {
    read_jsonl(path.as_ref())
}

/// Reads candidate pairs, one per line.
pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidatePair>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::ErrorKind::NotFound.into()));
    }
    read_jsonl(path)
}

pub fn write_candidates(w: &mut impl Write, pairs: &[CandidatePair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut *w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes one vote as a single line.
pub fn write_vote(w: &mut impl Write, vote: &VoteRecord) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(vote)?;
    line.push(b'\n');
    w.write_all(&line)
}

/// Current partition of the gloss vocabulary plus the adjudication queue.
#[derive(Clone, Debug)]
pub struct GroupingState {
    glosses: Vec<GlossId>,
    partition: UnionFind,
    pending: VecDeque<CandidatePair>,
    votes: Vec<VoteRecord>,
    round: usize,
}

impl GroupingState {
    /// All-singleton partition over `glosses`.
    pub fn new(glosses: impl IntoIterator<Item = GlossId>) -> Self {
        let mut glosses: Vec<GlossId> = glosses.into_iter().collect();
        glosses.sort();
        glosses.dedup();
        let n = glosses.len();
        Self {
            glosses,
            partition: UnionFind::new(n),
            pending: VecDeque::new(),
            votes: Vec::new(),
            round: 0,
        }
    }

    /// Starts from the grouping stored in `m`, or singletons when absent.
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        let mut gs = Self::new(m.glosses().iter().map(|g| g.id.clone()));
        for group in m.groups() {
            let mut members = group.members.iter();
            if let Some(first) = members.next() {
                let i = gs.index(first).expect("validated manifest");
                for other in members {
                    let j = gs.index(other).expect("validated manifest");
                    gs.partition.union(i, j);
                }
            }
        }
        gs
    }

    fn index(&self, g: &GlossId) -> Option<usize> {
        self.glosses.binary_search(g).ok()
    }

    fn index_or_err(&self, g: &GlossId) -> Result<usize> {
        self.index(g)
            .ok_or_else(|| Error::UnknownLabel(g.to_string()))
    }

    pub fn glosses(&self) -> &[GlossId] {
        &self.glosses
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn pending(&self) -> impl Iterator<Item = &CandidatePair> {
        self.pending.iter()
    }

    pub fn votes(&self) -> &[VoteRecord] {
        &self.votes
    }

    pub fn num_groups(&self) -> usize {
        self.partition.components()
    }

    pub fn same_group(&self, a: &GlossId, b: &GlossId) -> bool {
        match (self.index(a), self.index(b)) {
            (Some(i), Some(j)) => self.partition.root(i) == self.partition.root(j),
            _ => false,
        }
    }

    /// Id of the group holding `g`: its lexicographically smallest member.
    pub fn group_of(&self, g: &GlossId) -> Option<GroupId> {
        let i = self.index(g)?;
        let root = self.partition.root(i);
        self.glosses
            .iter()
            .enumerate()
            .find(|(j, _)| self.partition.root(*j) == root)
            .map(|(_, id)| GroupId::new(id.as_str()))
    }

    /// Groups as labels, each named after its smallest member, sorted by id.
    pub fn groups(&self) -> Vec<GroupLabel> {
        let mut by_root: BTreeMap<usize, BTreeSet<GlossId>> = BTreeMap::new();
        for (i, g) in self.glosses.iter().enumerate() {
            by_root
                .entry(self.partition.root(i))
                .or_default()
                .insert(g.clone());
        }
        let mut out: Vec<GroupLabel> = by_root
            .into_values()
            .map(|members| GroupLabel {
                id: GroupId::new(members.iter().next().expect("non-empty").as_str()),
                members,
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Writes the current groups into `m`.
    pub fn apply_to(&self, m: &DatasetManifest) -> Result<DatasetManifest> {
        m.with_groups(self.groups())
    }

    /// Queues candidates, skipping pairs already in one group or already
    /// queued.
    pub fn enqueue(&mut self, candidates: impl IntoIterator<Item = CandidatePair>) {
        for c in candidates {
            if self.same_group(&c.a, &c.b) || self.pending.iter().any(|p| p.key() == c.key()) {
                continue;
            }
            self.pending.push_back(c);
        }
    }

    /// Records votes; one verdict per (pair, expert).
    pub fn record_votes(&mut self, votes: impl IntoIterator<Item = VoteRecord>) -> Result<()> {
        let mut seen: BTreeSet<(PairKey, String)> = self
            .votes
            .iter()
            .filter_map(|v| v.key().map(|k| (k, v.expert.clone())))
            .collect();
        let mut fresh = Vec::new();
        for v in votes {
            let key = v
                .key()
                .ok_or_else(|| Error::InvalidArgument("vote pairs a gloss with itself".into()))?;
            if !seen.insert((key.clone(), v.expert.clone())) {
                return Err(Error::DuplicateVote {
                    expert: v.expert,
                    a: key.a.to_string(),
                    b: key.b.to_string(),
                });
            }
            fresh.push(v);
        }
        self.votes.extend(fresh);
        Ok(())
    }

    /// Begins the next refinement round.
    pub fn next_round(&mut self) -> usize {
        self.round += 1;
        self.round
    }

    /// Removes adjudicated pairs from the queue.
    pub fn resolve(&mut self, closed: &[PairKey]) {
        let closed: BTreeSet<&PairKey> = closed.iter().collect();
        self.pending.retain(|p| !closed.contains(&p.key()));
    }
}

/// Merges every matched pair; the resulting groups are the connected
/// components of the matched-pair graph joined with the existing partition.
pub fn merge_matched(mut gs: GroupingState, matched: &[PairKey]) -> Result<GroupingState> {
    for pair in matched {
        let i = gs.index_or_err(&pair.a)?;
        let j = gs.index_or_err(&pair.b)?;
        gs.partition.union(i, j);
    }
    let pending = std::mem::take(&mut gs.pending);
    gs.pending = pending
        .into_iter()
        .filter(|p| !gs.same_group(&p.a, &p.b))
        .collect();
    Ok(gs)
}

/// The `top_m` most confused pairs of distinct groups, scored by the
/// symmetrized off-diagonal mass `C[i][j] + C[j][i]`. Table labels are group
/// ids, which are member gloss ids. Pairs with zero mass are skipped.
pub fn refinement_candidates(
    confusion: &ScoreTable,
    gs: &GroupingState,
    top_m: usize,
) -> Vec<CandidatePair> {
    let n = confusion.labels.len();
    let mut scored = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mass = confusion.rows[i][j] + confusion.rows[j][i];
            if mass <= 0.0 {
                continue;
            }
            let (a, b) = (&confusion.labels[i], &confusion.labels[j]);
            if gs.same_group(a, b) {
                continue;
            }
            let key = PairKey::new(a.clone(), b.clone()).expect("distinct labels");
            scored.push((mass, key));
        }
    }
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
    scored
        .into_iter()
        .take(top_m)
        .enumerate()
        .map(|(pos, (_, key))| CandidatePair {
            a: key.a,
            b: key.b,
            rank: pos + 1,
            source: CandidateSource::ConfusionRefinement,
        })
        .collect()
}
