//! Adjudication book behind the review service: open tasks per candidate
//! pair, one verdict per (pair, expert), and an append-only vote log that
//! rebuilds the same state on restart.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::GlossId;
use crate::error::{Error, Result};
use crate::grouping::{
    load_votes, write_vote, CandidatePair, CandidateSource, PairKey, VoteRecord,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub a: GlossId,
    pub b: GlossId,
    pub rank: usize,
    pub source: CandidateSource,
    pub media_a: String,
    pub media_b: String,
    pub votes_recorded: usize,
    pub status: TaskStatus,
}

impl ReviewTask {
    pub fn key(&self) -> PairKey {
        PairKey {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteAck {
    pub a: GlossId,
    pub b: GlossId,
    pub votes_recorded: usize,
    pub status: TaskStatus,
    /// True when this was an identical resubmission of an existing vote.
    pub duplicate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub tasks_total: usize,
    pub tasks_closed: usize,
    pub votes_total: usize,
    pub quorum: usize,
}

/// Default media locator for a gloss's template video.
pub fn template_uri(g: &GlossId) -> String {
    format!("template://{g}")
}

pub struct ReviewBook {
    quorum: usize,
    experts: BTreeSet<String>,
    tasks: Vec<ReviewTask>,
    index: BTreeMap<PairKey, usize>,
    voted: BTreeMap<PairKey, BTreeMap<String, bool>>,
    votes: Vec<VoteRecord>,
    log: Option<(PathBuf, File)>,
}

impl ReviewBook {
    /// In-memory book; votes are not persisted.
    pub fn new(
        candidates: impl IntoIterator<Item = CandidatePair>,
        media: impl Fn(&GlossId) -> String,
        experts: impl IntoIterator<Item = String>,
        quorum: usize,
    ) -> Result<Self> {
        if quorum == 0 {
            return Err(Error::InvalidArgument("quorum must be positive".into()));
        }
        let mut tasks: Vec<ReviewTask> = Vec::new();
        let mut seen = BTreeSet::new();
        for c in candidates {
            let key = PairKey::new(c.a.clone(), c.b.clone())
                .ok_or_else(|| Error::InvalidArgument(format!("self-pair `{}`", c.a)))?;
            if !seen.insert(key.clone()) {
                continue;
            }
            tasks.push(ReviewTask {
                media_a: media(&key.a),
                media_b: media(&key.b),
                a: key.a,
                b: key.b,
                rank: c.rank,
                source: c.source,
                votes_recorded: 0,
                status: TaskStatus::Open,
            });
        }
        tasks.sort_by(|x, y| x.rank.cmp(&y.rank).then_with(|| x.key().cmp(&y.key())));
        let index = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.key(), i))
            .collect();
        Ok(Self {
            quorum,
            experts: experts.into_iter().collect(),
            tasks,
            index,
            voted: BTreeMap::new(),
            votes: Vec::new(),
            log: None,
        })
    }

    /// Book backed by the vote log at `path`: existing votes are replayed,
    /// new ones are appended and synced before they are acknowledged.
    pub fn open(
        path: impl AsRef<Path>,
        candidates: impl IntoIterator<Item = CandidatePair>,
        media: impl Fn(&GlossId) -> String,
        experts: impl IntoIterator<Item = String>,
        quorum: usize,
    ) -> Result<Self> {
        let path = path.as_ref();
        let mut book = Self::new(candidates, media, experts, quorum)?;
        for v in load_votes(path)? {
            book.apply(v)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        book.log = Some((path.to_path_buf(), file));
        Ok(book)
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn tasks(&self) -> &[ReviewTask] {
        &self.tasks
    }

    pub fn votes(&self) -> &[VoteRecord] {
        &self.votes
    }

    pub fn is_expert(&self, expert: &str) -> bool {
        self.experts.contains(expert)
    }

    fn check_expert(&self, expert: &str) -> Result<()> {
        if self.is_expert(expert) {
            Ok(())
        } else {
            Err(Error::UnknownExpert(expert.to_owned()))
        }
    }

    /// Lowest-ranked open task the expert has not voted on.
    pub fn next_task(&self, expert: &str) -> Result<Option<ReviewTask>> {
        self.check_expert(expert)?;
        Ok(self
            .tasks
            .iter()
            .find(|t| {
                t.status == TaskStatus::Open
                    && !self
                        .voted
                        .get(&t.key())
                        .is_some_and(|e| e.contains_key(expert))
            })
            .cloned())
    }

    /// Validates and records a vote in memory. Returns the ack and whether
    /// the vote is new.
    fn apply(&mut self, vote: VoteRecord) -> Result<(VoteAck, bool)> {
        self.check_expert(&vote.expert)?;
        let key = vote
            .key()
            .ok_or_else(|| Error::InvalidArgument(format!("self-pair `{}`", vote.a)))?;
        let &i = self
            .index
            .get(&key)
            .ok_or_else(|| Error::UnknownTask(key.a.to_string(), key.b.to_string()))?;
        let ack = |task: &ReviewTask, duplicate| VoteAck {
            a: task.a.clone(),
            b: task.b.clone(),
            votes_recorded: task.votes_recorded,
            status: task.status,
            duplicate,
        };
        if let Some(&prev) = self.voted.get(&key).and_then(|e| e.get(&vote.expert)) {
            if prev == vote.verdict {
                return Ok((ack(&self.tasks[i], true), false));
            }
            return Err(Error::DuplicateVote {
                expert: vote.expert,
                a: key.a.to_string(),
                b: key.b.to_string(),
            });
        }
        if self.tasks[i].status == TaskStatus::Closed {
            return Err(Error::TaskClosed(key.a.to_string(), key.b.to_string()));
        }
        self.voted
            .entry(key)
            .or_default()
            .insert(vote.expert.clone(), vote.verdict);
        let task = &mut self.tasks[i];
        task.votes_recorded += 1;
        if task.votes_recorded >= self.quorum {
            task.status = TaskStatus::Closed;
        }
        let out = ack(task, false);
        self.votes.push(vote);
        Ok((out, true))
    }

    pub fn submit_vote(
        &mut self,
        expert: &str,
        a: GlossId,
        b: GlossId,
        verdict: bool,
        timestamp: u64,
    ) -> Result<VoteAck> {
        let vote = VoteRecord {
            a,
            b,
            expert: expert.to_owned(),
            verdict,
            timestamp,
        };
        // validate against a snapshot so a failed write leaves state untouched
        let snapshot = (self.tasks.clone(), self.voted.clone());
        let (ack, fresh) = self.apply(vote)?;
        if fresh {
            if let Some((path, file)) = self.log.as_mut() {
                let persisted = write_vote(file, self.votes.last().expect("just pushed"))
                    .and_then(|_| file.sync_data());
                if let Err(e) = persisted {
                    let path = path.clone();
                    (self.tasks, self.voted) = snapshot;
                    self.votes.pop();
                    return Err(Error::io(path, e));
                }
            }
        }
        Ok(ack)
    }

    pub fn progress(&self) -> Progress {
        Progress {
            tasks_total: self.tasks.len(),
            tasks_closed: self
                .tasks
                .iter()
                .filter(|t| t.status == TaskStatus::Closed)
                .count(),
            votes_total: self.votes.len(),
            quorum: self.quorum,
        }
    }
}
