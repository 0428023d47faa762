//! Shared data universe: glosses, groups, signers and samples of one sign
//! language, plus the line-delimited manifest format.
//!
//! A manifest file is UTF-8 JSON Lines. The first line is a header record
//! (`kind = "manifest"`) carrying the language tag; every following line is
//! one of `gloss`, `group`, `signer` or `sample`, written in that order and
//! sorted by id within each kind. Field order inside a record is fixed:
//!
//! ```text
//! {"kind":"manifest","language":L}
//! {"kind":"gloss","id":G,"language":L}
//! {"kind":"group","id":K,"members":[G,...]}
//! {"kind":"signer","id":S}
//! {"kind":"sample","sample_id":X,"signer":S,"gloss":G,"language":L,
//!  "video_length":N,"sign_start":A,"sign_end":B,"subset":"train"|"test"|"unassigned"}
//! ```
//!
//! Unknown kinds and unknown fields are rejected. Boundaries are half-open
//! frame ranges `[sign_start, sign_end)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Tag identifying the sign language (one per dataset).
    LanguageTag
);
string_id!(GlossId);
string_id!(GroupId);
string_id!(SignerId);
string_id!(SampleId);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossLabel {
    pub id: GlossId,
    pub language: LanguageTag,
}

/// A class of visually similar glosses. Singleton groups are ordinary glosses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabel {
    pub id: GroupId,
    pub members: BTreeSet<GlossId>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
    #[default]
    Unassigned,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: SampleId,
    pub signer: SignerId,
    pub gloss: GlossId,
    pub language: LanguageTag,
    pub video_length: usize,
    pub sign_start: usize,
    pub sign_end: usize,
    #[serde(default)]
    pub subset: Subset,
}

impl SampleRecord {
    pub fn sign_len(&self) -> usize {
        self.sign_end - self.sign_start
    }

    fn check_boundaries(&self) -> Result<()> {
        if self.video_length == 0 {
            return Err(Error::Integrity(format!(
                "sample `{}` has an empty video",
                self.sample_id
            )));
        }
        if !(self.sign_start < self.sign_end && self.sign_end <= self.video_length) {
            return Err(Error::Integrity(format!(
                "sample `{}` boundary [{}, {}) is not inside a {}-frame video",
                self.sample_id, self.sign_start, self.sign_end, self.video_length
            )));
        }
        Ok(())
    }
}

/// Which label space a classifier is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpace {
    Gloss,
    Group,
}

/// All samples, signers and labels of one sign language.
///
/// Construct through [`DatasetManifest::new`], which validates referential
/// integrity and sorts every collection by id so that serialization is
/// byte-stable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    language: LanguageTag,
    glosses: Vec<GlossLabel>,
    groups: Vec<GroupLabel>,
    signers: Vec<SignerId>,
    samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(
        language: LanguageTag,
        mut glosses: Vec<GlossLabel>,
        mut groups: Vec<GroupLabel>,
        mut signers: Vec<SignerId>,
        mut samples: Vec<SampleRecord>,
    ) -> Result<Self> {
        if language.as_str().is_empty() {
            return Err(Error::Integrity("empty language tag".into()));
        }
        glosses.sort_by(|a, b| a.id.cmp(&b.id));
        groups.sort_by(|a, b| a.id.cmp(&b.id));
        signers.sort();
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

        for w in glosses.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Integrity(format!("duplicate gloss `{}`", w[0].id)));
            }
        }
        for g in &glosses {
            if g.id.as_str().is_empty() {
                return Err(Error::Integrity("empty gloss id".into()));
            }
            if g.language != language {
                return Err(Error::Integrity(format!(
                    "gloss `{}` has language `{}`, manifest is `{}`",
                    g.id, g.language, language
                )));
            }
        }
        for w in signers.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Integrity(format!("duplicate signer `{}`", w[0])));
            }
        }
        if signers.iter().any(|s| s.as_str().is_empty()) {
            return Err(Error::Integrity("empty signer id".into()));
        }
        for w in samples.windows(2) {
            if w[0].sample_id == w[1].sample_id {
                return Err(Error::Integrity(format!(
                    "duplicate sample `{}`",
                    w[0].sample_id
                )));
            }
        }

        let m = Self {
            language,
            glosses,
            groups,
            signers,
            samples,
        };

        if !m.groups.is_empty() {
            let mut seen: BTreeMap<&GlossId, &GroupId> = BTreeMap::new();
            for w in m.groups.windows(2) {
                if w[0].id == w[1].id {
                    return Err(Error::Integrity(format!("duplicate group `{}`", w[0].id)));
                }
            }
            for group in &m.groups {
                if group.members.is_empty() {
                    return Err(Error::Integrity(format!(
                        "group `{}` has no members",
                        group.id
                    )));
                }
                for member in &group.members {
                    if m.gloss_position(member).is_none() {
                        return Err(Error::Integrity(format!(
                            "group `{}` references unknown gloss `{}`",
                            group.id, member
                        )));
                    }
                    if let Some(other) = seen.insert(member, &group.id) {
                        return Err(Error::Integrity(format!(
                            "gloss `{}` belongs to groups `{}` and `{}`",
                            member, other, group.id
                        )));
                    }
                }
            }
            if let Some(g) = m.glosses.iter().find(|g| !seen.contains_key(&g.id)) {
                return Err(Error::Integrity(format!(
                    "gloss `{}` belongs to no group",
                    g.id
                )));
            }
        }

        for s in &m.samples {
            if s.sample_id.as_str().is_empty() {
                return Err(Error::Integrity("empty sample id".into()));
            }
            if m.signer_position(&s.signer).is_none() {
                return Err(Error::Integrity(format!(
                    "sample `{}` references unknown signer `{}`",
                    s.sample_id, s.signer
                )));
            }
            if m.gloss_position(&s.gloss).is_none() {
                return Err(Error::Integrity(format!(
                    "sample `{}` references unknown gloss `{}`",
                    s.sample_id, s.gloss
                )));
            }
            if s.language != m.language {
                return Err(Error::Integrity(format!(
                    "sample `{}` has language `{}`, manifest is `{}`",
                    s.sample_id, s.language, m.language
                )));
            }
            s.check_boundaries()?;
        }
        Ok(m)
    }

    /// A manifest with no glosses, signers or samples.
    pub fn empty(language: LanguageTag) -> Result<Self> {
        Self::new(language, vec![], vec![], vec![], vec![])
    }

    pub fn language(&self) -> &LanguageTag {
        &self.language
    }

    pub fn glosses(&self) -> &[GlossLabel] {
        &self.glosses
    }

    pub fn groups(&self) -> &[GroupLabel] {
        &self.groups
    }

    pub fn signers(&self) -> &[SignerId] {
        &self.signers
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn has_grouping(&self) -> bool {
        !self.groups.is_empty()
    }

    pub fn gloss_position(&self, id: &GlossId) -> Option<usize> {
        self.glosses.binary_search_by(|g| g.id.cmp(id)).ok()
    }

    pub fn group_position(&self, id: &GroupId) -> Option<usize> {
        self.groups.binary_search_by(|g| g.id.cmp(id)).ok()
    }

    pub fn signer_position(&self, id: &SignerId) -> Option<usize> {
        self.signers.binary_search(id).ok()
    }

    pub fn sample(&self, id: &SampleId) -> Option<&SampleRecord> {
        self.samples
            .binary_search_by(|s| s.sample_id.cmp(id))
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Replaces the sample list, re-validating the result.
    pub fn with_samples(&self, samples: Vec<SampleRecord>) -> Result<Self> {
        Self::new(
            self.language.clone(),
            self.glosses.clone(),
            self.groups.clone(),
            self.signers.clone(),
            samples,
        )
    }

    pub fn with_groups(&self, groups: Vec<GroupLabel>) -> Result<Self> {
        Self::new(
            self.language.clone(),
            self.glosses.clone(),
            groups,
            self.signers.clone(),
            self.samples.clone(),
        )
    }

    /// Maps each gloss to the id of its unique containing group.
    pub fn project_to_groups(&self, labels: &[GlossId]) -> Result<Vec<GroupId>> {
        let lookup = self.gloss_to_group()?;
        labels
            .iter()
            .map(|g| {
                lookup
                    .get(g)
                    .map(|&i| self.groups[i].id.clone())
                    .ok_or_else(|| Error::UnknownLabel(g.to_string()))
            })
            .collect()
    }

    /// Gloss id to position in [`Self::groups`].
    pub fn gloss_to_group(&self) -> Result<BTreeMap<GlossId, usize>> {
        if !self.has_grouping() {
            return Err(Error::MissingGrouping);
        }
        let mut out = BTreeMap::new();
        for (i, group) in self.groups.iter().enumerate() {
            for m in &group.members {
                out.insert(m.clone(), i);
            }
        }
        Ok(out)
    }

    pub fn num_classes(&self, space: LabelSpace) -> usize {
        match space {
            LabelSpace::Gloss => self.glosses.len(),
            LabelSpace::Group => self.groups.len(),
        }
    }

    /// Class index of every sample (in `samples()` order) under `space`.
    pub fn class_indices(&self, space: LabelSpace) -> Result<Vec<usize>> {
        match space {
            LabelSpace::Gloss => Ok(self
                .samples
                .iter()
                .map(|s| self.gloss_position(&s.gloss).expect("validated"))
                .collect()),
            LabelSpace::Group => {
                let lookup = self.gloss_to_group()?;
                Ok(self.samples.iter().map(|s| lookup[&s.gloss]).collect())
            }
        }
    }

    /// Class names under `space`, indexed by class index.
    pub fn class_names(&self, space: LabelSpace) -> Vec<String> {
        match space {
            LabelSpace::Gloss => self.glosses.iter().map(|g| g.id.to_string()).collect(),
            LabelSpace::Group => self.groups.iter().map(|g| g.id.to_string()).collect(),
        }
    }

    pub fn count_subset(&self, subset: Subset) -> usize {
        self.samples.iter().filter(|s| s.subset == subset).count()
    }

    /// Keeps only samples in `subset`.
    pub fn filter_subset(&self, subset: Subset) -> Result<Self> {
        self.with_samples(
            self.samples
                .iter()
                .filter(|s| s.subset == subset)
                .cloned()
                .collect(),
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ManifestLine {
    Manifest {
        language: LanguageTag,
    },
    Gloss {
        id: GlossId,
        language: LanguageTag,
    },
    Group {
        id: GroupId,
        members: BTreeSet<GlossId>,
    },
    Signer {
        id: SignerId,
    },
    Sample {
        sample_id: SampleId,
        signer: SignerId,
        gloss: GlossId,
        language: LanguageTag,
        video_length: usize,
        sign_start: usize,
        sign_end: usize,
        subset: Subset,
    },
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_manifest(reader: impl BufRead) -> Result<DatasetManifest> {
    let mut language = None;
    let mut glosses = Vec::new();
    let mut groups = Vec::new();
    let mut signers = Vec::new();
    let mut samples = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match rec {
            ManifestLine::Manifest { language: l } => {
                if language.is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "second manifest header".into(),
                    });
                }
                language = Some(l);
            }
            other if language.is_none() => {
                let _ = other;
                return Err(Error::Parse {
                    line: line_no,
                    message: "record before manifest header".into(),
                });
            }
            ManifestLine::Gloss { id, language } => glosses.push(GlossLabel { id, language }),
            ManifestLine::Group { id, members } => groups.push(GroupLabel { id, members }),
            ManifestLine::Signer { id } => signers.push(id),
            ManifestLine::Sample {
                sample_id,
                signer,
                gloss,
                language,
                video_length,
                sign_start,
                sign_end,
                subset,
            } => samples.push(SampleRecord {
                sample_id,
                signer,
                gloss,
                language,
                video_length,
                sign_start,
                sign_end,
                subset,
            }),
        }
    }
    let language = language.ok_or(Error::Parse {
        line: 0,
        message: "missing manifest header".into(),
    })?;
    DatasetManifest::new(language, glosses, groups, signers, samples)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_manifest(m, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest(m: &DatasetManifest, w: &mut impl Write) -> std::io::Result<()> {
    let mut line = |rec: &ManifestLine| -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, rec)?;
        w.write_all(b"\n")
    };
    line(&ManifestLine::Manifest {
        language: m.language.clone(),
    })?;
    for g in &m.glosses {
        line(&ManifestLine::Gloss {
            id: g.id.clone(),
            language: g.language.clone(),
        })?;
    }
    for g in &m.groups {
        line(&ManifestLine::Group {
            id: g.id.clone(),
            members: g.members.clone(),
        })?;
    }
    for s in &m.signers {
        line(&ManifestLine::Signer { id: s.clone() })?;
    }
    for s in &m.samples {
        line(&ManifestLine::Sample {
            sample_id: s.sample_id.clone(),
            signer: s.signer.clone(),
            gloss: s.gloss.clone(),
            language: s.language.clone(),
            video_length: s.video_length,
            sign_start: s.sign_start,
            sign_end: s.sign_end,
            subset: s.subset,
        })?;
    }
    Ok(())
}

/// Serializes `m` to a byte vector in manifest format.
pub fn manifest_bytes(m: &DatasetManifest) -> Vec<u8> {
    let mut out = Vec::new();
    write_manifest(m, &mut out).expect("manifest built through new() is valid");
    out
}

/// Group records in manifest line format, for appending grouping output to a
/// manifest file.
pub fn group_record_lines(groups: &[GroupLabel]) -> String {
    let mut out = String::new();
    for g in groups {
        let rec = ManifestLine::Group {
            id: g.id.clone(),
            members: g.members.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}
