//! Per-sample clip features: a flat little-endian `f32` file of
//! `frames x dim` records plus a text index naming each record.
//!
//! Index format:
//! ```text
//! # frames=32 dim=16
//! <sample_id>\t<clip_start>
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dataset::SampleId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    frames: usize,
    dim: usize,
    ids: Vec<SampleId>,
    clip_starts: Vec<usize>,
    data: Vec<f32>,
    index: HashMap<SampleId, usize>,
}

/// Sidecar index path for a feature file: `feats.bin` -> `feats.bin.idx`.
pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

impl FeatureStore {
    pub fn new(frames: usize, dim: usize) -> Self {
        Self {
            frames,
            dim,
            ids: Vec::new(),
            clip_starts: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn push(&mut self, id: SampleId, clip_start: usize, features: &Array2<f64>) -> Result<()> {
        if features.dim() != (self.frames, self.dim) {
            return Err(Error::Dimension(format!(
                "features for `{id}` are {:?}, store holds {}x{}",
                features.dim(),
                self.frames,
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Integrity(format!("duplicate features for `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.clip_starts.push(clip_start);
        self.data.extend(features.iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn get(&self, id: &SampleId) -> Option<Array2<f64>> {
        let i = *self.index.get(id)?;
        let n = self.frames * self.dim;
        let rec = &self.data[i * n..(i + 1) * n];
        Some(
            Array2::from_shape_vec(
                (self.frames, self.dim),
                rec.iter().map(|&v| v as f64).collect(),
            )
            .expect("record size"),
        )
    }

    pub fn clip_start(&self, id: &SampleId) -> Option<usize> {
        self.index.get(id).map(|&i| self.clip_starts[i])
    }

    /// Writes the feature file at `path` and its index next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for v in &self.data {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;

        let idx = index_path(path);
        let file = File::create(&idx).map_err(|e| Error::io(&idx, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "# frames={} dim={}", self.frames, self.dim)?;
            for (id, start) in self.ids.iter().zip(&self.clip_starts) {
                writeln!(w, "{id}\t{start}")?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(&idx, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let idx = index_path(path);
        let file = File::open(&idx).map_err(|e| Error::io(&idx, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(&idx, e))?
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "missing header".into(),
            })?;
        let (frames, dim) = parse_header(&header)?;
        let mut store = Self::new(frames, dim);
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| Error::io(&idx, e))?;
            if line.is_empty() {
                continue;
            }
            let (id, start) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n,
                message: "expected `<sample_id>\\t<clip_start>`".into(),
            })?;
            let start: usize = start.parse().map_err(|e| Error::Parse {
                line: n,
                message: format!("clip start: {e}"),
            })?;
            entries.push((SampleId::new(id), start));
        }

        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let expected = entries.len() * frames * dim * 4;
        if bytes.len() != expected {
            return Err(Error::Integrity(format!(
                "feature file has {} bytes, index implies {expected}",
                bytes.len()
            )));
        }
        store.data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        for (id, start) in entries {
            if store.index.insert(id.clone(), store.ids.len()).is_some() {
                return Err(Error::Integrity(format!("duplicate features for `{id}`")));
            }
            store.ids.push(id);
            store.clip_starts.push(start);
        }
        Ok(store)
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = || Error::Parse {
        line: 1,
        message: format!("bad header `{line}`, expected `# frames=<n> dim=<d>`"),
    };
    let rest = line.strip_prefix('#').ok_or_else(bad)?;
    let mut frames = None;
    let mut dim = None;
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("frames", v)) => frames = v.parse().ok(),
            Some(("dim", v)) => dim = v.parse().ok(),
            _ => return Err(bad()),
        }
    }
    match (frames, dim) {
        (Some(f), Some(d)) if f > 0 && d > 0 => Ok((f, d)),
        _ => Err(bad()),
    }
}
