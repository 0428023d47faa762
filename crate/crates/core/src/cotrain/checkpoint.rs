//! Checkpoint files: a header line with the config hash followed by one
//! named tensor per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{CoTrainModel, Encoder};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Line {
    Checkpoint {
        config_hash: String,
        tensors: usize,
    },
    Tensor {
        name: String,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub tensors: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    pub fn from_model<E: Encoder>(model: &CoTrainModel<E>, config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            tensors: model
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    /// Copies every tensor whose name starts with `prefix` into the model.
    /// Returns how many were copied.
    pub fn load_into<E: Encoder>(
        &self,
        model: &mut CoTrainModel<E>,
        prefix: &str,
    ) -> Result<usize> {
        let mut copied = 0;
        for (name, param) in model.named_params_mut() {
            if !name.starts_with(prefix) {
                continue;
            }
            if let Some(t) = self.tensors.get(&name) {
                if t.raw_dim() != param.raw_dim() {
                    return Err(Error::Dimension(format!(
                        "checkpoint tensor `{name}` is {:?}, model expects {:?}",
                        t.shape(),
                        param.shape()
                    )));
                }
                param.assign(t);
                copied += 1;
            }
        }
        Ok(copied)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = Line::Checkpoint {
            config_hash: self.config_hash.clone(),
            tensors: self.tensors.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for (name, t) in &self.tensors {
            let line = Line::Tensor {
                name: name.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
                data: t.iter().copied().collect(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut header: Option<(String, usize)> = None;
        let mut tensors = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: n,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n,
                message: e.to_string(),
            })?;
            match parsed {
                Line::Checkpoint {
                    config_hash,
                    tensors,
                } if header.is_none() => header = Some((config_hash, tensors)),
                Line::Checkpoint { .. } => {
                    return Err(Error::Parse {
                        line: n,
                        message: "second checkpoint header".into(),
                    })
                }
                Line::Tensor {
                    name,
                    rows,
                    cols,
                    data,
                } => {
                    if header.is_none() {
                        return Err(Error::Parse {
                            line: n,
                            message: "tensor before header".into(),
                        });
                    }
                    let t =
                        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse {
                            line: n,
                            message: format!("tensor `{name}`: {e}"),
                        })?;
                    if tensors.insert(name.clone(), t).is_some() {
                        return Err(Error::Parse {
                            line: n,
                            message: format!("duplicate tensor `{name}`"),
                        });
                    }
                }
            }
        }
        let (config_hash, count) = header.ok_or_else(|| Error::Empty("checkpoint".into()))?;
        if count != tensors.len() {
            return Err(Error::Integrity(format!(
                "header announces {count} tensors, file has {}",
                tensors.len()
            )));
        }
        Ok(Self {
            config_hash,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cotrain::model::MlpEncoder;
    use crate::dataset::LanguageTag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> CoTrainModel<MlpEncoder> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = MlpEncoder::new(3, 4, 5, &mut rng);
        CoTrainModel::new(
            enc,
            &[(LanguageTag::new("a"), 3)].into_iter().collect(),
            &mut rng,
        )
    }

    #[test]
    fn round_trip() {
        let ck = Checkpoint::from_model(&model(0), "abc");
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(Checkpoint::read(&buf[..]).unwrap(), ck);
    }

    #[test]
    fn encoder_only_transfer() {
        let src = model(0);
        let mut dst = model(1);
        let ck = Checkpoint::from_model(&src, "x");
        assert_eq!(ck.load_into(&mut dst, "encoder.").unwrap(), 4);
        assert_eq!(dst.encoder, src.encoder);
        assert_ne!(dst.regression, src.regression);
    }

    #[test]
    fn count_mismatch_rejected() {
        let text = "{\"kind\":\"checkpoint\",\"config_hash\":\"h\",\"tensors\":2}\n\
                    {\"kind\":\"tensor\",\"name\":\"a\",\"rows\":1,\"cols\":1,\"data\":[1.0]}\n";
        assert!(matches!(
            Checkpoint::read(text.as_bytes()),
            Err(Error::Integrity(_))
        ));
    }
}
