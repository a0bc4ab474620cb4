//! Checkpoint container: magic, format version, a JSON manifest, then every
//! parameter as little-endian `f32` in manifest order.

use crate::config::ModelConfig;
use crate::encoder::{EncoderError, WordVectors};
use crate::model::{Model, ModelError};
use crate::nn::Tensor;
use crate::ontology::{Ontology, OntologyError};
use crate::training::EpochRecord;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 8] = b"RLINKCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("bad checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint roles {checkpoint:?} do not match the ontology roles {ontology:?}")]
    RoleMapMismatch {
        checkpoint: Vec<String>,
        ontology: Vec<String>,
    },
    #[error("checkpoint layout does not match the model: {0}")]
    Layout(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    /// Ontology in its tab-separated text form.
    pub ontology: String,
    /// Role names in role-index order.
    pub roles: Vec<String>,
    pub word_dim: usize,
    pub params: Vec<ParamEntry>,
    pub best_dev_f1: f64,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    /// Values in manifest order, already rounded to `f32`.
    pub values: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, best_dev_f1: f64, epoch: usize, history: Vec<EpochRecord>) -> Self {
        let mut params = Vec::new();
        let mut values = Vec::new();
        for (_, name, t) in model.params().iter() {
            params.push(ParamEntry {
                name: name.to_string(),
                shape: [t.rows, t.cols],
                dtype: "f32".into(),
            });
            let mut t = t.clone();
            t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
            values.push(t);
        }
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                config: model.config().clone(),
                ontology: model.ontology().to_tsv(),
                roles: model.ontology().roles().to_vec(),
                word_dim: model.word_dim(),
                params,
                best_dev_f1,
                epoch,
                history,
            },
            values,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        let manifest = serde_json::to_vec(&self.manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&self.manifest.format_version.to_le_bytes())?;
        out.write_all(&(manifest.len() as u64).to_le_bytes())?;
        out.write_all(&manifest)?;
        for t in &self.values {
            for &v in &t.data {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, CheckpointError> {
        let eof = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                CheckpointError::Truncated
            } else {
                CheckpointError::Io(e)
            }
        };
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word).map_err(eof)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(eof)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut manifest = Vec::new();
        (&mut input).take(len as u64).read_to_end(&mut manifest)?;
        if manifest.len() != len {
            return Err(CheckpointError::Truncated);
        }
        let manifest: Manifest =
            serde_json::from_slice(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        let mut values = Vec::with_capacity(manifest.params.len());
        for p in &manifest.params {
            if p.dtype != "f32" {
                return Err(CheckpointError::Manifest(format!("unsupported dtype {}", p.dtype)));
            }
            let [r, c] = p.shape;
            let mut bytes = vec![0u8; r * c * 4];
            input.read_exact(&mut bytes).map_err(eof)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            values.push(Tensor::from_vec(r, c, data));
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(CheckpointError::Manifest("trailing bytes after parameters".into()));
        }
        Ok(Checkpoint { manifest, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn ontology(&self) -> Result<Ontology, CheckpointError> {
        let o = Ontology::parse(&self.manifest.ontology)?;
        if o.roles() != self.manifest.roles.as_slice() {
            return Err(CheckpointError::Manifest("stored ontology disagrees with the role map".into()));
        }
        Ok(o)
    }

    /// Errors unless `ontology` assigns the same role indices.
    pub fn check_roles(&self, ontology: &Ontology) -> Result<(), CheckpointError> {
        if ontology.roles() != self.manifest.roles.as_slice() {
            return Err(CheckpointError::RoleMapMismatch {
                checkpoint: self.manifest.roles.clone(),
                ontology: ontology.roles().to_vec(),
            });
        }
        Ok(())
    }

    /// Loads the word vectors named in the stored config, keeping only
    /// `vocab` when given.
    pub fn load_word_vectors(
        &self,
        vocab: Option<&HashSet<String>>,
    ) -> Result<Option<Arc<WordVectors>>, CheckpointError> {
        match &self.manifest.config.word_vectors {
            Some(path) => Ok(Some(Arc::new(WordVectors::load(path, vocab)?))),
            None => Ok(None),
        }
    }

    /// Rebuilds the model with the stored parameters.
    pub fn into_model(&self, words: Option<Arc<WordVectors>>) -> Result<Model, CheckpointError> {
        let found = words.as_ref().map_or(0, |w| w.dim());
        if found != self.manifest.word_dim {
            return Err(CheckpointError::Layout(format!(
                "word vectors have {found} dims, checkpoint expects {}",
                self.manifest.word_dim
            )));
        }
        let mut model = Model::new(self.manifest.config.clone(), self.ontology()?, words)?;
        let store = model.params_mut();
        if store.len() != self.manifest.params.len() {
            return Err(CheckpointError::Layout(format!(
                "{} stored parameters, model has {}",
                self.manifest.params.len(),
                store.len()
            )));
        }
        for (entry, value) in self.manifest.params.iter().zip(&self.values) {
            let id = store
                .id(&entry.name)
                .ok_or_else(|| CheckpointError::Layout(format!("unknown parameter {}", entry.name)))?;
            let slot = store.get_mut(id);
            if slot.shape() != value.shape() {
                return Err(CheckpointError::Layout(format!(
                    "{} has shape {:?}, model expects {:?}",
                    entry.name,
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value.clone();
        }
        Ok(model)
    }
}
