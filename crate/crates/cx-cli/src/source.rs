//! Model loading: either a model directory written by `cx train` (encoder +
//! head + representations + dataset) or a bare cx-repr file (head +
//! representations, no encoder).

use std::path::{Path, PathBuf};

use cx_core::error::{Error, Result};
use cx_core::model::io::{import_representations, read_dataset, read_encoder};
use cx_core::model::{BowEncoder, Example, LatentRepr, LinearHead};

pub const REPR_FILE: &str = "representations.jsonl";
pub const ENCODER_FILE: &str = "encoder.json";
pub const DATASET_FILE: &str = "dataset.jsonl";

pub struct ModelSource {
    pub head: LinearHead,
    pub reprs: Vec<LatentRepr>,
    pub encoder: Option<BowEncoder>,
    pub dataset: Option<Vec<Example>>,
    pub origin: PathBuf,
}

impl ModelSource {
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let (head, reprs) = import_representations(&path.join(REPR_FILE))?;
            let encoder = read_encoder(&path.join(ENCODER_FILE))?;
            let dataset_path = path.join(DATASET_FILE);
            let dataset = if dataset_path.exists() {
                Some(read_dataset(&dataset_path)?)
            } else {
                None
            };
            Ok(ModelSource {
                head,
                reprs,
                encoder: Some(encoder),
                dataset,
                origin: path.to_path_buf(),
            })
        } else {
            let (head, reprs) = import_representations(path)?;
            Ok(ModelSource {
                head,
                reprs,
                encoder: None,
                dataset: None,
                origin: path.to_path_buf(),
            })
        }
    }

    /// The dataset for analysis: the explicit override, else the model
    /// directory's copy.
    pub fn dataset_or(&self, override_path: Option<&Path>) -> Result<Vec<Example>> {
        if let Some(p) = override_path {
            return read_dataset(p);
        }
        self.dataset.clone().ok_or_else(|| {
            Error::InvalidInput(format!(
                "{} has no dataset; pass --data",
                self.origin.display()
            ))
        })
    }

    pub fn encoder(&self) -> Result<&BowEncoder> {
        self.encoder.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!(
                "{} is a bare representation file; this command needs the encoder from a model directory",
                self.origin.display()
            ))
        })
    }

    pub fn repr_for(&self, example_id: &str) -> Result<&LatentRepr> {
        self.reprs
            .iter()
            .find(|r| r.example_id == example_id)
            .ok_or_else(|| {
                Error::InvalidInput(format!("no representation for example {example_id}"))
            })
    }
}
