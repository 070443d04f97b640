use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::model::{LayerParams, Model};
use crate::nn::spec::ModelSpec;

/// Serializable weights of a model plus free-form training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Vec<Option<LayerParams<f32>>>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, metadata: BTreeMap<String, String>) -> Self {
        Self {
            spec: model.spec().clone(),
            params: model.params().to_vec(),
            metadata,
        }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        if let Some(h) = self.metadata.get("spec_hash") {
            if *h != self.spec.hash() {
                return Err(Error::format(
                    "checkpoint",
                    format!("spec hash {h} does not match layers ({})", self.spec.hash()),
                ));
            }
        }
        Model::from_params(self.spec.clone(), self.params.clone())
    }

    pub fn spec_hash(&self) -> String {
        self.spec.hash()
    }
}
