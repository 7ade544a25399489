//! Model checkpoints: named f64 tensors in a safetensors container, with the
//! configuration needed to rebuild the model stored as JSON metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::Tensor;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::corpus::RelationSchema;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::model::{ModelConfig, RelationModel};
use crate::nn;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "docre";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Teacher,
    PretrainedStudent,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub stage: Stage,
    /// Optimizer steps taken to produce the parameters, over all stages.
    pub step: usize,
    pub seed: u64,
    pub model_config: ModelConfig,
    pub vocab: Vocab,
    pub schema: RelationSchema,
    /// Snapshot of the run configuration, as JSON.
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
}

fn f64_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let values = t.flatten_all()?.to_vec1::<f64>()?;
    Ok(values.iter().flat_map(|v| v.to_le_bytes()).collect())
}

pub fn to_bytes(model: &RelationModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut data = Vec::new();
    for (name, var) in model.params().iter() {
        data.push((
            name.to_string(),
            var.dims().to_vec(),
            f64_bytes(var.as_tensor())?,
        ));
    }
    let views = data
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    safetensors::tensor::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(RelationModel, CheckpointMeta)> {
    let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(e.to_string());
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(bad)?;
    let meta = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("missing checkpoint metadata".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(meta)?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {}",
            meta.format_version
        )));
    }
    let tensors = SafeTensors::deserialize(bytes).map_err(bad)?;
    let mut values = BTreeMap::new();
    for (name, view) in tensors.tensors() {
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!("tensor `{name}` is not f64")));
        }
        let data: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        values.insert(name, nn::tensor_from(&data, view.shape())?);
    }
    let model = RelationModel::new(
        meta.model_config.clone(),
        meta.vocab.clone(),
        meta.schema.num_classes(),
        meta.seed,
    )?;
    model.params().load(&values)?;
    Ok((model, meta))
}

pub fn save(path: &Path, model: &RelationModel, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &to_bytes(model, meta)?)
}

pub fn load(path: &Path) -> Result<(RelationModel, CheckpointMeta)> {
    from_bytes(&read_file(path)?)
}

impl CheckpointMeta {
    pub fn new(
        stage: Stage,
        step: usize,
        seed: u64,
        model: &RelationModel,
        schema: &RelationSchema,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            stage,
            step,
            seed,
            model_config: model.config().clone(),
            vocab: model.vocab().clone(),
            schema: schema.clone(),
            run_config: None,
        }
    }
}
