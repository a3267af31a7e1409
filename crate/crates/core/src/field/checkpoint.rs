//! JSON checkpoints.
//!
//! Floats are written in their shortest round-tripping decimal form and
//! parsed with correct rounding, so a reload reproduces every parameter bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{DenseShape, FieldArchitecture, FieldModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    /// `outputs` rows of `inputs` values.
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    robot_name: String,
    n_joints: usize,
    /// -1 marks a base-attached joint.
    parents: Vec<i64>,
    arch: FieldArchitecture,
    encoders: Vec<Vec<LayerDoc>>,
    head: Vec<LayerDoc>,
}

fn layer_doc(params: &[f64], shape: &DenseShape) -> LayerDoc {
    LayerDoc {
        weight: params[shape.weight.clone()].chunks_exact(shape.inputs).map(<[f64]>::to_vec).collect(),
        bias: params[shape.bias.clone()].to_vec(),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &FieldModel) -> Result<()> {
    let p = model.parameters();
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_FORMAT_VERSION,
        robot_name: model.robot_name().to_owned(),
        n_joints: model.n_joints(),
        parents: model.parents().iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
        arch: model.arch().clone(),
        encoders: (0..model.n_joints())
            .map(|j| model.encoder_layers(j).iter().map(|s| layer_doc(p, s)).collect())
            .collect(),
        head: model.head_layers().iter().map(|s| layer_doc(p, s)).collect(),
    };
    let text = serde_json::to_string(&doc).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<FieldModel> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    // The writer always ends the document with a newline; its absence means truncation.
    if !text.ends_with('\n') {
        return Err(Error::Format("checkpoint is truncated".into()));
    }
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
    let version = value.get("format_version").and_then(serde_json::Value::as_u64);
    match version {
        Some(v) if v == u64::from(CHECKPOINT_FORMAT_VERSION) => {}
        Some(v) => return Err(Error::FormatVersion { found: v as u32, expected: CHECKPOINT_FORMAT_VERSION }),
        None => return Err(Error::Format("checkpoint has no format_version".into())),
    }
    let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
    if doc.parents.len() != doc.n_joints || doc.encoders.len() != doc.n_joints {
        return Err(Error::ArchMismatch("joint count disagrees with parents or encoders".into()));
    }
    let parents = doc
        .parents
        .iter()
        .map(|&p| match p {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            _ => Err(Error::ArchMismatch(format!("invalid parent {p}"))),
        })
        .collect::<Result<Vec<_>>>()?;

    // Flatten in layout order, then let `from_parts` check the total; per-layer
    // shapes are checked against a freshly laid-out model below.
    let mut params = Vec::new();
    let mut shapes = Vec::new();
    for layer in doc.encoders.iter().flatten().chain(&doc.head) {
        let outputs = layer.weight.len();
        let inputs = layer.weight.first().map_or(0, Vec::len);
        if layer.weight.iter().any(|row| row.len() != inputs) || layer.bias.len() != outputs {
            return Err(Error::ArchMismatch("ragged layer".into()));
        }
        shapes.push((inputs, outputs));
        params.extend(layer.weight.iter().flatten());
        params.extend(&layer.bias);
    }
    let model = FieldModel::from_parts(doc.robot_name, doc.arch, parents, params)?;
    let expected: Vec<(usize, usize)> = (0..model.n_joints())
        .flat_map(|j| model.encoder_layers(j).to_vec())
        .chain(model.head_layers().to_vec())
        .map(|s| (s.inputs, s.outputs))
        .collect();
    if expected != shapes {
        return Err(Error::ArchMismatch("layer shapes disagree with the architecture".into()));
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteParameters);
    }
    Ok(model)
}

pub fn save_checkpoint(model: &FieldModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FieldModel> {
    read_checkpoint(std::fs::File::open(path)?)
}
