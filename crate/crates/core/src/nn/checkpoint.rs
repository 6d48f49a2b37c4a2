//! Parameter checkpoints.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! { "format": "ipm-ssl-checkpoint", "version": 1,
//!   "params": [ { "name": "critic.phi.0.weight", "group": "backbone",
//!                 "shape": [2, 128], "values": [ ... ] }, ... ] }
//! ```
//!
//! Values are written in shortest round-trip form, so load(save(p)) == p.
//! Loading checks every name, group and shape against the receiving store.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT: &str = "ipm-ssl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    params: Vec<Entry>,
}

pub fn to_string(store: &ParamStore) -> Result<String> {
    let doc = Document {
        format: FORMAT.into(),
        version: VERSION,
        params: store
            .params()
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

/// Overwrites the values in `store` from a checkpoint written for the same model.
pub fn load_into(store: &mut ParamStore, text: &str) -> Result<()> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            doc.format, doc.version
        )));
    }
    if doc.params.len() != store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} params, model has {}",
            doc.params.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (id, e) in ids.into_iter().zip(doc.params) {
        let p = store.param(id);
        if p.name != e.name || p.group != e.group {
            return Err(Error::Format(format!(
                "checkpoint entry {} ({:?}) does not match model param {} ({:?})",
                e.name, e.group, p.name, p.group
            )));
        }
        store.set(id, Tensor::new(e.shape, e.values)?)?;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(store)?)?;
    Ok(())
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    load_into(store, &std::fs::read_to_string(path)?)
}
