//! JSON checkpoints. Values are written with 17 significant digits so a
//! reload reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelGraph, NnetError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    node: String,
    index: usize,
    shape: [usize; 2],
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    graph: ModelGraph,
    tensors: Vec<TensorRecord>,
}

pub fn checkpoint_json(graph: &ModelGraph) -> String {
    let tensors = graph
        .params
        .iter()
        .enumerate()
        .flat_map(|(node, ps)| {
            ps.iter().enumerate().map(move |(index, p)| TensorRecord {
                node: graph.nodes[node].name.clone(),
                index,
                shape: [p.nrows(), p.ncols()],
                values: p.iter().map(|v| format!("{v:.16e}")).collect(),
            })
        })
        .collect();
    let ck = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        graph: graph.clone(),
        tensors,
    };
    serde_json::to_string_pretty(&ck).expect("checkpoint serializes")
}

pub fn parse_checkpoint(text: &str) -> Result<ModelGraph> {
    let corrupt = |m: String| NnetError::CorruptCheckpoint(m);
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(NnetError::VersionMismatch {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ck: Checkpoint = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    let mut graph = ck.graph;
    graph.check().map_err(|e| corrupt(e.to_string()))?;
    let shapes = graph.param_shapes();
    let mut params: Vec<Vec<Option<Array2<f64>>>> =
        shapes.iter().map(|s| vec![None; s.len()]).collect();
    for rec in ck.tensors {
        let node = graph
            .node_index(&rec.node)
            .ok_or_else(|| corrupt(format!("tensor for unknown node `{}`", rec.node)))?;
        let want = *shapes[node]
            .get(rec.index)
            .ok_or_else(|| corrupt(format!("unexpected tensor {} of `{}`", rec.index, rec.node)))?;
        if (rec.shape[0], rec.shape[1]) != want {
            return Err(corrupt(format!("tensor {} of `{}` has shape {:?}", rec.index, rec.node, rec.shape)));
        }
        let values = rec
            .values
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| corrupt(format!("`{}`: {e}", rec.node)))?;
        let arr = Array2::from_shape_vec(want, values)
            .map_err(|e| corrupt(format!("`{}`: {e}", rec.node)))?;
        params[node][rec.index] = Some(arr);
    }
    graph.params = params
        .into_iter()
        .enumerate()
        .map(|(node, ps)| {
            ps.into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| corrupt(format!("missing tensors for `{}`", graph.nodes[node].name)))
        })
        .collect::<Result<_>>()?;
    Ok(graph)
}

pub fn save_checkpoint(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_json(graph)).map_err(|source| NnetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NnetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_checkpoint(&text)
}
