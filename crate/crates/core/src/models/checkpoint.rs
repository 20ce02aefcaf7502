//! JSON checkpoints. Tensor values are stored as base64 of their
//! little-endian `f64` bytes so a save/load round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, ParameterSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "dropattack-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParameterSet,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    spec: ModelSpec,
    attackable: Vec<String>,
    params: Vec<StoredTensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data_f64le: String,
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &ModelSpec, params: &ParameterSet) -> Result<()> {
    let path = path.as_ref();
    let stored = Stored {
        format: FORMAT.into(),
        version: VERSION,
        spec: spec.clone(),
        attackable: params.attackable().iter().cloned().collect(),
        params: params
            .iter()
            .map(|(name, t)| StoredTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data_f64le: STANDARD.encode(
                    t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
                ),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&stored)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stored: Stored = serde_json::from_str(&text)?;
    if stored.format != FORMAT || stored.version != VERSION {
        return Err(Error::Format(format!(
            "{}: not a version {VERSION} {FORMAT} file",
            path.display()
        )));
    }
    let mut entries = Vec::with_capacity(stored.params.len());
    for p in stored.params {
        let bytes = STANDARD
            .decode(&p.data_f64le)
            .map_err(|e| Error::Format(format!("{}: tensor `{}`: {e}", path.display(), p.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format(format!(
                "{}: tensor `{}` byte length {} is not a multiple of 8",
                path.display(),
                p.name,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((p.name, Tensor::new(p.shape, data)?));
    }
    let mut params = ParameterSet::new(entries)?;
    params.set_attackable(stored.attackable)?;
    let model = super::model_for(&stored.spec)?;
    let layout = model.layout();
    let matches = layout.len() == params.len()
        && layout
            .iter()
            .all(|(n, s)| params.get(n).is_some_and(|t| t.shape() == s.as_slice()));
    if !matches {
        return Err(Error::Format(format!(
            "{}: parameters do not match the stored model spec",
            path.display()
        )));
    }
    Ok(Checkpoint {
        spec: stored.spec,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_seeded;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = crate::models::ModelSpec::rnn_text(50, 4, 6, 5, 3, 11);
        let (mut params, _) = build_seeded(&spec).unwrap();
        params.get_mut("fc.b").unwrap().data_mut()[0] = 0.1 + 0.2;
        params.set_attackable(["embedding", "fc.b"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&path, &spec, &params).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec, spec);
        assert_eq!(back.params.attackable(), params.attackable());
        for ((_, a), (_, b)) in back.params.iter().zip(params.iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn mismatched_layout_rejected() {
        let spec = crate::models::ModelSpec::mlp(&[2, 3, 2], 0);
        let (params, _) = build_seeded(&spec).unwrap();
        let other = crate::models::ModelSpec::mlp(&[2, 4, 2], 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&path, &other, &params).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
