//! Parameter checkpoints: a versioned JSON record of named arrays.
//!
//! ```json
//! {"format":"evidar-params","version":1,"kind":"recognizer",
//!  "meta":{...},
//!  "tensors":[{"name":"hidden.weight","shape":[64,16],"data":[...]}]}
//! ```
//!
//! `meta` is free-form and holds whatever the owner needs to rebuild the
//! model skeleton before [`Checkpoint::restore_into`] fills in the values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericsError, Parameterized};

pub const CHECKPOINT_FORMAT: &str = "evidar-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture<P: Parameterized + ?Sized>(kind: &str, model: &P, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        model.visit(&mut |name, shape, data| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            meta,
            tensors,
        }
    }

    /// Appends extra named arrays, e.g. optimizer state.
    pub fn with_tensor(mut self, name: &str, data: Vec<f64>) -> Self {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: vec![data.len()],
            data,
        });
        self
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies values into `model`, checking every name and length.
    pub fn restore_into<P: Parameterized + ?Sized>(&self, model: &mut P) -> Result<(), NumericsError> {
        let mut err = None;
        model.visit_mut(&mut |name, data| {
            if err.is_some() {
                return;
            }
            match self.tensor(name) {
                Some(t) if t.data.len() == data.len() => data.copy_from_slice(&t.data),
                Some(t) => {
                    err = Some(format!(
                        "tensor {name}: {} values, model expects {}",
                        t.data.len(),
                        data.len()
                    ))
                }
                None => err = Some(format!("tensor {name} missing")),
            }
        });
        match err {
            Some(e) => Err(NumericsError::Checkpoint(e)),
            None => Ok(()),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), NumericsError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(NumericsError::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )))
        }
    }

    /// Writes to a temporary sibling first and renames it into place, so an
    /// interrupted save never leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NumericsError> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, serde_json::to_string(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NumericsError> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NumericsError::Checkpoint(format!("unknown format {}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        for t in &ck.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(NumericsError::Checkpoint(format!(
                    "tensor {} shape {:?} does not match {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Affine, GruCell};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cell = GruCell::init(4, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gru.json");
        Checkpoint::capture("gru", &cell, serde_json::json!({"hidden": 3}))
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let mut other = GruCell::init(4, 3, &mut rng);
        assert_ne!(other, cell);
        ck.restore_into(&mut other).unwrap();
        assert_eq!(other, cell);
        assert_eq!(other.checksum(), cell.checksum());
    }

    #[test]
    fn shape_and_version_errors() {
        let a = Affine::zeros(2, 2);
        let ck = Checkpoint::capture("affine", &a, serde_json::Value::Null);
        let mut wrong = Affine::zeros(3, 2);
        assert!(ck.restore_into(&mut wrong).is_err());
        assert!(ck.expect_kind("gru").is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let mut bad = ck.clone();
        bad.version = 99;
        bad.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
