//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MACNN1"
//! u32 spec_len, spec canonical text (UTF-8)
//! [u8; 32] SHA-256 of the spec text
//! u64 epoch, u64 seed
//! u32 n, f64 × n                    loss history
//! u32 n_tensors, then per tensor:
//!   u32 name_len, name, u32 ndim, u64 × ndim dims, f64 × numel
//! ```
//!
//! Tensor names are `L<layer>.weight`, `L<layer>.bias`, and for optimiser
//! state `L<layer>.weight.velocity` / `L<layer>.bias.velocity`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::network::{init_params, Params};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 6] = b"MACNN1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMeta {
    /// Number of completed training epochs.
    pub epoch: u64,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

/// Network spec, learned weights, optional momentum state and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Params,
    pub velocity: Option<Params>,
    pub meta: TrainingMeta,
}

/// Fresh He-initialised checkpoint.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<Checkpoint> {
    Ok(Checkpoint {
        spec: spec.clone(),
        params: init_params(spec, seed)?,
        velocity: None,
        meta: TrainingMeta {
            epoch: 0,
            seed,
            loss_history: Vec::new(),
        },
    })
}

const NAMES: [&str; 2] = ["weight", "bias"];

impl Checkpoint {
    pub fn spec_digest(&self) -> String {
        self.spec.digest()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        let text = self.spec.canonical_text();
        b.extend_from_slice(&(text.len() as u32).to_le_bytes());
        b.extend_from_slice(text.as_bytes());
        b.extend_from_slice(&Sha256::digest(text.as_bytes()));
        b.extend_from_slice(&self.meta.epoch.to_le_bytes());
        b.extend_from_slice(&self.meta.seed.to_le_bytes());
        b.extend_from_slice(&(self.meta.loss_history.len() as u32).to_le_bytes());
        for v in &self.meta.loss_history {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let mut entries: Vec<(String, &Tensor)> = Vec::new();
        let sets = std::iter::once((&self.params, ""))
            .chain(self.velocity.as_ref().map(|v| (v, ".velocity")));
        for (params, suffix) in sets {
            for (li, layer) in params.0.iter().enumerate() {
                for (ti, t) in layer.iter().enumerate() {
                    entries.push((format!("L{li}.{}{suffix}", NAMES[ti]), t));
                }
            }
        }
        b.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in entries {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                b.extend_from_slice(&f64::from(v).to_le_bytes());
            }
        }
        b
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a MACNN1 checkpoint".into()));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("spec text is not UTF-8".into()))?;
        let stored = r.take(32)?;
        if stored != Sha256::digest(text.as_bytes()).as_slice() {
            return Err(Error::Checkpoint("spec digest mismatch".into()));
        }
        let spec = NetworkSpec::parse(text)?;
        let epoch = r.u64()?;
        let seed = r.u64()?;
        let n_loss = r.u32()? as usize;
        let loss_history = (0..n_loss).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n_tensors = r.u32()? as usize;
        let mut tensors = HashMap::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product::<usize>();
            let data = (0..numel)
                .map(|_| r.f64().map(|v| v as Real))
                .collect::<Result<Vec<_>>>()?;
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        let mut take_params = |suffix: &str, required: bool| -> Result<Option<Params>> {
            let mut params = Params::zeros(&spec)?;
            let mut found = 0;
            for (li, layer) in params.0.iter_mut().enumerate() {
                for (ti, slot) in layer.iter_mut().enumerate() {
                    let name = format!("L{li}.{}{suffix}", NAMES[ti]);
                    match tensors.remove(&name) {
                        Some(t) if t.shape() == slot.shape() => {
                            *slot = t;
                            found += 1;
                        }
                        Some(t) => {
                            return Err(Error::Checkpoint(format!(
                                "{name}: shape {:?} does not match spec {:?}",
                                t.shape(),
                                slot.shape()
                            )))
                        }
                        None if required => {
                            return Err(Error::Checkpoint(format!("missing tensor {name}")))
                        }
                        None => {}
                    }
                }
            }
            Ok((found > 0).then_some(params))
        };
        let params = take_params("", true)?.unwrap_or(Params(Vec::new()));
        let velocity = take_params(".velocity", false)?;
        if let Some(name) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
        Ok(Checkpoint {
            spec,
            params,
            velocity,
            meta: TrainingMeta {
                epoch,
                seed,
                loss_history,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and require the stored network to be `expected`.
    pub fn load_for(path: &Path, expected: &NetworkSpec) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.spec.digest() != expected.digest() {
            return Err(Error::Checkpoint(format!(
                "{} holds network `{}` ({}), expected `{}` ({})",
                path.display(),
                ck.spec.name(),
                &ck.spec.digest()[..12],
                expected.name(),
                &expected.digest()[..12]
            )));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::build_basic_spec;

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = build_basic_spec();
        let a = init_weights(&spec, 3).unwrap();
        let b = init_weights(&spec, 3).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), init_weights(&spec, 4).unwrap().digest());
        for layer in &a.params.0 {
            if let Some(bias) = layer.get(1) {
                assert!(bias.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let ck = init_weights(&build_basic_spec(), 1).unwrap();
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut tampered = bytes.clone();
        tampered[12] ^= 1; // inside the spec text
        assert!(Checkpoint::from_bytes(&tampered).is_err());
    }
}
