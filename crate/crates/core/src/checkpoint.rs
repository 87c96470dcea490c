//! Self-describing checkpoint archive.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every array as little-endian `f32` in header order.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{BundleSpec, PipelineBundle, Role};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RHIDECK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Slot {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    role: Role,
    name: String,
    slot: Slot,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimEntry {
    role: Role,
    config: AdamConfig,
    t: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: BundleSpec,
    n: usize,
    step: u64,
    config: Option<serde_json::Value>,
    optimizers: Vec<OptimEntry>,
    tensors: Vec<Entry>,
}

/// Bundle weights plus training progress.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub bundle: PipelineBundle,
    pub step: u64,
    pub optimizers: Vec<(Role, Adam)>,
    /// Free-form record of the configuration that produced the checkpoint.
    pub config: Option<serde_json::Value>,
}

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {what}", path.display()))
}

impl Checkpoint {
    pub fn new(bundle: PipelineBundle) -> Self {
        Self { bundle, step: 0, optimizers: Vec::new(), config: None }
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tensors = Vec::new();
        let mut blobs: Vec<&Tensor<f32>> = Vec::new();
        for role in self.bundle.roles() {
            let params = self.bundle.params(role).expect("role listed by bundle");
            for (name, t) in params.names().iter().zip(params.values()) {
                tensors.push(Entry { role, name: name.clone(), slot: Slot::Param, shape: t.shape().to_vec() });
                blobs.push(t);
            }
        }
        let mut optimizers = Vec::new();
        for (role, adam) in &self.optimizers {
            let params = self
                .bundle
                .params(*role)
                .ok_or_else(|| Error::Checkpoint(format!("optimiser state for absent network {}", role.name())))?;
            optimizers.push(OptimEntry { role: *role, config: adam.config, t: adam.t });
            for (slot, state) in [(Slot::AdamM, &adam.m), (Slot::AdamV, &adam.v)] {
                for (name, t) in params.names().iter().zip(state) {
                    tensors.push(Entry { role: *role, name: name.clone(), slot, shape: t.shape().to_vec() });
                    blobs.push(t);
                }
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            spec: self.bundle.spec().clone(),
            n: self.bundle.n(),
            step: self.step,
            config: self.config.clone(),
            optimizers,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut bytes = Vec::with_capacity(20 + json.len() + blobs.iter().map(|t| 4 * t.len()).sum::<usize>());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for t in blobs {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_atomic(path, &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(path, format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| corrupt(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.n != header.spec.n {
            return Err(corrupt(path, "secret count disagrees with network spec"));
        }
        let mut bundle = PipelineBundle::new(header.spec.clone(), 0)?;
        let mut optimizers: Vec<(Role, Adam)> = header
            .optimizers
            .iter()
            .map(|o| {
                let params = bundle.params(o.role).ok_or_else(|| corrupt(path, "optimiser for absent network"))?;
                let mut adam = Adam::new(o.config, params.values());
                adam.t = o.t;
                Ok((o.role, adam))
            })
            .collect::<Result<_>>()?;

        let mut cursor = 20 + hlen;
        let mut seen = BTreeSet::new();
        for e in &header.tensors {
            let len: usize = e.shape.iter().product();
            let raw = bytes.get(cursor..cursor + 4 * len).ok_or_else(|| corrupt(path, "truncated tensor data"))?;
            cursor += 4 * len;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let tensor = Tensor::from_vec(&e.shape, data)?;
            let params = bundle.params(e.role).ok_or_else(|| corrupt(path, "tensor for absent network"))?;
            let idx = params.index_of(&e.name).ok_or_else(|| corrupt(path, format!("unknown tensor {}", e.name)))?;
            if params.values()[idx].shape() != e.shape.as_slice() {
                return Err(corrupt(path, format!("shape mismatch for {}", e.name)));
            }
            let dst = match e.slot {
                Slot::Param => {
                    seen.insert((e.role.name(), idx));
                    &mut bundle.params_mut(e.role).expect("checked above").values_mut()[idx]
                }
                Slot::AdamM | Slot::AdamV => {
                    let adam = optimizers
                        .iter_mut()
                        .find(|(r, _)| *r == e.role)
                        .map(|(_, a)| a)
                        .ok_or_else(|| corrupt(path, "optimiser tensor without optimiser entry"))?;
                    if e.slot == Slot::AdamM { &mut adam.m[idx] } else { &mut adam.v[idx] }
                }
            };
            *dst = tensor;
        }
        if cursor != bytes.len() {
            return Err(corrupt(path, "trailing bytes"));
        }
        let expected: usize = bundle.roles().iter().map(|r| bundle.params(*r).expect("role").len()).sum();
        if seen.len() != expected {
            return Err(corrupt(path, format!("{} of {expected} parameter arrays present", seen.len())));
        }
        Ok(Self { bundle, step: header.step, optimizers, config: header.config })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(format!(".tmp{}", std::process::id()));
        path.with_file_name(name)
    };
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
