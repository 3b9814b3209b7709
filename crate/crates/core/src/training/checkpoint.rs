//! Checkpoint directories:
//!
//! ```text
//! ckpt/
//!   manifest.txt   key=value lines
//!   history.csv    epoch,loss,loss_y,loss_x
//!   tensors/*.bin  one TNSR file per parameter (and Adam moment)
//! ```
//!
//! Each `tensor=` manifest line reads `name file shape sha256`, the shape
//! written as `AxBxC`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{AdamState, EpochStats, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::geodata::Norm;
use crate::models::{build_model, ModelConfig};
use crate::tensor::{read_tensor_from, write_tensor_to, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "seisinv-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub trained: TrainedModel,
    pub train: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub adam: Option<AdamState<f32>>,
    pub history: Vec<EpochStats>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

struct TensorEntry {
    file: String,
    shape: Vec<usize>,
    sha256: String,
}

fn write_tensor_file(
    dir: &Path,
    name: &str,
    t: &Tensor<f32>,
    manifest: &mut String,
) -> Result<()> {
    let file = format!("tensors/{name}.bin");
    let path = dir.join(&file);
    let mut bytes = Vec::new();
    write_tensor_to(&mut bytes, t).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    let _ = writeln!(
        manifest,
        "tensor={name} {file} {} {}",
        shape_str(t.shape()),
        sha_hex(&bytes)
    );
    Ok(())
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("epoch,loss,loss_y,loss_x\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{}", h.epoch, h.loss, h.loss_y, h.loss_x);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<EpochStats>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: &str| {
        Error::format(format!("{} line {line}", path.display()), reason)
    };
    let mut lines = text.lines();
    if lines.next() != Some("epoch,loss,loss_y,loss_x") {
        return Err(bad(1, "expected header epoch,loss,loss_y,loss_x"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 2, "expected 4 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
            Ok(EpochStats {
                epoch: f[0].parse().map_err(|_| bad(i + 2, "bad epoch"))?,
                loss: num(f[1])?,
                loss_y: num(f[2])?,
                loss_x: num(f[3])?,
            })
        })
        .collect()
}

/// Writes `ckpt` into `dir`, creating it if needed. Output is a pure
/// function of the checkpoint contents.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let tensors = dir.join("tensors");
    fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
    let t = &ckpt.trained;
    let mut m = String::new();
    let _ = writeln!(m, "format={FORMAT_TAG}");
    let _ = writeln!(m, "version={CHECKPOINT_VERSION}");
    let _ = writeln!(m, "variant={}", t.model.variant);
    let _ = writeln!(m, "epoch={}", ckpt.epoch);
    let _ = writeln!(m, "param_count={}", t.params.param_count());
    for (key, norm) in [("seismic_norm", t.seismic_norm), ("impedance_norm", t.impedance_norm)] {
        let _ = writeln!(m, "{key}.mean={}", norm.mean);
        let _ = writeln!(m, "{key}.std={}", norm.std);
    }
    let _ = writeln!(m, "model_config={}", json(&t.model)?);
    let _ = writeln!(m, "train_config={}", json(&ckpt.train)?);
    let named = t.params.named_params();
    for (name, tensor) in &named {
        write_tensor_file(dir, name, tensor, &mut m)?;
    }
    if let Some(adam) = &ckpt.adam {
        let _ = writeln!(m, "adam.t={}", adam.t);
        for (((name, _), mo), vo) in named.iter().zip(&adam.m).zip(&adam.v) {
            write_tensor_file(dir, &format!("adam.m.{name}"), mo, &mut m)?;
            write_tensor_file(dir, &format!("adam.v.{name}"), vo, &mut m)?;
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, m).map_err(|e| Error::io(&path, e))?;
    write_history_csv(dir.join("history.csv"), &ckpt.history)
}

fn json<V: serde::Serialize>(v: &V) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::format("config", e.to_string()))
}

struct Manifest {
    path: PathBuf,
    keys: BTreeMap<String, String>,
    tensors: BTreeMap<String, TensorEntry>,
}

impl Manifest {
    fn parse(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut keys = BTreeMap::new();
        let mut tensors = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| {
                Error::format(format!("{} line {}", path.display(), i + 1), reason)
            };
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            if k == "tensor" {
                let f: Vec<&str> = v.split(' ').collect();
                if f.len() != 4 {
                    return Err(bad("tensor entry needs name, file, shape and sha256"));
                }
                let shape = f[2]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad tensor shape"))?;
                tensors.insert(
                    f[0].to_string(),
                    TensorEntry {
                        file: f[1].to_string(),
                        shape,
                        sha256: f[3].to_string(),
                    },
                );
            } else {
                keys.insert(k.to_string(), v.to_string());
            }
        }
        Ok(Manifest {
            path: path.to_path_buf(),
            keys,
            tensors,
        })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.keys
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(self.path.display().to_string(), format!("missing key `{key}`")))
    }

    fn parse_key<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?.parse().map_err(|_| {
            Error::format(self.path.display().to_string(), format!("bad value for `{key}`"))
        })
    }

    fn tensor(&self, dir: &Path, name: &str, expected: &[usize]) -> Result<Tensor<f32>> {
        let default = dir.join("tensors").join(format!("{name}.bin"));
        let entry = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(default.clone()))?;
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(Error::MissingTensor(path));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha_hex(&bytes) != entry.sha256 {
            return Err(Error::Checksum(path));
        }
        let t = read_tensor_from(&bytes)?;
        if t.shape() != expected || entry.shape != expected {
            return Err(Error::shape("checkpoint tensor", t.shape(), expected));
        }
        Ok(t)
    }
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest = Manifest::parse(&dir.join("manifest.txt"))?;
    let what = manifest.path.display().to_string();
    let format = manifest.get("format")?;
    if format != FORMAT_TAG {
        return Err(Error::Version {
            what,
            found: format!("format {format}"),
        });
    }
    let version = manifest.get("version")?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(Error::Version {
            what,
            found: version.to_string(),
        });
    }
    let config_err = |key: &str, e: serde_json::Error| {
        Error::format(format!("{what} `{key}`"), e.to_string())
    };
    let model: ModelConfig = serde_json::from_str(manifest.get("model_config")?)
        .map_err(|e| config_err("model_config", e))?;
    let train: TrainConfig = serde_json::from_str(manifest.get("train_config")?)
        .map_err(|e| config_err("train_config", e))?;
    // the layout comes from the config; values are overwritten below
    let mut params = build_model::<f32, _>(&model, &mut ChaCha8Rng::seed_from_u64(0))?;
    let names: Vec<(String, Vec<usize>)> = params
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    for ((name, shape), slot) in names.iter().zip(params.params_mut()) {
        *slot = manifest.tensor(dir, name, shape)?;
    }
    let adam = if manifest.keys.contains_key("adam.t") {
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (name, shape) in &names {
            m.push(manifest.tensor(dir, &format!("adam.m.{name}"), shape)?);
            v.push(manifest.tensor(dir, &format!("adam.v.{name}"), shape)?);
        }
        Some(AdamState {
            m,
            v,
            t: manifest.parse_key("adam.t")?,
        })
    } else {
        None
    };
    let norm = |key: &str| -> Result<Norm> {
        Ok(Norm {
            mean: manifest.parse_key(&format!("{key}.mean"))?,
            std: manifest.parse_key(&format!("{key}.std"))?,
        })
    };
    let history_path = dir.join("history.csv");
    let history = if history_path.is_file() {
        read_history_csv(&history_path)?
    } else {
        Vec::new()
    };
    Ok(Checkpoint {
        trained: TrainedModel {
            model,
            params,
            seismic_norm: norm("seismic_norm")?,
            impedance_norm: norm("impedance_norm")?,
        },
        train,
        epoch: manifest.parse_key("epoch")?,
        adam,
        history,
    })
}
