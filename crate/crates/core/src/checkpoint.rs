//! Checkpoint directory layout:
//!
//! ```text
//! <dir>/manifest.txt      key = value header, then one `tensor` line per array
//! <dir>/<name>.bin        flat little-endian values in manifest precision
//! ```
//!
//! A tensor line reads `tensor = <name> <d0>x<d1>x... <file>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::data::{field, parse_kv};
use crate::error::{Error, Result};
use crate::losses::ClassifierParams;
use crate::network::{Network, NetworkConfig, NetworkParams};
use crate::tensor::{Precision, Real, Tensor};
use crate::training::{AdamState, ChannelStats, TrainConfig, TrainState};

pub const CHECKPOINT_FORMAT: &str = "gated-reid-checkpoint-v1";

/// A loaded checkpoint: model state plus the training settings it was
/// produced with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub state: TrainState<T>,
    pub train_config: TrainConfig,
}

fn tensor_bytes<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.numel() * T::PRECISION.byte_width());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn file_name(name: &str) -> String {
    format!("{name}.bin")
}

pub fn save_checkpoint<T: Real>(state: &TrainState<T>, train_cfg: &TrainConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut m = String::new();
    let _ = writeln!(m, "format = {CHECKPOINT_FORMAT}");
    let _ = writeln!(m, "precision = {}", T::PRECISION.as_str());
    let _ = writeln!(m, "byte_order = little");
    for (k, v) in state.network.config.to_kv() {
        let _ = writeln!(m, "config.{k} = {v}");
    }
    for (k, v) in train_cfg.to_kv() {
        let _ = writeln!(m, "train.{k} = {v}");
    }
    for (k, v) in state.stats.to_kv() {
        let _ = writeln!(m, "{k} = {v}");
    }
    let ids: Vec<String> = state.identities.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(m, "meta.identities = {}", ids.join(","));
    let _ = writeln!(m, "meta.epochs_done = {}", state.epochs_done);
    let _ = writeln!(m, "meta.adam_step = {}", state.adam.step);

    let mut arrays: Vec<(String, &Tensor<T>)> = state.network.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
    arrays.push(("cls.weight".into(), &state.classifier.weight));
    for (n, (mom1, mom2)) in &state.adam.moments {
        arrays.push((format!("adam.m.{n}"), mom1));
        arrays.push((format!("adam.v.{n}"), mom2));
    }
    for (name, t) in arrays {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let file = file_name(&name);
        let _ = writeln!(m, "tensor = {name} {} {file}", dims.join("x"));
        let path = dir.join(&file);
        fs::write(&path, tensor_bytes(t)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, m).map_err(|e| Error::io(&path, e))
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

fn parse_manifest(path: &Path, text: &str) -> Result<(BTreeMap<String, String>, Vec<TensorEntry>)> {
    let mut header = String::new();
    let mut entries = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("tensor") else {
            header.push_str(line);
            header.push('\n');
            continue;
        };
        let rest = rest.trim_start().strip_prefix('=').ok_or_else(|| Error::format(path, "malformed tensor line"))?;
        let parts: Vec<&str> = rest.split_whitespace().collect();
        let [name, dims, file] = parts[..] else {
            return Err(Error::format(path, format!("tensor line needs name, shape and file: '{line}'")));
        };
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(path, format!("bad shape '{dims}' for {name}")))?;
        if file.contains('/') || file.contains('\\') || file.starts_with('.') {
            return Err(Error::format(path, format!("tensor file '{file}' must be a plain file name")));
        }
        entries.push(TensorEntry { name: name.into(), shape, file: file.into() });
    }
    Ok((parse_kv(path, &header)?, entries))
}

/// Reads a checkpoint written in precision `T`. A checkpoint saved in the
/// other precision is rejected rather than silently converted.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<Checkpoint<T>> {
    let mpath = dir.join("manifest.txt");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let (kv, entries) = parse_manifest(&mpath, &text)?;
    let format: String = field(&mpath, &kv, "format")?;
    if format != CHECKPOINT_FORMAT {
        return Err(Error::format(&mpath, format!("unsupported format '{format}'")));
    }
    let precision: String = field(&mpath, &kv, "precision")?;
    let precision = Precision::parse(&precision).ok_or_else(|| Error::format(&mpath, "unknown precision"))?;
    if precision != T::PRECISION {
        return Err(Error::format(
            &mpath,
            format!("checkpoint precision is {} but {} was requested", precision.as_str(), T::PRECISION.as_str()),
        ));
    }
    if kv.get("byte_order").map(String::as_str) != Some("little") {
        return Err(Error::format(&mpath, "byte_order must be little"));
    }

    let mut net_cfg = NetworkConfig::default();
    let mut train_cfg = TrainConfig::default();
    let mut mean = [0.0; 5];
    let mut std = [0.0; 5];
    for (k, v) in &kv {
        let known = if let Some(key) = k.strip_prefix("config.") {
            net_cfg.set(key, v)?
        } else if let Some(key) = k.strip_prefix("train.") {
            train_cfg.set(key, v)?
        } else {
            true
        };
        if !known {
            return Err(Error::format(&mpath, format!("unknown key '{k}'")));
        }
    }
    for c in 0..5 {
        mean[c] = field(&mpath, &kv, &format!("stats.mean.{c}"))?;
        std[c] = field(&mpath, &kv, &format!("stats.std.{c}"))?;
    }
    let ids: String = field(&mpath, &kv, "meta.identities")?;
    let identities = ids
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::format(&mpath, "meta.identities is malformed"))?;
    let epochs_done: usize = field(&mpath, &kv, "meta.epochs_done")?;
    let adam_step: u64 = field(&mpath, &kv, "meta.adam_step")?;

    let width = T::PRECISION.byte_width();
    let mut tensors: IndexMap<String, Tensor<T>> = IndexMap::new();
    for e in entries {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        let n: usize = e.shape.iter().product();
        if bytes.len() != n * width {
            return Err(Error::format(&path, format!("expected {} bytes, found {}", n * width, bytes.len())));
        }
        let data = bytes.chunks_exact(width).map(T::read_le).collect();
        if tensors.insert(e.name.clone(), Tensor::new(e.shape, data)?).is_some() {
            return Err(Error::format(&mpath, format!("duplicate tensor '{}'", e.name)));
        }
    }

    let cls = tensors.shift_remove("cls.weight").ok_or_else(|| Error::format(&mpath, "missing cls.weight"))?;
    if cls.shape() != [identities.len(), net_cfg.feature_dim] {
        return Err(Error::format(&mpath, format!("cls.weight has shape {:?}", cls.shape())));
    }
    let mut net = IndexMap::new();
    let mut m1 = IndexMap::new();
    let mut m2 = IndexMap::new();
    for (name, t) in tensors {
        if let Some(p) = name.strip_prefix("adam.m.") {
            m1.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            m2.insert(p.to_string(), t);
        } else {
            net.insert(name, t);
        }
    }
    let mut moments = IndexMap::new();
    for (name, a) in m1 {
        let b = m2.shift_remove(&name).ok_or_else(|| Error::format(&mpath, format!("adam.v.{name} missing")))?;
        moments.insert(name, (a, b));
    }
    if let Some(name) = m2.keys().next() {
        return Err(Error::format(&mpath, format!("adam.m.{name} missing")));
    }
    let params = NetworkParams::from_named(&net_cfg, net)?;
    if !params.all_finite() {
        return Err(Error::NonFinite {
            context: "load_checkpoint".into(),
            detail: "parameters contain NaN or Inf".into(),
        });
    }
    Ok(Checkpoint {
        state: TrainState {
            network: Network::new(net_cfg, params)?,
            classifier: ClassifierParams { weight: cls },
            adam: AdamState { step: adam_step, moments },
            epochs_done,
            identities,
            stats: ChannelStats { mean, std },
        },
        train_config: train_cfg,
    })
}

/// Peeks at the precision a checkpoint was written in.
pub fn checkpoint_precision(dir: &Path) -> Result<Precision> {
    let mpath = dir.join("manifest.txt");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let (kv, _) = parse_manifest(&mpath, &text)?;
    let p: String = field(&mpath, &kv, "precision")?;
    Precision::parse(&p).ok_or_else(|| Error::format(&mpath, "unknown precision"))
}
