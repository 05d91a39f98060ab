use indexmap::IndexMap;
use rand::Rng;

use super::config::{GateMode, NetworkConfig};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Prefix of the gate-generation parameters for each gate stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateStream {
    Color,
    Flow,
    /// Single gate over the channel-concatenated streams.
    Joint,
}

impl GateStream {
    pub fn prefix(self) -> &'static str {
        match self {
            GateStream::Color => "gate_color",
            GateStream::Flow => "gate_flow",
            GateStream::Joint => "gate_joint",
        }
    }
}

fn conv_shapes(out: &mut Vec<(String, Vec<usize>)>, name: &str, k: usize, cin: usize, cout: usize) {
    out.push((format!("{name}.kernel"), vec![k, k, cin, cout]));
    out.push((format!("{name}.bias"), vec![cout]));
}

/// Gate streams that own parameters under `mode`.
pub fn gate_streams(mode: GateMode) -> &'static [GateStream] {
    match mode {
        GateMode::Fused => &[GateStream::Color, GateStream::Flow],
        GateMode::ColorOnly => &[GateStream::Color],
        GateMode::FlowOnly => &[GateStream::Flow],
        GateMode::ConcatSingle => &[GateStream::Joint],
        GateMode::None => &[],
    }
}

/// Names and shapes of every learnable array, in canonical order.
pub fn param_shapes(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let k = cfg.kernel_size;
    let mut out = Vec::new();
    conv_shapes(&mut out, "conv1", k, cfg.color_channels, cfg.conv1_out);
    conv_shapes(&mut out, "conv1_of", k, cfg.flow_channels, cfg.conv1_of_out);
    for &stream in gate_streams(cfg.gate_mode) {
        let cin = match stream {
            GateStream::Color => cfg.conv1_out,
            GateStream::Flow => cfg.conv1_of_out,
            GateStream::Joint => cfg.conv1_out + cfg.conv1_of_out,
        };
        let p = stream.prefix();
        conv_shapes(&mut out, &format!("{p}.conv1"), k, cin, cfg.gate_hidden);
        if cfg.use_prev_state {
            out.push((format!("{p}.fc.weight"), vec![cfg.gate_hidden, cfg.state_dim]));
            out.push((format!("{p}.fc.bias"), vec![cfg.gate_hidden]));
        }
        conv_shapes(&mut out, &format!("{p}.conv2"), k, cfg.gate_hidden, 1);
    }
    conv_shapes(&mut out, "conv2", k, cfg.conv1_out + cfg.conv1_of_out, cfg.conv2_out);
    conv_shapes(&mut out, "conv3", k, cfg.conv2_out, cfg.conv3_out);
    out.push(("rnn.weight".into(), vec![cfg.state_dim, cfg.flat_dim() + cfg.state_dim]));
    out.push(("rnn.bias".into(), vec![cfg.state_dim]));
    out
}

/// Uniform `±sqrt(6 / (fan_in + fan_out))` initialization for a weight
/// shape (`[k,k,cin,cout]` or `[out,in]`).
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let (fan_in, fan_out) = match shape {
        [k, k2, cin, cout] => (k * k2 * cin, k * k2 * cout),
        [out, inp] => (*inp, *out),
        _ => (shape.iter().product(), shape.iter().product()),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::c(rng.random_range(-limit..limit)))
}

/// All learnable arrays of the gated network, keyed by layer name.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let tensors = param_shapes(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") { Tensor::zeros(shape) } else { glorot_uniform(&shape, rng) };
                (name, t)
            })
            .collect();
        Ok(NetworkParams { tensors })
    }

    pub fn zeros(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = param_shapes(cfg).into_iter().map(|(n, s)| (n, Tensor::zeros(s))).collect();
        Ok(NetworkParams { tensors })
    }

    /// Assembles parameters from named tensors, checking names and shapes
    /// against `cfg`.
    pub fn from_named(cfg: &NetworkConfig, mut named: IndexMap<String, Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = IndexMap::new();
        for (name, shape) in param_shapes(cfg) {
            let t =
                named.swap_remove(&name).ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("network params", format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
            tensors.insert(name, t);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::InvalidConfig(format!("unexpected parameter {extra}")));
        }
        Ok(NetworkParams { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad))).collect(),
        }
    }
}

/// Tape handles of a bound [`NetworkParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Handles recorded elsewhere, keyed by parameter name.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams { vars: vars.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("parameter {name} is not present in this network")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
