//! Forward pass of the gated convolutional-recurrent network on a tape.

use super::config::{FeatureOutput, FusionMode, GateMode, NetworkConfig};
use super::params::{BoundParams, GateStream, NetworkParams};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Color,
    Flow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateKind {
    Color,
    Flow,
    Fused,
}

/// Single-channel spatial gate of one frame, `[H/2, W/2, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMap<T> {
    pub kind: GateKind,
    pub values: Tensor<T>,
}

impl<T: Real> GateMap<T> {
    pub fn mean(&self) -> f64 {
        self.values.mean().f64()
    }
}

/// `tanh(maxpool(conv(x)))`
fn conv_block<T: Real>(tape: &mut Tape<T>, x: Var, bp: &BoundParams, name: &str) -> Result<Var> {
    let c = tape.conv2d_same(x, bp.var(&format!("{name}.kernel"))?, bp.var(&format!("{name}.bias"))?)?;
    let p = tape.maxpool_2x2(c)?;
    Ok(tape.tanh(p))
}

/// First convolutional layer of the color (`conv1`) or flow (`conv1_of`)
/// stream. Output is `[ceil(H/2), ceil(W/2), Cout]`.
pub fn shared_conv<T: Real>(
    tape: &mut Tape<T>,
    stream: Stream,
    input: Var,
    bp: &BoundParams,
    cfg: &NetworkConfig,
) -> Result<Var> {
    let (name, cin) = match stream {
        Stream::Color => ("conv1", cfg.color_channels),
        Stream::Flow => ("conv1_of", cfg.flow_channels),
    };
    let (_, _, c) = tape.value(input).dims3("shared_conv")?;
    if c != cin {
        return Err(Error::shape("shared_conv", format!("{name} expects {cin} input channels, got {c}")));
    }
    conv_block(tape, input, bp, name)
}

/// `sigmoid(conv_gate2(tanh(conv_gate1(cube) + broadcast(fc_gate1(h_prev)))))`;
/// the `fc_gate1` term is omitted when `use_prev_state` is false.
pub fn compute_gate<T: Real>(
    tape: &mut Tape<T>,
    cube: Var,
    prev_state: Var,
    bp: &BoundParams,
    stream: GateStream,
    use_prev_state: bool,
) -> Result<Var> {
    let p = stream.prefix();
    let mut a = tape.conv2d_same(cube, bp.var(&format!("{p}.conv1.kernel"))?, bp.var(&format!("{p}.conv1.bias"))?)?;
    if use_prev_state {
        let proj =
            tape.dense(prev_state, bp.var(&format!("{p}.fc.weight"))?, Some(bp.var(&format!("{p}.fc.bias"))?))?;
        a = tape.add_broadcast_vector(a, proj)?;
    }
    let t = tape.tanh(a);
    let z = tape.conv2d_same(t, bp.var(&format!("{p}.conv2.kernel"))?, bp.var(&format!("{p}.conv2.bias"))?)?;
    Ok(tape.sigmoid(z))
}

/// Combines a color gate and a flow gate.
pub fn fuse_gates<T: Real>(tape: &mut Tape<T>, gc: Var, gof: Var, mode: FusionMode) -> Result<Var> {
    match mode {
        FusionMode::F1 => tape.add(gc, gof),
        FusionMode::F2 => tape.maximum(gc, gof),
        FusionMode::F3 => {
            let s = tape.add(gc, gof)?;
            let p = tape.mul(gc, gof)?;
            tape.sub(s, p)
        }
        FusionMode::F4 => {
            let s = tape.add(gc, gof)?;
            let p = tape.mul(gc, gof)?;
            let p = tape.stop_gradient(p);
            tape.sub(s, p)
        }
    }
}

/// Gate handles of one frame. `fused` is the gate actually applied to the
/// feature maps: the fusion output in `fused` mode, otherwise the single
/// gate in use (or `None` for the ungated baseline).
#[derive(Clone, Copy, Debug, Default)]
pub struct FrameGates {
    pub color: Option<Var>,
    pub flow: Option<Var>,
    pub fused: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct FrameOutput {
    pub feature: Var,
    pub state: Var,
    pub gates: FrameGates,
}

fn check_range<T: Real>(tape: &Tape<T>, v: Var, lo: f64, hi: f64, what: &str) -> Result<()> {
    let t = tape.value(v);
    if t.data().iter().any(|x| !x.f64().is_finite()) {
        return Err(Error::NonFinite { context: format!("{what} gate"), detail: "non-finite gate value".into() });
    }
    if let Some(bad) = t.data().iter().find(|x| !(x.f64() >= lo && x.f64() <= hi)) {
        return Err(Error::GateRange(format!("{what} gate value {bad} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_gates<T: Real>(tape: &Tape<T>, gates: &FrameGates, cfg: &NetworkConfig) -> Result<()> {
    if let Some(g) = gates.color {
        check_range(tape, g, 0.0, 1.0, "color")?;
    }
    if let Some(g) = gates.flow {
        check_range(tape, g, 0.0, 1.0, "flow")?;
    }
    if let Some(g) = gates.fused {
        let (lo, hi) = if cfg.gate_mode == GateMode::Fused { cfg.fusion.range() } else { (0.0, 1.0) };
        check_range(tape, g, lo, hi, "fused")?;
    }
    Ok(())
}

/// One recurrent step: both streams, gating, conv2/conv3, recurrence.
pub fn frame_forward<T: Real>(
    tape: &mut Tape<T>,
    frame: Var,
    flow: Var,
    prev_state: Var,
    bp: &BoundParams,
    cfg: &NetworkConfig,
) -> Result<FrameOutput> {
    frame_forward_with_gate(tape, frame, flow, prev_state, bp, cfg, None)
}

/// As [`frame_forward`], but with `forced_gate` (when given) applied in place
/// of the computed gate. Used to compare the gated and ungated pathways.
#[doc(hidden)]
pub fn frame_forward_with_gate<T: Real>(
    tape: &mut Tape<T>,
    frame: Var,
    flow: Var,
    prev_state: Var,
    bp: &BoundParams,
    cfg: &NetworkConfig,
    forced_gate: Option<Var>,
) -> Result<FrameOutput> {
    let color = shared_conv(tape, Stream::Color, frame, bp, cfg)?;
    let motion = shared_conv(tape, Stream::Flow, flow, bp, cfg)?;
    let h_prev = prev_state;
    let use_h = cfg.use_prev_state;

    let mut gates = FrameGates::default();
    match cfg.gate_mode {
        GateMode::Fused => {
            let gc = compute_gate(tape, color, h_prev, bp, GateStream::Color, use_h)?;
            let gof = compute_gate(tape, motion, h_prev, bp, GateStream::Flow, use_h)?;
            gates.color = Some(gc);
            gates.flow = Some(gof);
            gates.fused = Some(fuse_gates(tape, gc, gof, cfg.fusion)?);
        }
        GateMode::ColorOnly => {
            let gc = compute_gate(tape, color, h_prev, bp, GateStream::Color, use_h)?;
            gates.color = Some(gc);
            gates.fused = Some(gc);
        }
        GateMode::FlowOnly => {
            let gof = compute_gate(tape, motion, h_prev, bp, GateStream::Flow, use_h)?;
            gates.flow = Some(gof);
            gates.fused = Some(gof);
        }
        GateMode::ConcatSingle => {
            let both = tape.concat_channels(color, motion)?;
            gates.fused = Some(compute_gate(tape, both, h_prev, bp, GateStream::Joint, use_h)?);
        }
        GateMode::None => {}
    }
    check_gates(tape, &gates, cfg)?;

    let applied = forced_gate.or(gates.fused);
    let (color, motion) = match applied {
        Some(g) => (tape.mul_broadcast_gate(g, color)?, tape.mul_broadcast_gate(g, motion)?),
        None => (color, motion),
    };
    let x = tape.concat_channels(color, motion)?;
    let x = conv_block(tape, x, bp, "conv2")?;
    let x = conv_block(tape, x, bp, "conv3")?;
    let flat = tape.flatten(x);
    let joined = tape.concat_channels(flat, h_prev)?;
    let o = tape.dense(joined, bp.var("rnn.weight")?, Some(bp.var("rnn.bias")?))?;
    let h = tape.tanh(o);
    if !tape.value(o).all_finite() {
        let bad = tape.value(o).data().iter().filter(|v| !v.is_finite()).count();
        return Err(Error::NonFinite {
            context: "frame_forward".into(),
            detail: format!("{bad} non-finite recurrent outputs"),
        });
    }
    let feature = match cfg.feature_output {
        FeatureOutput::PreActivation => o,
        FeatureOutput::State => h,
    };
    Ok(FrameOutput { feature, state: h, gates })
}

#[derive(Clone, Debug)]
pub struct SequenceOutput {
    /// Mean of the per-frame features.
    pub feature: Var,
    pub frames: Vec<FrameOutput>,
}

/// Runs the recurrence from a zero state over `(frame, flow)` pairs and
/// averages the per-frame features.
pub fn sequence_forward<T: Real>(
    tape: &mut Tape<T>,
    inputs: &[(Var, Var)],
    bp: &BoundParams,
    cfg: &NetworkConfig,
) -> Result<SequenceOutput> {
    if inputs.is_empty() {
        return Err(Error::Data("cannot run a network over an empty clip".into()));
    }
    let mut h = tape.constant(Tensor::zeros([cfg.state_dim]));
    let mut frames = Vec::with_capacity(inputs.len());
    for &(frame, flow) in inputs {
        let out = frame_forward(tape, frame, flow, h, bp, cfg)?;
        h = out.state;
        frames.push(out);
    }
    let feats: Vec<Var> = frames.iter().map(|f| f.feature).collect();
    let sum = tape.add_n(&feats)?;
    let feature = tape.scale(sum, 1.0 / frames.len() as f64);
    Ok(SequenceOutput { feature, frames })
}

/// Normalized network input for one clip: `[H, W, 3]` frames and
/// `[H, W, 2]` flows.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipInput<T> {
    pub frames: Vec<Tensor<T>>,
    pub flows: Vec<Tensor<T>>,
}

impl<T: Real> ClipInput<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Records every frame and flow as constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<(Var, Var)> {
        self.frames.iter().zip(&self.flows).map(|(f, o)| (tape.constant(f.clone()), tape.constant(o.clone()))).collect()
    }
}

/// Gate values of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGateValues<T> {
    pub color: Option<GateMap<T>>,
    pub flow: Option<GateMap<T>>,
    pub fused: Option<GateMap<T>>,
}

impl<T: Real> FrameGateValues<T> {
    pub fn from_tape(tape: &Tape<T>, gates: &FrameGates) -> Self {
        let grab = |v: Option<Var>, kind| v.map(|v| GateMap { kind, values: tape.value(v).clone() });
        FrameGateValues {
            color: grab(gates.color, GateKind::Color),
            flow: grab(gates.flow, GateKind::Flow),
            fused: grab(gates.fused, GateKind::Fused),
        }
    }
}

/// Result of a gradient-free pass over a clip.
#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub feature: Tensor<T>,
    pub frame_features: Vec<Tensor<T>>,
    pub gates: Vec<FrameGateValues<T>>,
}

/// A network configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub params: NetworkParams<T>,
}

impl<T: Real> Network<T> {
    pub fn new(config: NetworkConfig, params: NetworkParams<T>) -> Result<Self> {
        let named = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        NetworkParams::from_named(&config, named)?;
        Ok(Network { config, params })
    }

    /// Runs the recurrence without recording gradients. Memory stays flat
    /// in the clip length: each frame's records are discarded once its
    /// feature and state are read off.
    pub fn infer(&self, clip: &ClipInput<T>) -> Result<Inference<T>> {
        if clip.is_empty() {
            return Err(Error::Data("cannot run a network over an empty clip".into()));
        }
        let mut tape = Tape::new();
        let bp = self.params.bind(&mut tape, false);
        let mark = tape.len();
        let mut h = Tensor::zeros([self.config.state_dim]);
        let mut frame_features = Vec::with_capacity(clip.len());
        let mut gates = Vec::with_capacity(clip.len());
        for (frame, flow) in clip.frames.iter().zip(&clip.flows) {
            let fv = tape.constant(frame.clone());
            let ov = tape.constant(flow.clone());
            let hv = tape.constant(h);
            let out = frame_forward(&mut tape, fv, ov, hv, &bp, &self.config)?;
            frame_features.push(tape.value(out.feature).clone());
            gates.push(FrameGateValues::from_tape(&tape, &out.gates));
            h = tape.value(out.state).clone();
            tape.truncate(mark);
        }
        let mut feature = frame_features[0].clone();
        for f in &frame_features[1..] {
            feature.add_assign(f);
        }
        let inv = T::c(1.0 / frame_features.len() as f64);
        feature.data_mut().iter_mut().for_each(|v| *v *= inv);
        Ok(Inference { feature, frame_features, gates })
    }
}
