use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the color and flow gates are combined into the applied gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    /// `gc + gof`
    F1,
    /// elementwise `max(gc, gof)`
    F2,
    /// `gc + gof - gc*gof`
    F3,
    /// `gc + gof - stop_gradient(gc*gof)`
    #[default]
    F4,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::F1, FusionMode::F2, FusionMode::F3, FusionMode::F4];

    /// Inclusive bounds of the fused gate.
    pub fn range(self) -> (f64, f64) {
        match self {
            FusionMode::F1 => (0.0, 2.0),
            _ => (0.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::F1 => "f1",
            FusionMode::F2 => "f2",
            FusionMode::F3 => "f3",
            FusionMode::F4 => "f4",
        }
    }
}

/// Which gate (if any) filters the first-layer feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum GateMode {
    /// Color gate and flow gate combined by the fusion function.
    #[default]
    Fused,
    ColorOnly,
    FlowOnly,
    /// One gate computed from the channel-concatenated streams.
    ConcatSingle,
    /// No gating: the ungated two-stream baseline.
    None,
}

impl GateMode {
    pub const ALL: [GateMode; 5] =
        [GateMode::Fused, GateMode::ColorOnly, GateMode::FlowOnly, GateMode::ConcatSingle, GateMode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            GateMode::Fused => "fused",
            GateMode::ColorOnly => "color_only",
            GateMode::FlowOnly => "flow_only",
            GateMode::ConcatSingle => "concat_single",
            GateMode::None => "none",
        }
    }

    pub fn is_gated(self) -> bool {
        self != GateMode::None
    }
}

/// Which recurrent quantity is averaged into the video feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FeatureOutput {
    /// The pre-activation output `o_t = W [conv3; h_{t-1}] + b`.
    #[default]
    PreActivation,
    /// The state `h_t = tanh(o_t)`.
    State,
}

impl FeatureOutput {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureOutput::PreActivation => "output",
            FeatureOutput::State => "state",
        }
    }
}

macro_rules! parse_enum {
    ($ty:ty, $what:literal, $($name:literal => $val:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($val),)+
                    other => Err(Error::InvalidConfig(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

parse_enum!(FusionMode, "fusion mode", "f1" => FusionMode::F1, "f2" => FusionMode::F2, "f3" => FusionMode::F3, "f4" => FusionMode::F4);
parse_enum!(GateMode, "gate mode",
    "fused" => GateMode::Fused,
    "color_only" => GateMode::ColorOnly, "color" => GateMode::ColorOnly,
    "flow_only" => GateMode::FlowOnly, "flow" => GateMode::FlowOnly,
    "concat_single" => GateMode::ConcatSingle, "concat" => GateMode::ConcatSingle,
    "none" => GateMode::None,
);
parse_enum!(FeatureOutput, "feature output", "output" => FeatureOutput::PreActivation, "state" => FeatureOutput::State);

/// Architecture and ablation switches of the gated network.
///
/// `height`/`width` are the extents of the frames the network consumes
/// (crops during training). Odd extents are allowed: pooling uses partial
/// trailing windows.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub height: usize,
    pub width: usize,
    pub color_channels: usize,
    pub flow_channels: usize,
    pub conv1_out: usize,
    pub conv1_of_out: usize,
    pub gate_hidden: usize,
    pub state_dim: usize,
    pub conv2_out: usize,
    pub conv3_out: usize,
    pub kernel_size: usize,
    pub fusion: FusionMode,
    pub gate_mode: GateMode,
    pub use_prev_state: bool,
    pub feature_dim: usize,
    pub feature_output: FeatureOutput,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            height: 64,
            width: 32,
            color_channels: 3,
            flow_channels: 2,
            conv1_out: 12,
            conv1_of_out: 12,
            gate_hidden: 32,
            state_dim: 128,
            conv2_out: 24,
            conv3_out: 32,
            kernel_size: 5,
            fusion: FusionMode::F4,
            gate_mode: GateMode::Fused,
            use_prev_state: true,
            feature_dim: 128,
            feature_output: FeatureOutput::PreActivation,
        }
    }
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

impl NetworkConfig {
    /// Tiny configuration used by end-to-end gradient checks: 16x8 frames
    /// and every channel count halved.
    pub fn tiny() -> Self {
        NetworkConfig {
            height: 16,
            width: 8,
            conv1_out: 6,
            conv1_of_out: 6,
            gate_hidden: 16,
            state_dim: 64,
            conv2_out: 12,
            conv3_out: 16,
            feature_dim: 64,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("frame extents must be positive, got {}x{}", self.height, self.width));
        }
        if self.color_channels != 3 || self.flow_channels != 2 {
            return bad("the color stream has 3 channels and the flow stream 2".into());
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        for (name, v) in [
            ("conv1_out", self.conv1_out),
            ("conv1_of_out", self.conv1_of_out),
            ("gate_hidden", self.gate_hidden),
            ("state_dim", self.state_dim),
            ("conv2_out", self.conv2_out),
            ("conv3_out", self.conv3_out),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.state_dim != self.feature_dim {
            return bad(format!("state_dim ({}) must equal feature_dim ({})", self.state_dim, self.feature_dim));
        }
        Ok(())
    }

    /// Spatial extents of first-layer outputs and of every gate map.
    pub fn gate_hw(&self) -> (usize, usize) {
        (half(self.height), half(self.width))
    }

    pub fn conv3_hw(&self) -> (usize, usize) {
        (half(half(half(self.height))), half(half(half(self.width))))
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w) = self.conv3_hw();
        h * w * self.conv3_out
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("color_channels", self.color_channels.to_string()),
            ("flow_channels", self.flow_channels.to_string()),
            ("conv1_out", self.conv1_out.to_string()),
            ("conv1_of_out", self.conv1_of_out.to_string()),
            ("gate_hidden", self.gate_hidden.to_string()),
            ("state_dim", self.state_dim.to_string()),
            ("conv2_out", self.conv2_out.to_string()),
            ("conv3_out", self.conv3_out.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("fusion", self.fusion.to_string()),
            ("gate_mode", self.gate_mode.to_string()),
            ("use_prev_state", self.use_prev_state.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("feature_output", self.feature_output.to_string()),
        ]
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = |v: &str| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{key}: expected an integer, got '{v}'")))
        };
        match key {
            "height" => self.height = num(value)?,
            "width" => self.width = num(value)?,
            "color_channels" => self.color_channels = num(value)?,
            "flow_channels" => self.flow_channels = num(value)?,
            "conv1_out" => self.conv1_out = num(value)?,
            "conv1_of_out" => self.conv1_of_out = num(value)?,
            "gate_hidden" => self.gate_hidden = num(value)?,
            "state_dim" => self.state_dim = num(value)?,
            "conv2_out" => self.conv2_out = num(value)?,
            "conv3_out" => self.conv3_out = num(value)?,
            "kernel_size" => self.kernel_size = num(value)?,
            "feature_dim" => self.feature_dim = num(value)?,
            "fusion" => self.fusion = value.parse()?,
            "gate_mode" => self.gate_mode = value.parse()?,
            "feature_output" => self.feature_output = value.parse()?,
            "use_prev_state" => self.use_prev_state = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::InvalidConfig(format!("{key}: expected a boolean, got '{other}'"))),
    }
}
