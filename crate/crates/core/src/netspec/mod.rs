//! The four fixed architectures: encoder `E`, generator `G`, image critic
//! `D` and the fc1-space critic `D_fc1`.
//!
//! All convolutions and deconvolutions are stride 1 without padding, so a
//! `k×k` kernel maps a side of `s` to `s − k + 1` (conv) or `s + k − 1`
//! (deconv). Max pooling is 2×2 with stride 2 and floor semantics.

mod network;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use network::{log_softmax, softmax, Network, Trace};

/// Canonical architecture names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Encoder,
    Generator,
    CriticX,
    CriticFc1,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Encoder, Role::Generator, Role::CriticX, Role::CriticFc1];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::Generator => "generator",
            Role::CriticX => "critic_x",
            Role::CriticFc1 => "critic_fc1",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Deconv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// 2×2 window, stride 2.
    MaxPool,
    /// Flattens whatever it receives.
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    /// Per-sample target shape.
    Reshape { shape: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
            },
            activation: Activation::Relu,
        }
    }

    pub fn deconv(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Deconv {
                in_channels,
                out_channels,
                kernel,
            },
            activation: Activation::Relu,
        }
    }

    pub fn fc(name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::FullyConnected {
                in_features,
                out_features,
            },
            activation: Activation::Relu,
        }
    }

    pub fn pool(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::MaxPool,
            activation: Activation::None,
        }
    }

    pub fn reshape(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Reshape {
                shape: shape.to_vec(),
            },
            activation: Activation::None,
        }
    }

    pub fn linear_output(mut self) -> Self {
        self.activation = Activation::None;
        self
    }

    /// Weight and bias shapes, if the layer has parameters.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerKind::Deconv {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![in_channels, out_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            LayerKind::MaxPool | LayerKind::Reshape { .. } => None,
        }
    }

    /// Inputs feeding one output unit; sets the initialization bound.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels, kernel, ..
            }
            | LayerKind::Deconv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerKind::FullyConnected { in_features, .. } => in_features,
            LayerKind::MaxPool | LayerKind::Reshape { .. } => 0,
        }
    }

    /// Output shape for one sample of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let err = |why: String| Err(Error::Shape(format!("layer {}: {why}", self.name)));
        match &self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
            }
            | LayerKind::Deconv {
                in_channels,
                out_channels,
                kernel,
            } => {
                let &[c, h, w] = input else {
                    return err(format!("expects C×H×W input, got {input:?}"));
                };
                if c != *in_channels {
                    return err(format!("expects {in_channels} channels, got {c}"));
                }
                let deconv = matches!(self.kind, LayerKind::Deconv { .. });
                let side = |s: usize| {
                    if deconv {
                        Some(s + kernel - 1)
                    } else {
                        (s + 1).checked_sub(*kernel).filter(|&o| o > 0)
                    }
                };
                match (side(h), side(w)) {
                    (Some(oh), Some(ow)) => Ok(vec![*out_channels, oh, ow]),
                    _ => err(format!("kernel {kernel} does not fit {h}×{w}")),
                }
            }
            LayerKind::MaxPool => {
                let &[c, h, w] = input else {
                    return err(format!("expects C×H×W input, got {input:?}"));
                };
                if h < 2 || w < 2 {
                    return err(format!("cannot pool {h}×{w}"));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != *in_features {
                    return err(format!("expects {in_features} features, got {n} from {input:?}"));
                }
                Ok(vec![*out_features])
            }
            LayerKind::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return err(format!("cannot reshape {input:?} into {shape:?}"));
                }
                Ok(shape.clone())
            }
        }
    }

    fn describe(&self) -> String {
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::None => "none",
        };
        match &self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
            } => format!("conv({in_channels},{out_channels},{kernel}) {act}"),
            LayerKind::Deconv {
                in_channels,
                out_channels,
                kernel,
            } => format!("deconv({in_channels},{out_channels},{kernel}) {act}"),
            LayerKind::MaxPool => "maxpool(2)".into(),
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => format!("fully_connected({in_features},{out_features}) {act}"),
            LayerKind::Reshape { shape } => format!("reshape({})", dims(shape)),
        }
    }
}

pub(crate) fn dims(shape: &[usize]) -> String {
    shape
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Per-sample input shape.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Layer names whose activations are exposed as named taps.
    pub tap_points: Vec<String>,
}

pub type ShapeChain = Vec<(String, Vec<usize>)>;

impl ArchitectureSpec {
    pub fn new(name: &str, input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            layers,
            tap_points: Vec::new(),
        };
        shape_chain(&spec, input_shape)?;
        Ok(spec)
    }

    pub fn with_taps(mut self, taps: &[&str]) -> Result<Self> {
        for t in taps {
            self.layer_index(t)?;
        }
        self.tap_points = taps.iter().map(|t| t.to_string()).collect();
        Ok(self)
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("{} has no layer `{name}`", self.name)))
    }

    /// `(name, shape)` for every parameter tensor, weights before biases.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .filter_map(|l| {
                l.param_shapes().map(|(w, b)| {
                    [(format!("{}.weight", l.name), w), (format!("{}.bias", l.name), b)]
                })
            })
            .flatten()
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        shape_chain(self, &self.input_shape)
            .expect("validated at construction")
            .last()
            .map(|(_, s)| s.clone())
            .unwrap_or_else(|| self.input_shape.clone())
    }

    /// Human-readable layer list with per-layer output shapes.
    pub fn manifest(&self) -> String {
        let chain = shape_chain(self, &self.input_shape).expect("validated at construction");
        let mut out = String::new();
        writeln!(out, "architecture = {}", self.name).unwrap();
        writeln!(out, "input = {}", dims(&self.input_shape)).unwrap();
        for (layer, (_, shape)) in self.layers.iter().zip(&chain) {
            writeln!(out, "layer = {} {} -> {}", layer.name, layer.describe(), dims(shape)).unwrap();
        }
        out
    }
}

/// Shape of each layer's output for a given per-sample input shape.
pub fn shape_chain(spec: &ArchitectureSpec, input_shape: &[usize]) -> Result<ShapeChain> {
    let mut shape = input_shape.to_vec();
    let mut chain = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        shape = layer.output_shape(&shape)?;
        chain.push((layer.name.clone(), shape.clone()));
    }
    Ok(chain)
}

pub fn build_spec(role: Role) -> ArchitectureSpec {
    let (input, layers, taps): (&[usize], Vec<LayerSpec>, &[&str]) = match role {
        Role::Encoder => (
            &[1, 28, 28],
            vec![
                LayerSpec::conv("conv1", 1, 64, 7),
                LayerSpec::conv("conv2", 64, 128, 7),
                LayerSpec::pool("pool2"),
                LayerSpec::conv("conv3", 128, 256, 7),
                LayerSpec::pool("pool3"),
                LayerSpec::fc("fc1", 256, 64),
                LayerSpec::fc("fc2", 64, 10).linear_output(),
            ],
            &["fc1", "fc2"],
        ),
        Role::Generator => (
            &[64],
            vec![
                LayerSpec::fc("gen-fc1", 64, 1600),
                LayerSpec::reshape("reshape", &[64, 5, 5]),
                LayerSpec::deconv("deconv2", 64, 512, 5),
                LayerSpec::deconv("deconv3", 512, 256, 5),
                LayerSpec::deconv("deconv4", 256, 256, 7),
                LayerSpec::deconv("deconv5", 256, 1, 10).linear_output(),
            ],
            &[],
        ),
        Role::CriticX => (
            &[1, 28, 28],
            vec![
                LayerSpec::conv("conv1", 1, 256, 3),
                LayerSpec::conv("conv2", 256, 256, 3),
                LayerSpec::pool("pool2"),
                LayerSpec::conv("conv3", 256, 256, 3),
                LayerSpec::pool("pool3"),
                LayerSpec::conv("conv4", 256, 512, 3),
                LayerSpec::pool("pool4"),
                LayerSpec::fc("disc-fc1", 512, 1).linear_output(),
            ],
            &[],
        ),
        Role::CriticFc1 => (
            &[64],
            vec![
                LayerSpec::reshape("reshape", &[1, 8, 8]),
                LayerSpec::conv("conv1", 1, 256, 2),
                LayerSpec::conv("conv2", 256, 256, 2),
                LayerSpec::pool("pool2"),
                LayerSpec::conv("conv3", 256, 512, 2),
                LayerSpec::pool("pool3"),
                LayerSpec::fc("disc-fc1", 512, 1).linear_output(),
            ],
            &[],
        ),
    };
    ArchitectureSpec::new(role.as_str(), input, layers)
        .and_then(|s| s.with_taps(taps))
        .expect("canonical architectures close their shape chains")
}

/// Fan-in scaled uniform weights `U(−1/√fan_in, 1/√fan_in)`, zero biases.
pub fn init_params(spec: &ArchitectureSpec, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for layer in &spec.layers {
        let Some((w_shape, b_shape)) = layer.param_shapes() else {
            continue;
        };
        let bound = 1.0 / (layer.fan_in() as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite positive bound");
        let n: usize = w_shape.iter().product();
        let w = (0..n).map(|_| dist.sample(&mut rng)).collect();
        params.push(Tensor::from_vec(&w_shape, w).expect("shape matches"));
        params.push(Tensor::zeros(&b_shape));
    }
    params
}
