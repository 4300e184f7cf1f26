use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Real, Tensor};

use super::{init_params, Activation, ArchitectureSpec, LayerKind};

/// An architecture together with its parameters. Parameters are stored in
/// [`ArchitectureSpec::param_shapes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    spec: ArchitectureSpec,
    params: Vec<Tensor<T>>,
    /// For each layer, the index of its weight in `params` (bias follows).
    slots: Vec<Option<usize>>,
    param_seed: u64,
}

/// Everything a forward pass records for differentiation.
#[derive(Clone, Debug)]
pub struct Trace<T = f32> {
    pub input: Tensor<T>,
    /// Post-activation output of every layer.
    pub outputs: Vec<Tensor<T>>,
    /// Pooling choices, for pool layers only.
    pub(crate) argmax: Vec<Option<Vec<u32>>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().unwrap_or(&self.input)
    }

    pub fn layer_input(&self, i: usize) -> &Tensor<T> {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

fn slots_for(spec: &ArchitectureSpec) -> Vec<Option<usize>> {
    let mut next = 0;
    spec.layers
        .iter()
        .map(|l| {
            l.param_shapes().map(|_| {
                next += 2;
                next - 2
            })
        })
        .collect()
}

impl Network<f32> {
    /// Freshly initialized network (see [`init_params`]).
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Self::from_params(spec, params, seed).expect("init_params follows the spec")
    }
}

impl<T: Real> Network<T> {
    pub fn from_params(spec: ArchitectureSpec, params: Vec<Tensor<T>>, param_seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} expects {} parameter tensors, got {}",
                spec.name,
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            slots: slots_for(&spec),
            spec,
            params,
            param_seed,
        })
    }

    /// Same network with every parameter set to zero.
    pub fn zeroed(spec: ArchitectureSpec) -> Self {
        let params = spec
            .param_shapes()
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        Self::from_params(spec, params, 0).expect("shapes come from the spec")
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_seed(&self) -> u64 {
        self.param_seed
    }

    pub fn param_names(&self) -> Vec<String> {
        self.spec.param_shapes().into_iter().map(|(n, _)| n).collect()
    }

    pub(crate) fn slot(&self, layer: usize) -> Option<usize> {
        self.slots[layer]
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            slots: self.slots.clone(),
            param_seed: self.param_seed,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape().len() < 2 || input.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::Shape(format!(
                "{} expects [batch, {}] input, got {:?}",
                self.spec.name,
                super::dims(&self.spec.input_shape),
                input.shape()
            )));
        }
        Ok(())
    }

    /// Run layers `0..=last`, recording what differentiation needs.
    pub fn trace_to(&self, input: &Tensor<T>, last: usize) -> Result<Trace<T>> {
        self.check_input(input)?;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(last + 1);
        let mut argmax = Vec::with_capacity(last + 1);
        for (i, layer) in self.spec.layers.iter().enumerate().take(last + 1) {
            let x = outputs.last().unwrap_or(input);
            let wb = self.slot(i).map(|s| (self.params[s].data(), self.params[s + 1].data()));
            let mut arg = None;
            let mut y = match (&layer.kind, wb) {
                (LayerKind::Conv { out_channels, kernel, .. }, Some((w, b))) => {
                    kernels::conv_forward(x, w, Some(b), *out_channels, *kernel)
                }
                (LayerKind::Deconv { out_channels, kernel, .. }, Some((w, b))) => {
                    kernels::deconv_forward(x, w, Some(b), *out_channels, *kernel)
                }
                (LayerKind::FullyConnected { out_features, .. }, Some((w, b))) => {
                    kernels::linear_forward(x, w, Some(b), *out_features)
                }
                (LayerKind::MaxPool, None) => {
                    let (y, a) = kernels::pool_forward(x);
                    arg = Some(a);
                    y
                }
                (LayerKind::Reshape { shape }, None) => {
                    let mut full = vec![x.batch()];
                    full.extend_from_slice(shape);
                    x.clone().reshaped(&full)?
                }
                _ => unreachable!("parameter slots follow layer kinds"),
            };
            if layer.activation == Activation::Relu {
                y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            outputs.push(y);
            argmax.push(arg);
        }
        Ok(Trace {
            input: input.clone(),
            outputs,
            argmax,
        })
    }

    pub fn trace(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        self.trace_to(input, self.spec.layers.len() - 1)
    }

    /// ReLU on/off bits and max-pool winners of a trace. Inputs with equal
    /// patterns lie in the same linear region, so the network and its
    /// gradients are smooth between them.
    pub fn activation_pattern(&self, trace: &Trace<T>) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, layer) in self.spec.layers.iter().enumerate().take(trace.outputs.len()) {
            if layer.activation == Activation::Relu {
                out.extend(trace.outputs[i].data().iter().map(|&v| u32::from(v > T::zero())));
            }
            if let Some(a) = &trace.argmax[i] {
                out.extend_from_slice(a);
            }
        }
        out
    }

    /// Final output plus the requested tap activations, in request order.
    pub fn forward(&self, input: &Tensor<T>, taps: &[&str]) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let idx = taps
            .iter()
            .map(|t| self.spec.layer_index(t))
            .collect::<Result<Vec<_>>>()?;
        let mut trace = self.trace(input)?;
        let tapped = idx.iter().map(|&i| trace.outputs[i].clone()).collect();
        let out = trace.outputs.pop().unwrap_or_else(|| input.clone());
        Ok((out, tapped))
    }

    /// Output of a single layer, skipping everything after it.
    pub fn forward_to(&self, input: &Tensor<T>, layer: &str) -> Result<Tensor<T>> {
        let i = self.spec.layer_index(layer)?;
        let mut trace = self.trace_to(input, i)?;
        Ok(trace.outputs.pop().expect("at least one layer ran"))
    }

    pub fn output(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(input, &[])?.0)
    }
}

/// Row-wise softmax of a `[batch, classes]` tensor.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    for i in 0..out.batch() {
        let row = out.sample_mut(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / s);
    }
    out
}

/// Row-wise log-softmax of a `[batch, classes]` tensor.
pub fn log_softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    for i in 0..out.batch() {
        let row = out.sample_mut(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
    out
}
