//! Reverse-mode gradients for [`Network`]s.
//!
//! Besides the ordinary adjoint pass this module provides the second-order
//! quantity the gradient penalty needs: the parameter gradient of a function
//! of `∇_u D(u)`. For piecewise-linear networks (ReLU, max pooling) the
//! Jacobian `∂D/∂u` is a product of weight matrices and fixed 0/1 masks, so
//! with `v = ∂φ/∂g` held fixed,
//!
//! ```text
//! ∇_θ φ(∇_u D(u; θ)) = ∇_θ ⟨v, ∇_u D(u; θ)⟩ = ∇_θ (J_u D · v)
//! ```
//!
//! which is a forward tangent pass through the linearized network followed
//! by an adjoint pass over that tangent computation. Biases do not enter the
//! tangent path and receive zero second-order gradient.

use crate::error::{Error, Result};
use crate::kernels;
use crate::netspec::{Activation, ArchitectureSpec, LayerKind, Network, Trace};
use crate::tensor::{Real, Tensor};

/// Parameter gradients aligned one-to-one with a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_for(net: &Network<T>) -> Self {
        Self {
            tensors: net.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, s);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors.iter_mut().for_each(|t| t.scale(s));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite gradient in {what}")))
        }
    }

    /// L2 norm of each layer's weight and bias gradients together.
    pub fn layer_norms(&self, spec: &ArchitectureSpec) -> Vec<(String, f64)> {
        spec.layers
            .iter()
            .filter(|l| l.param_shapes().is_some())
            .zip(self.tensors.chunks(2))
            .map(|(l, pair)| {
                let ss: f64 = pair.iter().map(|t| t.sum_sq().as_f64()).sum();
                (l.name.clone(), ss.sqrt())
            })
            .collect()
    }
}

/// Result of one adjoint pass.
#[derive(Clone, Debug)]
pub struct Backprop<T = f32> {
    pub params: GradientSet<T>,
    /// Gradient with respect to the network input, when requested.
    pub input: Option<Tensor<T>>,
}

/// Where layer inputs come from during an adjoint pass: the primal trace for
/// ordinary gradients, or a tangent trace for the second-order pass.
enum LayerInputs<'a, T> {
    Primal(&'a Trace<T>),
    Tangent(&'a TangentTrace<T>),
}

impl<T: Real> LayerInputs<'_, T> {
    fn get(&self, i: usize) -> &Tensor<T> {
        match self {
            LayerInputs::Primal(t) => t.layer_input(i),
            LayerInputs::Tangent(t) => &t.inputs[i],
        }
    }
}

fn adjoint<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    inputs: LayerInputs<'_, T>,
    seeds: &[(usize, &Tensor<T>)],
    with_bias: bool,
    need_input: bool,
) -> Result<Backprop<T>> {
    let layers = &net.spec().layers;
    for &(i, g) in seeds {
        let Some(out) = trace.outputs.get(i) else {
            return Err(Error::Shape(format!("seed for layer {i} beyond the trace")));
        };
        if g.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "seed for {} has shape {:?}, output is {:?}",
                layers[i].name,
                g.shape(),
                out.shape()
            )));
        }
    }
    let mut grads = GradientSet::zeros_for(net);
    let top = seeds.iter().map(|&(i, _)| i).max();
    let mut carry: Option<Tensor<T>> = None;
    let Some(top) = top else {
        return Ok(Backprop {
            params: grads,
            input: need_input.then(|| Tensor::zeros(trace.input.shape())),
        });
    };
    for i in (0..=top).rev() {
        for &(si, g) in seeds.iter().filter(|(si, _)| *si == i) {
            debug_assert_eq!(si, i);
            match carry.as_mut() {
                Some(c) => c.add_scaled(g, T::one()),
                None => carry = Some(g.clone()),
            }
        }
        let Some(mut g) = carry.take() else { continue };
        let layer = &layers[i];
        if layer.activation == Activation::Relu {
            for (gv, &y) in g.data_mut().iter_mut().zip(trace.outputs[i].data()) {
                if y <= T::zero() {
                    *gv = T::zero();
                }
            }
        }
        let need_dx = i > 0 || need_input;
        let x = inputs.get(i);
        let dx = match (&layer.kind, net.slot(i)) {
            (LayerKind::Conv { kernel, .. }, Some(s)) => {
                let w = net.params()[s].data();
                let (dw, db) = split_pair(&mut grads.tensors, s);
                kernels::conv_backward(x, &g, w, *kernel, dw, with_bias.then_some(db), need_dx)
            }
            (LayerKind::Deconv { kernel, .. }, Some(s)) => {
                let w = net.params()[s].data();
                let (dw, db) = split_pair(&mut grads.tensors, s);
                kernels::deconv_backward(x, &g, w, *kernel, dw, with_bias.then_some(db), need_dx)
            }
            (LayerKind::FullyConnected { .. }, Some(s)) => {
                let w = net.params()[s].data();
                let (dw, db) = split_pair(&mut grads.tensors, s);
                kernels::linear_backward(x, &g, w, dw, with_bias.then_some(db), need_dx)
            }
            (LayerKind::MaxPool, None) => {
                let arg = trace.argmax[i].as_ref().expect("pool layers record argmax");
                need_dx.then(|| kernels::pool_backward(x.shape(), &g, arg))
            }
            (LayerKind::Reshape { .. }, None) => {
                need_dx.then(|| g.reshaped(x.shape()).expect("reshape preserves size"))
            }
            _ => unreachable!("parameter slots follow layer kinds"),
        };
        carry = dx;
    }
    Ok(Backprop {
        params: grads,
        input: if need_input { carry } else { None },
    })
}

fn split_pair<T>(tensors: &mut [Tensor<T>], s: usize) -> (&mut [T], &mut [T])
where
    T: Real,
{
    let (a, b) = tensors[s..].split_at_mut(1);
    (a[0].data_mut(), b[0].data_mut())
}

/// Adjoint pass seeded at arbitrary layer outputs (`(layer index, dL/d output)`).
/// Seeds at several layers are summed where their paths meet.
pub fn backward<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    seeds: &[(usize, &Tensor<T>)],
    need_input: bool,
) -> Result<Backprop<T>> {
    adjoint(net, trace, LayerInputs::Primal(trace), seeds, true, need_input)
}

/// Adjoint pass seeded at the final output only.
pub fn backward_output<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    dout: &Tensor<T>,
    need_input: bool,
) -> Result<Backprop<T>> {
    let last = trace.outputs.len() - 1;
    backward(net, trace, &[(last, dout)], need_input)
}

/// Reduction of a network output to one scalar per sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    /// Sum of all outputs of a sample.
    Sum,
    /// A single output unit.
    Unit(usize),
    /// Log-softmax probability of the given class, one class per sample.
    LogSoftmax(Vec<usize>),
}

impl Selector {
    /// Per-sample values and `d value / d output`.
    pub fn apply<T: Real>(&self, out: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let n = out.batch();
        let width = out.sample_len();
        let mut dout = Tensor::zeros(out.shape());
        let mut values = Vec::with_capacity(n);
        match self {
            Selector::Sum => {
                dout.data_mut().iter_mut().for_each(|v| *v = T::one());
                values.extend((0..n).map(|i| out.sample(i).iter().copied().sum::<T>()));
            }
            Selector::Unit(k) => {
                if *k >= width {
                    return Err(Error::Range(format!("output unit {k} of {width}")));
                }
                for i in 0..n {
                    values.push(out.sample(i)[*k]);
                    dout.sample_mut(i)[*k] = T::one();
                }
            }
            Selector::LogSoftmax(classes) => {
                if classes.len() != n {
                    return Err(Error::Shape(format!("{} classes for {n} samples", classes.len())));
                }
                let flat = out.clone().reshaped(&[n, width])?;
                let logp = crate::netspec::log_softmax(&flat);
                for (i, &c) in classes.iter().enumerate() {
                    if c >= width {
                        return Err(Error::Range(format!("class {c} of {width}")));
                    }
                    values.push(logp.sample(i)[c]);
                    // d log p_c / d logit_j = 1[j = c] − p_j
                    for (j, (d, &lp)) in dout.sample_mut(i).iter_mut().zip(logp.sample(i)).enumerate() {
                        *d = if j == c { T::one() } else { T::zero() } - lp.exp();
                    }
                }
            }
        }
        Ok((values, dout))
    }
}

/// Per-sample `∇_input selector(net(input))`, with the selected values.
pub fn grad_input<T: Real>(net: &Network<T>, input: &Tensor<T>, selector: &Selector) -> Result<(Vec<T>, Tensor<T>)> {
    let trace = net.trace(input)?;
    let (values, dout) = selector.apply(trace.output())?;
    let bp = backward_output(net, &trace, &dout, true)?;
    let g = bp.input.expect("input gradient requested");
    if !g.all_finite() {
        return Err(Error::Numeric(format!("non-finite input gradient through {}", net.spec().name)));
    }
    Ok((values, g))
}

/// Tangents flowing through the linearized network.
#[derive(Clone, Debug)]
pub struct TangentTrace<T = f32> {
    /// Tangent entering each layer.
    pub inputs: Vec<Tensor<T>>,
    pub output: Tensor<T>,
}

/// Jacobian-vector product `J_u net(u) · t` at the point recorded in `trace`.
pub fn jvp<T: Real>(net: &Network<T>, trace: &Trace<T>, tangent: &Tensor<T>) -> Result<TangentTrace<T>> {
    if tangent.shape() != trace.input.shape() {
        return Err(Error::Shape(format!(
            "tangent {:?} vs input {:?}",
            tangent.shape(),
            trace.input.shape()
        )));
    }
    let mut inputs = Vec::with_capacity(trace.outputs.len());
    let mut t = tangent.clone();
    for (i, layer) in net.spec().layers.iter().enumerate().take(trace.outputs.len()) {
        let w = net.slot(i).map(|s| net.params()[s].data());
        let mut next = match (&layer.kind, w) {
            (LayerKind::Conv { out_channels, kernel, .. }, Some(w)) => {
                kernels::conv_forward(&t, w, None, *out_channels, *kernel)
            }
            (LayerKind::Deconv { out_channels, kernel, .. }, Some(w)) => {
                kernels::deconv_forward(&t, w, None, *out_channels, *kernel)
            }
            (LayerKind::FullyConnected { out_features, .. }, Some(w)) => {
                kernels::linear_forward(&t, w, None, *out_features)
            }
            (LayerKind::MaxPool, None) => kernels::pool_gather(
                &t,
                trace.outputs[i].shape(),
                trace.argmax[i].as_ref().expect("pool layers record argmax"),
            ),
            (LayerKind::Reshape { .. }, None) => t.clone().reshaped(trace.outputs[i].shape())?,
            _ => unreachable!("parameter slots follow layer kinds"),
        };
        if layer.activation == Activation::Relu {
            for (tv, &y) in next.data_mut().iter_mut().zip(trace.outputs[i].data()) {
                if y <= T::zero() {
                    *tv = T::zero();
                }
            }
        }
        inputs.push(std::mem::replace(&mut t, next));
    }
    Ok(TangentTrace { inputs, output: t })
}

/// `∇_θ ⟨dout, J_u net · t⟩` for a tangent pass recorded by [`jvp`].
pub fn tangent_param_grads<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    tangent: &TangentTrace<T>,
    dout: &Tensor<T>,
) -> Result<GradientSet<T>> {
    let last = trace.outputs.len() - 1;
    Ok(adjoint(net, trace, LayerInputs::Tangent(tangent), &[(last, dout)], false, false)?.params)
}

/// Gradient penalty `coeff · mean_n (‖∇_u D(u_n)‖₂ − 1)²` together with its
/// exact parameter gradient.
#[derive(Clone, Debug)]
pub struct PenaltyGrad<T = f32> {
    pub value: T,
    pub grad_norms: Vec<T>,
    pub params: GradientSet<T>,
}

pub fn gradient_penalty_grads<T: Real>(critic: &Network<T>, points: &Tensor<T>, coeff: T) -> Result<PenaltyGrad<T>> {
    let trace = critic.trace(points)?;
    let out = trace.output();
    if out.sample_len() != 1 {
        return Err(Error::Shape(format!(
            "gradient penalty needs a scalar critic, {} outputs {:?}",
            critic.spec().name,
            out.shape()
        )));
    }
    let n = out.batch();
    let ones = Tensor::full(out.shape(), T::one());
    let g = backward_output(critic, &trace, &ones, true)?
        .input
        .expect("input gradient requested");
    let nt = T::lit(n as f64);
    let mut value = T::zero();
    let mut norms = Vec::with_capacity(n);
    let mut v = Tensor::zeros(g.shape());
    for i in 0..n {
        let norm = g.sample(i).iter().map(|&x| x * x).sum::<T>().sqrt();
        let dev = norm - T::one();
        value += dev * dev;
        norms.push(norm);
        if norm > T::zero() {
            // d/dg of coeff/n · (‖g‖ − 1)² = coeff/n · 2(‖g‖ − 1) g/‖g‖
            let s = coeff * T::lit(2.0) * dev / (norm * nt);
            for (vd, &gd) in v.sample_mut(i).iter_mut().zip(g.sample(i)) {
                *vd = s * gd;
            }
        }
    }
    let value = coeff * value / nt;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite gradient penalty".into()));
    }
    let params = if coeff == T::zero() {
        GradientSet::zeros_for(critic)
    } else {
        let tangent = jvp(critic, &trace, &v)?;
        tangent_param_grads(critic, &trace, &tangent, &ones)?
    };
    Ok(PenaltyGrad {
        value,
        grad_norms: norms,
        params,
    })
}
