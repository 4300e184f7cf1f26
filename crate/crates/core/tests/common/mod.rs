#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppgn::diffengine::GradientSet;
use ppgn::mnist_io::{Images, NormalizationSpec, PreparedData, RawDataset, SIDE};
use ppgn::netspec::{ArchitectureSpec, LayerSpec, Network, Trace};
use ppgn::Tensor;

/// Class-dependent stripes plus noise: class `k` lights up rows `2k..2k+4`.
pub fn synthetic_raw(n: usize, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..10u8);
        labels.push(k);
        for y in 0..SIDE {
            let on = (2 * k as usize..2 * k as usize + 4).contains(&y);
            for _ in 0..SIDE {
                let base: u8 = if on { 200 } else { 10 };
                pixels.push(base.saturating_add(rng.random_range(0..40)));
            }
        }
    }
    RawDataset::new(
        Images {
            count: n,
            rows: SIDE,
            cols: SIDE,
            pixels,
        },
        labels,
    )
    .unwrap()
}

pub fn synthetic_data(n: usize, seed: u64) -> PreparedData {
    PreparedData::new(&synthetic_raw(n, seed), &NormalizationSpec::default()).unwrap()
}

pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// f64 network with uniform random weights and biases (biases nonzero so the
/// bias paths are exercised).
pub fn random_net(spec: ArchitectureSpec, seed: u64) -> Network<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .param_shapes()
        .iter()
        .map(|(_, shape)| {
            let n: usize = shape.iter().product();
            let fan = if shape.len() > 1 { shape[1..].iter().product::<usize>() } else { 4 };
            let s = 1.5 / (fan as f64).sqrt();
            Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-s..s)).collect()).unwrap()
        })
        .collect();
    Network::from_params(spec, params, seed).unwrap()
}

/// Relative error with an absolute floor so near-zero gradients are not
/// judged on noise alone.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-3;

/// Up to `k` distinct coordinates of a length-`n` vector, seeded.
pub fn sample_coords(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, k).into_vec()
}

pub fn conv_net() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "conv",
        &[1, 6, 6],
        vec![
            LayerSpec::conv("c1", 1, 3, 3),
            LayerSpec::pool("p1"),
            LayerSpec::fc("out", 12, 2).linear_output(),
        ],
    )
    .unwrap()
}

pub fn deconv_net() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "deconv",
        &[4],
        vec![
            LayerSpec::fc("fc", 4, 8),
            LayerSpec::reshape("r", &[2, 2, 2]),
            LayerSpec::deconv("d1", 2, 3, 3),
            LayerSpec::deconv("d2", 3, 1, 2).linear_output(),
        ],
    )
    .unwrap()
}

/// Encoder-shaped: convs, pools, fc1 tap, fc2 logits.
pub fn mini_encoder() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "mini-encoder",
        &[1, 8, 8],
        vec![
            LayerSpec::conv("conv1", 1, 4, 3),
            LayerSpec::conv("conv2", 4, 4, 3),
            LayerSpec::pool("pool2"),
            LayerSpec::conv("conv3", 4, 6, 2),
            LayerSpec::fc("fc1", 6, 5),
            LayerSpec::fc("fc2", 5, 3).linear_output(),
        ],
    )
    .unwrap()
    .with_taps(&["fc1", "fc2"])
    .unwrap()
}

pub fn mini_generator() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "mini-generator",
        &[5],
        vec![
            LayerSpec::fc("gen-fc1", 5, 8),
            LayerSpec::reshape("r", &[2, 2, 2]),
            LayerSpec::deconv("deconv2", 2, 3, 3),
            LayerSpec::deconv("deconv3", 3, 1, 5).linear_output(),
        ],
    )
    .unwrap()
}

pub fn mini_critic_x() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "mini-critic-x",
        &[1, 8, 8],
        vec![
            LayerSpec::conv("conv1", 1, 3, 3),
            LayerSpec::pool("pool1"),
            LayerSpec::conv("conv2", 3, 4, 2),
            LayerSpec::pool("pool2"),
            LayerSpec::fc("disc-fc1", 4, 1).linear_output(),
        ],
    )
    .unwrap()
}

pub fn mini_critic_code() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "mini-critic-code",
        &[16],
        vec![
            LayerSpec::reshape("r", &[1, 4, 4]),
            LayerSpec::conv("conv1", 1, 4, 2),
            LayerSpec::conv("conv2", 4, 4, 2),
            LayerSpec::pool("pool2"),
            LayerSpec::fc("disc-fc1", 4, 1).linear_output(),
        ],
    )
    .unwrap()
}

pub fn all_specs() -> Vec<ArchitectureSpec> {
    vec![conv_net(), deconv_net(), mini_encoder(), mini_generator(), mini_critic_x(), mini_critic_code()]
}

pub fn input_shape(spec: &ArchitectureSpec, batch: usize) -> Vec<usize> {
    let mut s = vec![batch];
    s.extend(&spec.input_shape);
    s
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// A loss value with the activation pattern of every network it evaluated.
pub type Probe = (f64, Vec<u32>);

pub fn probe(net: &Network<f64>, x: &Tensor<f64>, f: impl FnOnce(&Trace<f64>) -> f64) -> Probe {
    let t = net.trace(x).unwrap();
    (f(&t), net.activation_pattern(&t))
}

/// Tallies coordinates checked and coordinates skipped because the ±step
/// probe crosses a ReLU or pooling switch, where the loss is not smooth
/// and central differences say nothing about the derivative.
#[derive(Default)]
struct Tally {
    checked: usize,
    kinks: usize,
}

impl Tally {
    /// Returns whether the probe stayed in one linear region.
    fn smooth(&mut self, base: &[u32], up: &[u32], down: &[u32]) -> bool {
        let ok = base == up && base == down;
        if ok {
            self.checked += 1;
        } else {
            self.kinks += 1;
        }
        ok
    }

    fn finish(&self, what: &str) {
        let total = self.checked + self.kinks;
        eprintln!("{what}: {} coordinates checked, {} skipped at kinks", self.checked, self.kinks);
        assert!(
            self.kinks * 4 <= total,
            "{what}: {} of {total} probes crossed a kink; pick a smoother configuration",
            self.kinks
        );
    }
}

/// Check `grads` (one tensor per parameter) against central differences of `loss`.
pub fn check_params(net: &Network<f64>, grads: &GradientSet<f64>, per_tensor: usize, seed: u64, mut loss: impl FnMut(&Network<f64>) -> Probe) {
    assert!(net.spec().param_count() <= 1000, "{} has too many parameters", net.spec().name);
    let names = net.param_names();
    let mut probe = net.clone();
    let base = loss(&probe).1;
    let mut tally = Tally::default();
    for (t, g) in grads.tensors.iter().enumerate() {
        for j in sample_coords(g.len(), per_tensor, seed + t as u64) {
            let orig = probe.params()[t].data()[j];
            probe.params_mut()[t].data_mut()[j] = orig + FD_STEP;
            let up = loss(&probe);
            probe.params_mut()[t].data_mut()[j] = orig - FD_STEP;
            let down = loss(&probe);
            probe.params_mut()[t].data_mut()[j] = orig;
            if !tally.smooth(&base, &up.1, &down.1) {
                continue;
            }
            let numeric = (up.0 - down.0) / (2.0 * FD_STEP);
            let analytic = g.data()[j];
            let e = rel_err(analytic, numeric);
            assert!(e < FD_TOL, "{} {}[{j}]: analytic {analytic} numeric {numeric} rel {e}", net.spec().name, names[t]);
        }
    }
    tally.finish(&net.spec().name);
}

pub fn check_input(name: &str, x: &Tensor<f64>, grad: &Tensor<f64>, count: usize, seed: u64, mut f: impl FnMut(&Tensor<f64>) -> Probe) {
    let base = f(x).1;
    let mut tally = Tally::default();
    for i in sample_coords(x.len(), count, seed) {
        let mut p = x.clone();
        p.data_mut()[i] = x.data()[i] + FD_STEP;
        let up = f(&p);
        p.data_mut()[i] = x.data()[i] - FD_STEP;
        let down = f(&p);
        if !tally.smooth(&base, &up.1, &down.1) {
            continue;
        }
        let numeric = (up.0 - down.0) / (2.0 * FD_STEP);
        let analytic = grad.data()[i];
        let e = rel_err(analytic, numeric);
        assert!(e < FD_TOL, "{name} input[{i}]: analytic {analytic} numeric {numeric} rel {e}");
    }
    tally.finish(name);
}
