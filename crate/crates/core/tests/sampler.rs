mod common;

use common::*;
use ppgn::mnist_io::NormalizationSpec;
use ppgn::netspec::{build_spec, ArchitectureSpec, LayerSpec, Network, Role};
use ppgn::sampler::{
    apply_drift, build_grid, class_log_gradient, drift, mala_step, reconstruct_code, sample_chains, ChainState, Drift,
    InitMode, SamplerNets, SamplerParams, CODE_DIM,
};
use ppgn::diffengine::Selector;
use ppgn::Tensor;

/// Small stand-ins with the sampler's interface: a 64-dim code, an fc1 tap
/// and ten logits.
fn small_pair() -> (Network, Network) {
    let enc = ArchitectureSpec::new(
        "small-encoder",
        &[1, 8, 8],
        vec![
            LayerSpec::conv("conv1", 1, 4, 3),
            LayerSpec::pool("pool1"),
            LayerSpec::conv("conv2", 4, 8, 3),
            LayerSpec::fc("fc1", 8, CODE_DIM),
            LayerSpec::fc("fc2", CODE_DIM, 10).linear_output(),
        ],
    )
    .unwrap();
    let gen = ArchitectureSpec::new(
        "small-generator",
        &[CODE_DIM],
        vec![
            LayerSpec::fc("gen-fc1", CODE_DIM, 16),
            LayerSpec::reshape("r", &[1, 4, 4]),
            LayerSpec::deconv("deconv2", 1, 1, 5).linear_output(),
        ],
    )
    .unwrap();
    (random_net(enc, 1).cast(), random_net(gen, 2).cast())
}

fn codes(batch: usize, seed: u64) -> Tensor {
    random_tensor(&[batch, CODE_DIM], seed, 1.0).cast()
}

fn eps(e1: f64, e2: f64, e3: f64) -> SamplerParams {
    SamplerParams {
        eps1: e1,
        eps2: e2,
        eps3: e3,
        steps: 1,
        seed: 9,
        init: InitMode::Zeros,
    }
}

fn step_from(h: &Tensor, classes: &[usize], p: &SamplerParams, nets: SamplerNets<'_>) -> Tensor {
    let seeds: Vec<u64> = (0..classes.len() as u64).collect();
    let mut state = ChainState::new(h.clone(), classes.to_vec(), &seeds, false).unwrap();
    mala_step(&mut state, p, nets).unwrap();
    state.h
}

fn displacement(h: &Tensor, classes: &[usize], p: &SamplerParams, nets: SamplerNets<'_>) -> Vec<f64> {
    step_from(h, classes, p, nets)
        .data()
        .iter()
        .zip(h.data())
        .map(|(a, b)| f64::from(*a) - f64::from(*b))
        .collect()
}

#[test]
fn displacement_is_linear_in_the_step_sizes() {
    let (e, g) = small_pair();
    let nets = SamplerNets {
        encoder: &e,
        generator: &g,
    };
    let h = codes(3, 5);
    let classes = [1, 4, 7];
    let d1 = displacement(&h, &classes, &eps(1.0, 0.0, 0.0), nets);
    let d2 = displacement(&h, &classes, &eps(0.0, 1.0, 0.0), nets);
    for (a, b) in [(0.01, 1.0), (0.3, 0.2), (1e-2, 0.5)] {
        let d = displacement(&h, &classes, &eps(a, b, 0.0), nets);
        for ((x, y), z) in d.iter().zip(&d1).zip(&d2) {
            assert!((x - (a * y + b * z)).abs() < 1e-5, "ε = ({a}, {b}): {x} vs {}", a * y + b * z);
        }
    }
}

#[test]
fn noise_has_the_requested_moments() {
    const DRAWS: usize = 100_000;
    let zero = Tensor::zeros(&[1, CODE_DIM]);
    let d = Drift {
        reconstruction: zero.clone(),
        class_gradient: zero.clone(),
        class_probability: vec![0.0],
    };
    let p = eps(0.0, 0.0, 1.0);
    let mut state = ChainState::new(zero.clone(), vec![0], &[12345], false).unwrap();
    let mut sum = vec![0.0f64; CODE_DIM];
    let mut sq = vec![0.0f64; CODE_DIM];
    for _ in 0..DRAWS {
        state.h = zero.clone();
        apply_drift(&mut state, &d, &p).unwrap();
        for (k, &v) in state.h.data().iter().enumerate() {
            sum[k] += f64::from(v);
            sq[k] += f64::from(v) * f64::from(v);
        }
    }
    for k in 0..CODE_DIM {
        let mean = sum[k] / DRAWS as f64;
        let var = sq[k] / DRAWS as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "dim {k}: mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "dim {k}: variance {var}");
    }
}

#[test]
fn reconstruction_fixed_point_with_real_networks() {
    // Drift evaluated once at h, then the update applied with R_h(h) := h.
    let (e, g) = small_pair();
    let nets = SamplerNets {
        encoder: &e,
        generator: &g,
    };
    let h = codes(2, 3);
    let mut d = drift(&h, &[0, 9], nets).unwrap();
    d.reconstruction = h.clone();
    let mut state = ChainState::new(h.clone(), vec![0, 9], &[1, 2], false).unwrap();
    for _ in 0..10 {
        apply_drift(&mut state, &d, &eps(0.7, 0.0, 0.0)).unwrap();
    }
    assert_eq!(state.h, h);
    assert_eq!(state.step, 10);
}

#[test]
fn chains_are_deterministic_with_noise() {
    let (e, g) = small_pair();
    let nets = SamplerNets {
        encoder: &e,
        generator: &g,
    };
    let p = SamplerParams {
        steps: 5,
        ..eps(0.05, 0.5, 0.3)
    };
    let norm = NormalizationSpec::default();
    let run = |seeds: &[u64]| sample_chains(&[3, 3], seeds, &p, nets, None, &norm, true).unwrap();
    let (a, b) = (run(&[4, 5]), run(&[4, 5]));
    assert_eq!(a.images, b.images);
    assert_eq!(a.codes, b.codes);
    assert_eq!(a.trace, b.trace);
    assert_ne!(run(&[4, 6]).codes, a.codes);
    assert_eq!(a.trace.unwrap().len(), 5);
}

#[test]
fn one_step_is_one_update() {
    let (e, g) = small_pair();
    let nets = SamplerNets {
        encoder: &e,
        generator: &g,
    };
    let out = sample_chains(&[2], &[0], &eps(0.01, 1.0, 0.0), nets, None, &NormalizationSpec::default(), true).unwrap();
    assert_eq!(out.trace.unwrap().len(), 1);
    let expected = step_from(&Tensor::zeros(&[1, CODE_DIM]), &[2], &eps(0.01, 1.0, 0.0), nets);
    assert_eq!(out.codes, expected);
}

#[test]
fn reconstruction_is_nonnegative_and_repeatable() {
    let (e, g) = small_pair();
    let nets = SamplerNets {
        encoder: &e,
        generator: &g,
    };
    let h = codes(4, 8);
    let r = reconstruct_code(&h, nets).unwrap();
    assert!(r.data().iter().all(|&v| v >= 0.0));
    assert_eq!(r, reconstruct_code(&h, nets).unwrap());
}

#[test]
fn class_log_gradient_matches_finite_differences() {
    let (e, g) = small_pair();
    let nets = SamplerNets {
        encoder: &e,
        generator: &g,
    };
    let (e64, g64) = (e.cast::<f64>(), g.cast::<f64>());
    let h = codes(1, 13);
    for class in [0, 6] {
        let grad = class_log_gradient(&h, class, nets).unwrap().cast::<f64>();
        check_input(&format!("class {class}"), &h.cast(), &grad, CODE_DIM, 14 + class as u64, |h| {
            let gt = g64.trace(h).unwrap();
            let et = e64.trace(gt.output()).unwrap();
            let value = Selector::LogSoftmax(vec![class]).apply(et.output()).unwrap().0[0];
            let mut pattern = g64.activation_pattern(&gt);
            pattern.extend(e64.activation_pattern(&et));
            (value, pattern)
        });
    }
    let g0 = class_log_gradient(&h, 0, nets).unwrap();
    assert_ne!(g0, class_log_gradient(&h, 6, nets).unwrap());
}

#[test]
fn canonical_grid_layout_and_seeds() {
    let e = Network::init(build_spec(Role::Encoder), 1);
    let g = Network::init(build_spec(Role::Generator), 2);
    let nets = SamplerNets {
        encoder: &e,
        generator: &g,
    };
    let p = SamplerParams {
        steps: 1,
        seed: 100,
        init: InitMode::Zeros,
        ..SamplerParams::default()
    };
    let grid = build_grid(1, &p, nets, None, &NormalizationSpec::default(), true).unwrap();
    assert_eq!((grid.width(), grid.height()), (28, 280));
    assert_eq!(grid.pixels.len(), 28 * 280);
    let seeds: Vec<u64> = grid.cells.iter().map(|c| c.2).collect();
    assert_eq!(seeds, (100..110).collect::<Vec<_>>());
    assert!(grid.cells.iter().enumerate().all(|(r, c)| c.0 == r && c.1 == 0));
    let trace = grid.trace.as_ref().unwrap();
    assert_eq!((trace.len(), trace[0].len()), (1, 10));
    let manifest = ppgn::artifacts::grid_manifest(&grid, &p, &[]);
    assert!(manifest.contains("cell = class 3 column 0 seed 103 offset 3"));
}
