//! MALA-approx sampling in the encoder's fc1 code space.
//!
//! Each step moves the code toward its reconstruction `R_h(h) = E_fc1(G(h))`,
//! up the class log-probability of the classifier applied to `G(h)`, and adds
//! Gaussian noise:
//!
//! ```text
//! h ← h + ε₁·(R_h(h) − h) + ε₂·∂log C_c(G(h))/∂h + N(0, ε₃²)
//! ```
//!
//! There is no accept/reject step. Codes are not clipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffengine::{self, Selector};
use crate::error::{Error, Result};
use crate::mnist_io::{NormalizationSpec, PreparedData, NUM_CLASSES, SIDE};
use crate::netspec::{softmax, Network};
use crate::tensor::Tensor;

pub const CODE_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// fc1 code of a randomly chosen held-out image.
    EncodeRandomImage,
    Zeros,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::EncodeRandomImage => "encode-random-image",
            InitMode::Zeros => "zeros",
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encode-random-image" => Ok(InitMode::EncodeRandomImage),
            "zeros" => Ok(InitMode::Zeros),
            _ => Err(Error::Config(format!("unknown init mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerParams {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub steps: usize,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            eps1: 1e-2,
            eps2: 1.0,
            eps3: 1e-15,
            steps: 200,
            seed: 0,
            init: InitMode::EncodeRandomImage,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler steps must be ≥ 1".into()));
        }
        if !(self.eps3 >= 0.0) || ![self.eps1, self.eps2, self.eps3].iter().all(|e| e.is_finite()) {
            return Err(Error::Config(format!(
                "sampler ε = ({}, {}, {}) must be finite with ε₃ ≥ 0",
                self.eps1, self.eps2, self.eps3
            )));
        }
        Ok(())
    }
}

/// The pretrained encoder (whose softmaxed fc2 is the classifier) and a
/// trained generator.
#[derive(Clone, Copy, Debug)]
pub struct SamplerNets<'a> {
    pub encoder: &'a Network,
    pub generator: &'a Network,
}

/// `R_h(h) = E_fc1(G(h))` for a `[batch, 64]` code tensor.
pub fn reconstruct_code(h: &Tensor, nets: SamplerNets<'_>) -> Result<Tensor> {
    let x = nets.generator.output(h)?;
    nets.encoder.forward_to(&x, "fc1")
}

/// Drift terms of one MALA-approx step, evaluated at a batch of codes.
#[derive(Clone, Debug)]
pub struct Drift {
    /// `R_h(h)`
    pub reconstruction: Tensor,
    /// `∂ log C_c(G(h)) / ∂h`, one target class per row.
    pub class_gradient: Tensor,
    /// `C_c(G(h))`, probability of the target class.
    pub class_probability: Vec<f64>,
}

pub fn drift(h: &Tensor, classes: &[usize], nets: SamplerNets<'_>) -> Result<Drift> {
    if h.shape().get(1) != Some(&CODE_DIM) || h.shape().len() != 2 {
        return Err(Error::Shape(format!("codes must be [batch, {CODE_DIM}], got {:?}", h.shape())));
    }
    if let Some(bad) = classes.iter().find(|&&c| c >= NUM_CLASSES) {
        return Err(Error::Range(format!("class {bad}")));
    }
    let g_trace = nets.generator.trace(h)?;
    let e_trace = nets.encoder.trace(g_trace.output())?;
    let fc1 = nets.encoder.spec().layer_index("fc1")?;
    let logits = e_trace.output();
    let (log_probs, d_logits) = Selector::LogSoftmax(classes.to_vec()).apply(logits)?;
    let d_image = diffengine::backward_output(nets.encoder, &e_trace, &d_logits, true)?
        .input
        .expect("input gradient requested");
    let class_gradient = diffengine::backward_output(nets.generator, &g_trace, &d_image, true)?
        .input
        .expect("input gradient requested");
    Ok(Drift {
        reconstruction: e_trace.outputs[fc1].clone(),
        class_gradient,
        class_probability: log_probs.iter().map(|&l| f64::from(l).exp()).collect(),
    })
}

/// `∂ log C_c(G(h)) / ∂h`
pub fn class_log_gradient(h: &Tensor, class: usize, nets: SamplerNets<'_>) -> Result<Tensor> {
    Ok(drift(h, &vec![class; h.batch()], nets)?.class_gradient)
}

/// A batch of independent chains, each with its own class and noise stream.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub h: Tensor,
    pub step: usize,
    pub classes: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    /// Per step, the target-class probability of every chain (before the step).
    pub trace: Option<Vec<Vec<f64>>>,
}

impl ChainState {
    pub fn new(h: Tensor, classes: Vec<usize>, seeds: &[u64], keep_trace: bool) -> Result<Self> {
        if h.batch() != classes.len() || classes.len() != seeds.len() {
            return Err(Error::Shape(format!(
                "{} codes, {} classes, {} seeds",
                h.batch(),
                classes.len(),
                seeds.len()
            )));
        }
        Ok(Self {
            h,
            step: 0,
            classes,
            rngs: seeds.iter().map(|&s| noise_rng(s)).collect(),
            trace: keep_trace.then(Vec::new),
        })
    }
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// One MALA-approx update of every chain in `state`. Returns the drift that
/// was applied.
pub fn mala_step(state: &mut ChainState, p: &SamplerParams, nets: SamplerNets<'_>) -> Result<Drift> {
    let d = drift(&state.h, &state.classes, nets)?;
    apply_drift(state, &d, p)?;
    Ok(d)
}

/// The update itself, given already-evaluated drift terms.
pub fn apply_drift(state: &mut ChainState, d: &Drift, p: &SamplerParams) -> Result<()> {
    if d.reconstruction.shape() != state.h.shape() || d.class_gradient.shape() != state.h.shape() {
        return Err(Error::Shape("drift terms must match the code batch".into()));
    }
    let (e1, e2, e3) = (p.eps1 as f32, p.eps2 as f32, p.eps3);
    for i in 0..state.h.batch() {
        let rng = &mut state.rngs[i];
        let it = state
            .h
            .sample_mut(i)
            .iter_mut()
            .zip(d.reconstruction.sample(i))
            .zip(d.class_gradient.sample(i));
        for ((h, &r), &g) in it {
            let z: f64 = rng.sample(StandardNormal);
            *h += e1 * (r - *h) + e2 * g + (e3 * z) as f32;
        }
    }
    if !state.h.all_finite() {
        return Err(Error::Numeric(format!("code became non-finite at step {}", state.step)));
    }
    if let Some(t) = state.trace.as_mut() {
        t.push(d.class_probability.clone());
    }
    state.step += 1;
    Ok(())
}

/// Starting codes for chains with the given seeds.
pub fn initial_codes(seeds: &[u64], p: &SamplerParams, nets: SamplerNets<'_>, held_out: Option<&PreparedData>) -> Result<Tensor> {
    match p.init {
        InitMode::Zeros => Ok(Tensor::zeros(&[seeds.len(), CODE_DIM])),
        InitMode::EncodeRandomImage => {
            let data = held_out
                .filter(|d| !d.is_empty())
                .ok_or_else(|| Error::Config("encode-random-image init needs held-out images".into()))?;
            let idx: Vec<usize> = seeds
                .iter()
                .map(|&s| ChaCha8Rng::seed_from_u64(s).random_range(0..data.len()))
                .collect();
            let (x, _) = data.batch(&idx);
            nets.encoder.forward_to(&x, "fc1")
        }
    }
}

/// Final images of a batch of chains, plus the optional probability trace.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    /// One 28×28 byte image per chain.
    pub images: Vec<Vec<u8>>,
    pub codes: Tensor,
    pub trace: Option<Vec<Vec<f64>>>,
}

pub fn sample_chains(
    classes: &[usize],
    seeds: &[u64],
    p: &SamplerParams,
    nets: SamplerNets<'_>,
    held_out: Option<&PreparedData>,
    norm: &NormalizationSpec,
    keep_trace: bool,
) -> Result<ChainOutput> {
    p.validate()?;
    let h0 = initial_codes(seeds, p, nets, held_out)?;
    let mut state = ChainState::new(h0, classes.to_vec(), seeds, keep_trace)?;
    for _ in 0..p.steps {
        mala_step(&mut state, p, nets)?;
    }
    let x = nets.generator.output(&state.h)?;
    let images = (0..x.batch())
        .map(|i| x.sample(i).iter().map(|&v| norm.to_pixel(f64::from(v))).collect())
        .collect();
    Ok(ChainOutput {
        images,
        codes: state.h,
        trace: state.trace,
    })
}

/// A single class-conditional chain.
pub fn sample_chain(
    class: usize,
    p: &SamplerParams,
    nets: SamplerNets<'_>,
    held_out: Option<&PreparedData>,
    norm: &NormalizationSpec,
    keep_trace: bool,
) -> Result<ChainOutput> {
    sample_chains(&[class], &[p.seed], p, nets, held_out, norm, keep_trace)
}

/// `10 × n` sample grid: row `r` holds `n` chains conditioned on class `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `(rows·28) × (cols·28)` pixels.
    pub pixels: Vec<u8>,
    /// `(class, column, seed)` of every cell.
    pub cells: Vec<(usize, usize, u64)>,
    /// Per-cell final images, in `cells` order.
    pub images: Vec<Vec<u8>>,
    /// `trace[step][cell]`: target-class probability before each update.
    pub trace: Option<Vec<Vec<f64>>>,
}

impl Grid {
    pub fn width(&self) -> usize {
        self.cols * SIDE
    }

    pub fn height(&self) -> usize {
        self.rows * SIDE
    }

    fn assemble(rows: usize, cols: usize, cells: Vec<(usize, usize, u64)>, images: Vec<Vec<u8>>) -> Self {
        let width = cols * SIDE;
        let mut pixels = vec![0u8; rows * SIDE * width];
        for (&(r, c, _), img) in cells.iter().zip(&images) {
            for y in 0..SIDE {
                let dst = (r * SIDE + y) * width + c * SIDE;
                pixels[dst..dst + SIDE].copy_from_slice(&img[y * SIDE..(y + 1) * SIDE]);
            }
        }
        Self {
            rows,
            cols,
            pixels,
            cells,
            images,
            trace: None,
        }
    }
}

/// Chain seed of grid cell `(class, column)`: `p.seed` plus the cell's
/// row-major offset.
pub fn cell_seed(p: &SamplerParams, class: usize, column: usize, per_class: usize) -> u64 {
    p.seed.wrapping_add((class * per_class + column) as u64)
}

pub fn build_grid(
    per_class: usize,
    p: &SamplerParams,
    nets: SamplerNets<'_>,
    held_out: Option<&PreparedData>,
    norm: &NormalizationSpec,
    keep_trace: bool,
) -> Result<Grid> {
    if per_class == 0 {
        return Err(Error::Config("grid needs at least one sample per class".into()));
    }
    let cells: Vec<(usize, usize, u64)> = (0..NUM_CLASSES)
        .flat_map(|r| (0..per_class).map(move |c| (r, c)))
        .map(|(r, c)| (r, c, cell_seed(p, r, c, per_class)))
        .collect();
    let mut images = Vec::with_capacity(cells.len());
    let mut trace: Option<Vec<Vec<f64>>> = keep_trace.then(|| vec![Vec::with_capacity(cells.len()); p.steps]);
    // Chains are independent; run them a row at a time to bound memory.
    for row in cells.chunks(per_class) {
        let classes: Vec<usize> = row.iter().map(|c| c.0).collect();
        let seeds: Vec<u64> = row.iter().map(|c| c.2).collect();
        let out = sample_chains(&classes, &seeds, p, nets, held_out, norm, keep_trace)?;
        images.extend(out.images);
        if let (Some(all), Some(rows)) = (trace.as_mut(), out.trace) {
            for (step, probs) in all.iter_mut().zip(rows) {
                step.extend(probs);
            }
        }
    }
    let mut grid = Grid::assemble(NUM_CLASSES, per_class, cells, images);
    grid.trace = trace;
    Ok(grid)
}

/// Class the encoder's classifier assigns to each byte image.
pub fn classify_images(encoder: &Network, images: &[Vec<u8>], norm: &NormalizationSpec) -> Result<Vec<usize>> {
    let data: Vec<f32> = images
        .iter()
        .flat_map(|img| img.iter().map(|&p| norm.normalize_value(f64::from(p)) as f32))
        .collect();
    let x = Tensor::from_vec(&[images.len(), 1, SIDE, SIDE], data)?;
    let probs = softmax(&encoder.output(&x)?);
    Ok((0..images.len())
        .map(|i| {
            let row = probs.sample(i);
            (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
        })
        .collect())
}

/// Fraction of grid cells the classifier assigns to their conditioning class.
pub fn grid_agreement(encoder: &Network, grid: &Grid, norm: &NormalizationSpec) -> Result<f64> {
    let predicted = classify_images(encoder, &grid.images, norm)?;
    let hits = predicted
        .iter()
        .zip(&grid.cells)
        .filter(|(p, c)| **p == c.0)
        .count();
    Ok(hits as f64 / grid.cells.len().max(1) as f64)
}
