//! Encoder pretraining and adversarial training of the six variants.
//!
//! One G-iteration runs [`Schedule::critic_steps`] updates of every critic
//! chosen for that iteration, then a single generator update. Critic and
//! generator updates each draw from their own seeded batch stream. The run
//! length in G-iterations is derived from the epoch budget through the critic
//! schedule (the critic stream is what walks the dataset), so all variants
//! train for the same number of generator updates.

mod optim;
mod pretrain;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffengine::{self, GradientSet};
use crate::error::{Error, Result};
use crate::losses::{self, Critic, CriticScores, LossForm, LossWeights};
use crate::mnist_io::{BatchCursor, BatchStream, PreparedData};
use crate::netspec::{build_spec, Network, Role};
use crate::tensor::Tensor;

pub use optim::{adam_update, sgd_update, AdamConfig, Optimizer, SgdConfig};
pub use pretrain::{evaluate_accuracy, pretrain_encoder, PretrainConfig, PretrainOutcome};

/// The experiment variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// Image critic only, full generator loss.
    Vanilla,
    /// fc1 critic only, generator trained on the adversarial term alone.
    Fc1GanOnly,
    /// fc1 critic only, full generator loss.
    Fc1Full,
    /// No critic; generator trained on image and code reconstruction.
    Fc1NoGan,
    /// Both critics every iteration.
    Combined,
    /// Both critics registered; one chosen per iteration with p = 0.5.
    Random,
}

/// Generator loss terms a variant optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub image: bool,
    pub code: bool,
    pub adversarial: bool,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::Vanilla,
        ModelVariant::Fc1GanOnly,
        ModelVariant::Fc1Full,
        ModelVariant::Fc1NoGan,
        ModelVariant::Combined,
        ModelVariant::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Vanilla => "vanilla",
            ModelVariant::Fc1GanOnly => "fc1_gan_only",
            ModelVariant::Fc1Full => "fc1_full",
            ModelVariant::Fc1NoGan => "fc1_no_gan",
            ModelVariant::Combined => "combined",
            ModelVariant::Random => "random",
        }
    }

    /// Critics instantiated and trained by this variant.
    pub fn critics(self) -> &'static [Critic] {
        match self {
            ModelVariant::Vanilla => &[Critic::X],
            ModelVariant::Fc1GanOnly | ModelVariant::Fc1Full => &[Critic::Fc1],
            ModelVariant::Fc1NoGan => &[],
            ModelVariant::Combined | ModelVariant::Random => &[Critic::X, Critic::Fc1],
        }
    }

    pub fn terms(self) -> LossTerms {
        match self {
            ModelVariant::Fc1GanOnly => LossTerms {
                image: false,
                code: false,
                adversarial: true,
            },
            ModelVariant::Fc1NoGan => LossTerms {
                image: true,
                code: true,
                adversarial: false,
            },
            _ => LossTerms {
                image: true,
                code: true,
                adversarial: true,
            },
        }
    }

    pub fn is_random(self) -> bool {
        self == ModelVariant::Random
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Asymmetric critic schedule: `warm_steps` critic updates during the first
/// `warm_iterations` G-iterations and at every multiple of `period`,
/// `default_steps` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub warm_iterations: usize,
    pub warm_steps: usize,
    pub period: usize,
    pub default_steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warm_iterations: 25,
            warm_steps: 100,
            period: 500,
            default_steps: 5,
        }
    }
}

impl Schedule {
    pub fn is_warm(&self, iteration: usize) -> bool {
        iteration < self.warm_iterations || (self.period > 0 && iteration % self.period == 0)
    }

    pub fn critic_steps(&self, iteration: usize) -> usize {
        if self.is_warm(iteration) {
            self.warm_steps
        } else {
            self.default_steps
        }
    }

    /// Number of warm iterations among `0..n`, in closed form.
    pub fn warm_count(&self, n: usize) -> usize {
        let early = n.min(self.warm_iterations);
        if self.period == 0 || n <= self.warm_iterations {
            return early;
        }
        // multiples of `period` in [warm_iterations, n)
        let upto = |m: usize| if m == 0 { 0 } else { (m - 1) / self.period + 1 };
        early + upto(n) - upto(self.warm_iterations)
    }

    /// Σ critic_steps(i) for i in 0..n, in closed form.
    pub fn total_critic_steps(&self, n: usize) -> usize {
        let warm = self.warm_count(n);
        warm * self.warm_steps + (n - warm) * self.default_steps
    }

    /// G-iterations needed for the critic stream to consume `epochs` full
    /// passes over `dataset_len` items at `batch_size`.
    pub fn generator_iterations(&self, epochs: usize, dataset_len: usize, batch_size: usize) -> usize {
        let budget = epochs * (dataset_len / batch_size.max(1));
        let mut n = 0;
        while self.total_critic_steps(n) < budget {
            n += 1;
        }
        n
    }
}

/// Critics updated (and contributing adversarial terms) at `iteration`.
pub fn choose_active_critics(
    variant: ModelVariant,
    schedule: &Schedule,
    iteration: usize,
    rng: &mut impl Rng,
) -> Vec<Critic> {
    let critics = variant.critics();
    if !variant.is_random() || schedule.is_warm(iteration) {
        return critics.to_vec();
    }
    vec![if rng.random_bool(0.5) { critics[0] } else { critics[1] }]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub params: u64,
    pub selection: u64,
    pub penalty: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            params: 2,
            selection: 3,
            penalty: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: ModelVariant,
    pub epochs: usize,
    pub batch_size: usize,
    /// Explicit G-iteration count; derived from `epochs` when `None`.
    pub iterations: Option<usize>,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub form: LossForm,
    pub seeds: Seeds,
    /// Checkpoint every this many G-iterations (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
    pub debug_grad_norms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::Vanilla,
            epochs: 15,
            batch_size: 32,
            iterations: None,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            form: LossForm::Wasserstein,
            seeds: Seeds::default(),
            checkpoint_every: 0,
            debug_grad_norms: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.iterations == Some(0) {
            return Err(Error::Config("iterations must be ≥ 1".into()));
        }
        self.weights.validate()
    }

    pub fn generator_iterations(&self, dataset_len: usize) -> usize {
        self.iterations
            .unwrap_or_else(|| self.schedule.generator_iterations(self.epochs, dataset_len, self.batch_size))
    }
}

/// One metrics CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub variant: String,
    /// `None` when the variant trains no critic.
    pub critic: Option<String>,
    pub wasserstein_estimate: Option<f64>,
    pub loss_x: f64,
    pub loss_h: f64,
    pub loss_gan: f64,
    pub loss_total: f64,
}

/// Generator-update loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorLosses {
    pub image: f64,
    pub code: f64,
    pub adversarial: f64,
    pub total: f64,
}

/// Hooks for persisting progress; the default implementations do nothing.
pub trait TrainObserver {
    fn record(&mut self, _rec: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    /// `tag` is `"iteration"` for scheduled checkpoints, `"final"` at the
    /// end and `"abort"` when training stops on a numeric failure.
    fn checkpoint(&mut self, _iteration: usize, _tag: &str, _state: &TrainState) -> Result<()> {
        Ok(())
    }

    fn grad_norms(&mut self, _iteration: usize, _network: &str, _norms: &[(String, f64)]) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Keeps every record in memory.
#[derive(Debug, Default)]
pub struct MemoryObserver {
    pub records: Vec<MetricsRecord>,
}

impl TrainObserver for MemoryObserver {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CriticState {
    pub net: Network,
    pub opt: Optimizer,
    pub updates: u64,
}

/// Trainable state after (or during) a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: Network,
    pub generator_opt: Optimizer,
    pub critics: BTreeMap<Critic, CriticState>,
    pub iteration: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        let critics = cfg
            .variant
            .critics()
            .iter()
            .map(|&c| {
                let seed = cfg.seeds.params + 1 + c as u64;
                (
                    c,
                    CriticState {
                        net: Network::init(build_spec(c.role()), seed),
                        opt: Optimizer::adam(cfg.adam),
                        updates: 0,
                    },
                )
            })
            .collect();
        Self {
            generator: Network::init(build_spec(Role::Generator), cfg.seeds.params),
            generator_opt: Optimizer::adam(cfg.adam),
            critics,
            iteration: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub iterations: usize,
}

const FC1: &str = "fc1";

fn check_finite(value: f64, what: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{} is {value}", what())))
    }
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    encoder: &'a Network,
    data: &'a PreparedData,
    critic_stream: BatchCursor,
    generator_stream: BatchCursor,
    selection_rng: ChaCha8Rng,
    penalty_rng: ChaCha8Rng,
    fc1_index: usize,
}

impl Run<'_> {
    fn codes(&self, images: &Tensor) -> Result<Tensor> {
        self.encoder.forward_to(images, FC1)
    }

    /// One critic update; returns the Wasserstein estimate on its batch.
    fn critic_step(&mut self, critic: Critic, generator: &Network, state: &mut CriticState) -> Result<f64> {
        let idx = self.critic_stream.next_batch();
        let (x, _) = self.data.batch(&idx);
        let h = self.codes(&x)?;
        let x_hat = generator.output(&h)?;
        let (real, fake) = match critic {
            Critic::X => (x, x_hat),
            Critic::Fc1 => {
                let h_hat = self.codes(&x_hat)?;
                (h, h_hat)
            }
        };
        let net = &state.net;
        let real_trace = net.trace(&real)?;
        let fake_trace = net.trace(&fake)?;
        let scores = CriticScores::new(real_trace.output(), fake_trace.output())?;
        let estimate = f64::from(losses::wasserstein_estimate(&scores)?);

        let mut grads = GradientSet::zeros_for(net);
        let penalty = match self.cfg.form {
            LossForm::Wasserstein => {
                let p = losses::gradient_penalty(
                    net,
                    &real,
                    &fake,
                    self.cfg.weights.gp_coeff as f32,
                    &mut self.penalty_rng,
                )?;
                grads.add_scaled(&p.params, 1.0);
                p.value
            }
            LossForm::Log => 0.0,
        };
        let (loss, d_real, d_fake) =
            losses::critic_loss(real_trace.output(), fake_trace.output(), penalty, self.cfg.form)?;
        check_finite(f64::from(loss), || format!("{critic} loss"))?;
        grads.add_scaled(&diffengine::backward_output(net, &real_trace, &d_real, false)?.params, 1.0);
        grads.add_scaled(&diffengine::backward_output(net, &fake_trace, &d_fake, false)?.params, 1.0);
        grads.ensure_finite(critic.as_str())?;
        state.opt.update(state.net.params_mut(), &grads);
        state.updates += 1;
        Ok(estimate)
    }

    fn generator_step(
        &mut self,
        active: &[Critic],
        state: &mut TrainState,
        observer: &mut dyn TrainObserver,
    ) -> Result<GeneratorLosses> {
        let cfg = self.cfg;
        let terms = cfg.variant.terms();
        let beta = |on: bool, b: f64| if on { b as f32 } else { 0.0 };
        let (b_x, b_h, b_gan) = (
            beta(terms.image, cfg.weights.beta[0]),
            beta(terms.code, cfg.weights.beta[1]),
            beta(terms.adversarial, cfg.weights.beta[2]),
        );

        let idx = self.generator_stream.next_batch();
        let (x, _) = self.data.batch(&idx);
        let taps: Vec<&str> = cfg.weights.alpha.keys().map(String::as_str).collect();
        let tap_idx = taps
            .iter()
            .map(|t| self.encoder.spec().layer_index(t))
            .collect::<Result<Vec<_>>>()?;
        let real_trace = self.encoder.trace(&x)?;
        let h = real_trace.outputs[self.fc1_index].clone();
        let gen_trace = state.generator.trace(&h)?;
        let x_hat = gen_trace.output();
        let enc_trace = self.encoder.trace(x_hat)?;

        let image = losses::image_loss(x_hat, &x)?;
        let pick = |trace: &crate::netspec::Trace| -> BTreeMap<String, Tensor> {
            taps.iter()
                .zip(&tap_idx)
                .map(|(t, &i)| (t.to_string(), trace.outputs[i].clone()))
                .collect()
        };
        let (code_value, code_grads) = losses::perceptual_loss(&pick(&enc_trace), &pick(&real_trace), &cfg.weights.alpha)?;

        let mut scores = BTreeMap::new();
        let mut critic_traces = BTreeMap::new();
        for &c in active {
            let input = match c {
                Critic::X => x_hat.clone(),
                Critic::Fc1 => enc_trace.outputs[self.fc1_index].clone(),
            };
            let trace = state.critics[&c].net.trace(&input)?;
            scores.insert(c, trace.output().clone());
            critic_traces.insert(c, trace);
        }
        let (adv_value, adv_grads) = losses::adversarial_generator_loss(&scores, &cfg.weights.lambda, cfg.form)?;

        let total = b_x * image.value + b_h * code_value + b_gan * adv_value;
        let losses = GeneratorLosses {
            image: f64::from(image.value),
            code: f64::from(code_value),
            adversarial: f64::from(adv_value),
            total: f64::from(total),
        };
        check_finite(losses.total, || {
            format!(
                "generator loss at iteration {} (x {}, h {}, gan {})",
                state.iteration, losses.image, losses.code, losses.adversarial
            )
        })?;

        // dL/dx̂ from the image term and the image critic.
        let mut d_x_hat = image.grad;
        d_x_hat.scale(b_x);
        // dL/d(encoder taps of x̂) from the code term and the fc1 critic.
        let mut enc_seeds: BTreeMap<usize, Tensor> = BTreeMap::new();
        if b_h != 0.0 {
            for (tap, mut g) in code_grads {
                g.scale(b_h);
                enc_seeds.insert(self.encoder.spec().layer_index(&tap)?, g);
            }
        }
        if b_gan != 0.0 {
            for (c, mut g) in adv_grads {
                g.scale(b_gan);
                let net = &state.critics[&c].net;
                let d_in = diffengine::backward_output(net, &critic_traces[&c], &g, true)?
                    .input
                    .expect("input gradient requested");
                match c {
                    Critic::X => d_x_hat.add_scaled(&d_in, 1.0),
                    Critic::Fc1 => match enc_seeds.get_mut(&self.fc1_index) {
                        Some(s) => s.add_scaled(&d_in, 1.0),
                        None => {
                            enc_seeds.insert(self.fc1_index, d_in);
                        }
                    },
                }
            }
        }
        if !enc_seeds.is_empty() {
            let seeds: Vec<(usize, &Tensor)> = enc_seeds.iter().map(|(&i, g)| (i, g)).collect();
            let through_encoder = diffengine::backward(self.encoder, &enc_trace, &seeds, true)?
                .input
                .expect("input gradient requested");
            d_x_hat.add_scaled(&through_encoder, 1.0);
        }
        let grads = diffengine::backward_output(&state.generator, &gen_trace, &d_x_hat, false)?.params;
        grads.ensure_finite("generator")?;
        if cfg.debug_grad_norms {
            observer.grad_norms(state.iteration, "generator", &grads.layer_norms(state.generator.spec()))?;
        }
        state.generator_opt.update(state.generator.params_mut(), &grads);
        Ok(losses)
    }
}

/// Adversarial training of `cfg.variant` against a frozen, pretrained encoder.
pub fn train(
    cfg: &TrainConfig,
    encoder: &Network,
    data: &PreparedData,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    train_from(cfg, encoder, data, TrainState::new(cfg), observer)
}

pub fn train_from(
    cfg: &TrainConfig,
    encoder: &Network,
    data: &PreparedData,
    mut state: TrainState,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if encoder.spec() != &build_spec(Role::Encoder) {
        return Err(Error::Config("train needs the canonical encoder".into()));
    }
    let critic_stream = BatchStream::new(cfg.batch_size, cfg.seeds.data);
    let generator_stream = BatchStream::new(cfg.batch_size, cfg.seeds.data ^ 0x9E37_79B9_7F4A_7C15);
    let iterations = cfg.generator_iterations(data.len());
    let mut run = Run {
        cfg,
        encoder,
        data,
        critic_stream: critic_stream.cursor(data.len())?,
        generator_stream: generator_stream.cursor(data.len())?,
        selection_rng: ChaCha8Rng::seed_from_u64(cfg.seeds.selection),
        penalty_rng: ChaCha8Rng::seed_from_u64(cfg.seeds.penalty),
        fc1_index: encoder.spec().layer_index(FC1)?,
    };

    while state.iteration < iterations {
        let it = state.iteration;
        let active = choose_active_critics(cfg.variant, &cfg.schedule, it, &mut run.selection_rng);
        let result = (|| -> Result<_> {
            let mut estimates = Vec::with_capacity(active.len());
            for &c in &active {
                let mut critic = state.critics.remove(&c).expect("active critics are registered");
                let mut last = Ok(f64::NAN);
                for _ in 0..cfg.schedule.critic_steps(it) {
                    last = run.critic_step(c, &state.generator, &mut critic);
                    if last.is_err() {
                        break;
                    }
                }
                state.critics.insert(c, critic);
                estimates.push((c, last?));
            }
            let losses = run.generator_step(&active, &mut state, observer)?;
            Ok((estimates, losses))
        })();
        let (estimates, losses) = match result {
            Ok(v) => v,
            Err(e) => {
                observer.checkpoint(it, "abort", &state)?;
                return Err(match e {
                    Error::Numeric(msg) => Error::Numeric(format!("iteration {it}: {msg}")),
                    other => other,
                });
            }
        };
        let row = |critic: Option<Critic>, estimate: Option<f64>| MetricsRecord {
            iteration: it,
            variant: cfg.variant.to_string(),
            critic: critic.map(|c| c.to_string()),
            wasserstein_estimate: estimate,
            loss_x: losses.image,
            loss_h: losses.code,
            loss_gan: losses.adversarial,
            loss_total: losses.total,
        };
        if estimates.is_empty() {
            observer.record(&row(None, None))?;
        }
        for (c, w) in estimates {
            observer.record(&row(Some(c), Some(w)))?;
        }
        state.iteration += 1;
        if cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 {
            observer.checkpoint(state.iteration, "iteration", &state)?;
        }
    }
    observer.checkpoint(state.iteration, "final", &state)?;
    Ok(TrainOutcome { state, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critic_steps_follow_the_warm_schedule() {
        let s = Schedule::default();
        assert_eq!(s.critic_steps(0), 100);
        assert_eq!(s.critic_steps(24), 100);
        assert_eq!(s.critic_steps(25), 5);
        assert_eq!(s.critic_steps(26), 5);
        assert_eq!(s.critic_steps(500), 100);
        assert_eq!(s.critic_steps(501), 5);
        assert_eq!(s.critic_steps(1000), 100);
    }

    #[test]
    fn closed_form_matches_summation() {
        let s = Schedule::default();
        let mut sum = 0;
        for n in 0..2100 {
            assert_eq!(s.total_critic_steps(n), sum, "n = {n}");
            sum += s.critic_steps(n);
        }
        let odd = Schedule {
            warm_iterations: 3,
            warm_steps: 7,
            period: 2,
            default_steps: 1,
        };
        let mut sum = 0;
        for n in 0..50 {
            assert_eq!(odd.total_critic_steps(n), sum);
            sum += odd.critic_steps(n);
        }
    }

    #[test]
    fn fifteen_epochs_at_batch_32_is_roughly_5000_updates() {
        let n = Schedule::default().generator_iterations(15, 60_000, 32);
        assert!((4500..=5500).contains(&n), "{n}");
    }

    #[test]
    fn variant_table() {
        use ModelVariant::*;
        assert_eq!(Vanilla.critics(), &[Critic::X]);
        assert_eq!(Fc1GanOnly.critics(), &[Critic::Fc1]);
        assert_eq!(Fc1Full.critics(), &[Critic::Fc1]);
        assert!(Fc1NoGan.critics().is_empty());
        assert_eq!(Combined.critics(), &[Critic::X, Critic::Fc1]);
        assert!(!Fc1NoGan.terms().adversarial);
        let gan_only = Fc1GanOnly.terms();
        assert!(gan_only.adversarial && !gan_only.image && !gan_only.code);
        for v in ModelVariant::ALL {
            assert_eq!(v.as_str().parse::<ModelVariant>().unwrap(), v);
        }
    }

    fn tiny_run<'a>(cfg: &'a TrainConfig, encoder: &'a Network, data: &'a PreparedData) -> Run<'a> {
        Run {
            cfg,
            encoder,
            data,
            critic_stream: BatchStream::new(cfg.batch_size, 1).cursor(data.len()).unwrap(),
            generator_stream: BatchStream::new(cfg.batch_size, 2).cursor(data.len()).unwrap(),
            selection_rng: ChaCha8Rng::seed_from_u64(3),
            penalty_rng: ChaCha8Rng::seed_from_u64(4),
            fc1_index: encoder.spec().layer_index(FC1).unwrap(),
        }
    }

    fn tiny_data() -> PreparedData {
        use crate::mnist_io::{Images, NormalizationSpec, RawDataset, SIDE};
        let n = 4;
        let pixels = (0..n * SIDE * SIDE).map(|i| (i * 37 % 251) as u8).collect();
        let images = Images {
            count: n,
            rows: SIDE,
            cols: SIDE,
            pixels,
        };
        let raw = RawDataset::new(images, vec![0, 1, 2, 3]).unwrap();
        PreparedData::new(&raw, &NormalizationSpec::default()).unwrap()
    }

    #[test]
    fn steps_only_touch_their_own_network() {
        let cfg = TrainConfig {
            variant: ModelVariant::Combined,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let encoder = Network::init(build_spec(Role::Encoder), 5);
        let data = tiny_data();
        let mut run = tiny_run(&cfg, &encoder, &data);
        let mut state = TrainState::new(&cfg);

        let generator = state.generator.clone();
        for c in [Critic::X, Critic::Fc1] {
            let critic = state.critics.get_mut(&c).unwrap();
            let before = critic.net.clone();
            run.critic_step(c, &state.generator, critic).unwrap();
            assert_ne!(critic.net, before, "{c} did not move");
        }
        assert_eq!(state.generator, generator);

        let critics: Vec<Network> = state.critics.values().map(|c| c.net.clone()).collect();
        run.generator_step(&[Critic::X, Critic::Fc1], &mut state, &mut ()).unwrap();
        assert_ne!(state.generator, generator);
        let after: Vec<Network> = state.critics.values().map(|c| c.net.clone()).collect();
        assert_eq!(after, critics);
        assert_eq!(encoder, Network::init(build_spec(Role::Encoder), 5));
    }

    #[test]
    fn random_selection() {
        let s = Schedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            choose_active_critics(ModelVariant::Random, &s, 10, &mut rng),
            vec![Critic::X, Critic::Fc1]
        );
        assert_eq!(choose_active_critics(ModelVariant::Random, &s, 500, &mut rng).len(), 2);
        assert_eq!(choose_active_critics(ModelVariant::Random, &s, 77, &mut rng).len(), 1);
        for it in [3, 77, 501] {
            assert_eq!(choose_active_critics(ModelVariant::Combined, &s, it, &mut rng).len(), 2);
        }
    }
}
