//! Flat `key = value` run configuration.
//!
//! Every key has a documented default. Values come from (lowest to highest
//! precedence) the defaults, the dataset root environment variable, the
//! config file and command-line overrides. The emitted manifest lists every
//! effective value and is itself a valid config file.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{Critic, LossForm, LossWeights};
use crate::mnist_io::NormalizationSpec;
use crate::sampler::{InitMode, SamplerParams};
use crate::trainer::{AdamConfig, ModelVariant, PretrainConfig, Schedule, Seeds, SgdConfig, TrainConfig};

/// Environment variable naming a directory with the four standard MNIST files.
pub const DATA_ROOT_ENV: &str = "PPGN_MNIST_DIR";

const DATA_FILES: [(&str, &str); 4] = [
    ("train_images", "train-images-idx3-ubyte"),
    ("train_labels", "train-labels-idx1-ubyte"),
    ("test_images", "t10k-images-idx3-ubyte"),
    ("test_labels", "t10k-labels-idx1-ubyte"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Train,
    Sample,
    ExportPlot,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::Pretrain, Command::Train, Command::Sample, Command::ExportPlot];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::ExportPlot => "export-plot",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// A config value type: parsed from and rendered back to its text form.
trait Value: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(usize, u64, bool, String);

impl Value for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    // `{:?}` is the shortest representation that parses back to the same bits.
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! named_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.as_str().to_string()
            }
        }
    )*};
}
named_value!(ModelVariant, LossForm, InitMode);

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr,)*) => {
        /// Effective settings of one command invocation.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            pub command: Command,
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl RunConfig {
            /// Every key with its documented default.
            pub fn defaults(command: Command) -> Self {
                Self { command, $($key: $default,)* }
            }

            pub const KEYS: &'static [&'static str] = &[$(stringify!($key),)*];

            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    "command" => {
                        let c: Command = value.parse()?;
                        if c != self.command {
                            return Err(Error::Config(format!(
                                "config is for `{c}` but the command is `{}`",
                                self.command
                            )));
                        }
                    }
                    $(stringify!($key) => {
                        self.$key = <$ty as Value>::parse_value(value).ok_or_else(|| {
                            Error::Config(format!(
                                "`{}` expects {}, got `{value}`",
                                key,
                                stringify!($ty)
                            ))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, effective value, is default)` for every key.
            pub fn entries(&self) -> Vec<(&'static str, String, bool)> {
                let d = Self::defaults(self.command);
                vec![$((
                    stringify!($key),
                    self.$key.render(),
                    self.$key.render() == d.$key.render(),
                ),)*]
            }
        }
    };
}

run_config! {
    /// Directory that receives checkpoints, metrics and images.
    output_dir: String = "runs".into(),
    train_images: String = String::new(),
    train_labels: String = String::new(),
    test_images: String = String::new(),
    test_labels: String = String::new(),
    /// Use only the first this many training images (0 = all).
    subset: usize = 0,
    norm_mean: f64 = 0.1307,
    norm_std: f64 = 0.3081,
    /// Encoder checkpoint stem; empty resolves to `<output_dir>/encoder`.
    encoder: String = String::new(),
    /// Generator checkpoint stem; empty resolves to the final training checkpoint.
    generator: String = String::new(),
    pretrain_epochs: usize = 5,
    pretrain_batch_size: usize = 64,
    sgd_lr: f64 = 0.01,
    sgd_momentum: f64 = 0.5,
    accuracy_floor: f64 = 0.95,
    seed_pretrain: u64 = 0,
    variant: ModelVariant = ModelVariant::Vanilla,
    epochs: usize = 15,
    batch_size: usize = 32,
    /// Explicit G-iteration count (0 = derive from `epochs`).
    iterations: usize = 0,
    warm_iterations: usize = 25,
    warm_steps: usize = 100,
    warm_period: usize = 500,
    critic_steps: usize = 5,
    adam_lr: f64 = 1e-4,
    adam_beta1: f64 = 0.5,
    adam_beta2: f64 = 0.9,
    adam_eps: f64 = 1e-8,
    beta_x: f64 = 1.0,
    beta_h: f64 = 0.1,
    beta_gan: f64 = 2.0,
    lambda_critic_x: f64 = 1.0,
    lambda_critic_fc1: f64 = 1.0,
    alpha_fc1: f64 = 1.0,
    alpha_fc2: f64 = 0.0,
    gp_coeff: f64 = 10.0,
    loss_form: LossForm = LossForm::Wasserstein,
    seed_data: u64 = 1,
    seed_params: u64 = 2,
    seed_selection: u64 = 3,
    seed_penalty: u64 = 4,
    /// Checkpoint every this many G-iterations (0 = only at the end).
    checkpoint_every: usize = 0,
    debug_grad_norms: bool = false,
    eps1: f64 = 1e-2,
    eps2: f64 = 1.0,
    eps3: f64 = 1e-15,
    sampler_steps: usize = 200,
    sampler_seed: u64 = 0,
    sampler_init: InitMode = InitMode::EncodeRandomImage,
    grid_per_class: usize = 10,
    sampler_trace: bool = false,
    /// Metrics CSV read by export-plot; empty resolves to `<output_dir>/metrics.csv`.
    metrics: String = String::new(),
    /// Series file written by export-plot; empty resolves to `<output_dir>/wasserstein_series.csv`.
    plot_output: String = String::new(),
}

/// `key = value` pairs of a config text, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Build the effective config for `command`.
///
/// `data_root` stands in for the dataset root environment variable and fills
/// the four dataset paths with the standard MNIST file names.
pub fn parse_config(
    command: Command,
    file: Option<&str>,
    overrides: &[(String, String)],
    data_root: Option<&Path>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(command);
    if let Some(root) = data_root {
        for (key, name) in DATA_FILES {
            cfg.set(key, &root.join(name).to_string_lossy())?;
        }
    }
    for (k, v) in file.map(parse_pairs).transpose()?.unwrap_or_default() {
        cfg.set(&k, &v)?;
    }
    for (k, v) in overrides {
        cfg.set(&k.replace('-', "_"), v)?;
    }
    cfg.resolve();
    cfg.check()?;
    Ok(cfg)
}

/// [`parse_config`] reading the file from disk and the data root from the environment.
pub fn load_config(command: Command, path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = path
        .map(|p| std::fs::read_to_string(p).map_err(|e| Error::io(p, e)))
        .transpose()?;
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    parse_config(command, text.as_deref(), overrides, root.as_deref())
}

impl RunConfig {
    fn resolve(&mut self) {
        let out = Path::new(&self.output_dir);
        let fill = |v: &mut String, p: PathBuf| {
            if v.is_empty() {
                *v = p.to_string_lossy().into_owned();
            }
        };
        fill(&mut self.encoder, out.join("encoder"));
        fill(&mut self.generator, out.join("checkpoints").join("final").join("generator"));
        fill(&mut self.metrics, out.join("metrics.csv"));
        fill(&mut self.plot_output, out.join("wasserstein_series.csv"));
    }

    fn needed_data(&self) -> &'static [&'static str] {
        match self.command {
            Command::Pretrain => &["train_images", "train_labels", "test_images", "test_labels"],
            Command::Train => &["train_images", "train_labels"],
            Command::Sample if self.sampler_init == InitMode::EncodeRandomImage => &["test_images", "test_labels"],
            _ => &[],
        }
    }

    fn check(&self) -> Result<()> {
        let paths: BTreeMap<&str, &String> = [
            ("train_images", &self.train_images),
            ("train_labels", &self.train_labels),
            ("test_images", &self.test_images),
            ("test_labels", &self.test_labels),
        ]
        .into();
        for key in self.needed_data() {
            if paths[key].is_empty() {
                return Err(Error::Config(format!(
                    "missing dataset path `{key}` (set it in the config, pass --{key}, or set {DATA_ROOT_ENV})"
                )));
            }
        }
        self.norm().validate()?;
        match self.command {
            Command::Pretrain => {
                if self.pretrain_epochs == 0 || self.pretrain_batch_size == 0 {
                    return Err(Error::Config("pretrain_epochs and pretrain_batch_size must be ≥ 1".into()));
                }
            }
            Command::Train => self.train_config().validate()?,
            Command::Sample => {
                self.sampler_params().validate()?;
                if self.grid_per_class == 0 {
                    return Err(Error::Config("grid_per_class must be ≥ 1".into()));
                }
            }
            Command::ExportPlot => {}
        }
        Ok(())
    }

    pub fn norm(&self) -> NormalizationSpec {
        NormalizationSpec {
            mean: self.norm_mean,
            std: self.norm_std,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut alpha = BTreeMap::new();
        for (tap, a) in [("fc1", self.alpha_fc1), ("fc2", self.alpha_fc2)] {
            if a != 0.0 {
                alpha.insert(tap.to_string(), a);
            }
        }
        TrainConfig {
            variant: self.variant,
            epochs: self.epochs,
            batch_size: self.batch_size,
            iterations: (self.iterations > 0).then_some(self.iterations),
            schedule: Schedule {
                warm_iterations: self.warm_iterations,
                warm_steps: self.warm_steps,
                period: self.warm_period,
                default_steps: self.critic_steps,
            },
            adam: AdamConfig {
                lr: self.adam_lr,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            weights: LossWeights {
                beta: [self.beta_x, self.beta_h, self.beta_gan],
                lambda: BTreeMap::from([(Critic::X, self.lambda_critic_x), (Critic::Fc1, self.lambda_critic_fc1)]),
                alpha,
                gp_coeff: self.gp_coeff,
            },
            form: self.loss_form,
            seeds: Seeds {
                data: self.seed_data,
                params: self.seed_params,
                selection: self.seed_selection,
                penalty: self.seed_penalty,
            },
            checkpoint_every: self.checkpoint_every,
            debug_grad_norms: self.debug_grad_norms,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch_size,
            sgd: SgdConfig {
                lr: self.sgd_lr,
                momentum: self.sgd_momentum,
            },
            param_seed: self.seed_pretrain,
            data_seed: self.seed_pretrain,
            accuracy_floor: self.accuracy_floor,
        }
    }

    pub fn sampler_params(&self) -> SamplerParams {
        SamplerParams {
            eps1: self.eps1,
            eps2: self.eps2,
            eps3: self.eps3,
            steps: self.sampler_steps,
            seed: self.sampler_seed,
            init: self.sampler_init,
        }
    }

    /// Every effective value, one `key = value` per line. Values left at
    /// their default carry a trailing `# default` comment.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        writeln!(out, "command = {}", self.command).unwrap();
        for (key, value, is_default) in self.entries() {
            if is_default {
                writeln!(out, "{key} = {value}  # default").unwrap();
            } else {
                writeln!(out, "{key} = {value}").unwrap();
            }
        }
        out
    }
}
