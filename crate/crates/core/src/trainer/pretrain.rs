use crate::diffengine;
use crate::error::Result;
use crate::losses;
use crate::mnist_io::{BatchStream, PreparedData};
use crate::netspec::{build_spec, Network, Role};

use super::{Optimizer, SgdConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub param_seed: u64,
    pub data_seed: u64,
    /// Test accuracy below this is reported as a warning.
    pub accuracy_floor: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            sgd: SgdConfig::default(),
            param_seed: 0,
            data_seed: 0,
            accuracy_floor: 0.95,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub encoder: Network,
    pub test_accuracy: f64,
    /// Mean training cross entropy of each epoch.
    pub epoch_losses: Vec<f64>,
    pub warning: Option<String>,
}

/// Fraction of `data` the encoder's fc2 logits classify correctly.
pub fn evaluate_accuracy(encoder: &Network, data: &PreparedData) -> Result<f64> {
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(256) {
        let (x, labels) = data.batch(chunk);
        let logits = encoder.output(&x)?;
        for (i, &l) in labels.iter().enumerate() {
            let row = logits.sample(i);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            correct += usize::from(best == l as usize);
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Train the encoder as a classifier with SGD on cross entropy. The returned
/// encoder is never updated again.
pub fn pretrain_encoder(cfg: &PretrainConfig, train: &PreparedData, test: &PreparedData) -> Result<PretrainOutcome> {
    let mut encoder = Network::init(build_spec(Role::Encoder), cfg.param_seed);
    let mut opt = Optimizer::sgd(cfg.sgd);
    let stream = BatchStream::new(cfg.batch_size, cfg.data_seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = stream.epoch(train.len(), epoch as u64)?;
        for idx in &batches {
            let (x, labels) = train.batch(idx);
            let trace = encoder.trace(&x)?;
            let ce = losses::cross_entropy(trace.output(), &labels)?;
            let value = f64::from(ce.value);
            if !value.is_finite() {
                return Err(crate::Error::Numeric(format!("cross entropy {value} in epoch {epoch}")));
            }
            sum += value;
            let grads = diffengine::backward_output(&encoder, &trace, &ce.grad, false)?.params;
            grads.ensure_finite("encoder")?;
            opt.update(encoder.params_mut(), &grads);
        }
        epoch_losses.push(sum / batches.len().max(1) as f64);
    }
    let test_accuracy = evaluate_accuracy(&encoder, test)?;
    let warning = (test_accuracy < cfg.accuracy_floor).then(|| {
        format!(
            "encoder test accuracy {test_accuracy:.4} below the configured floor {}",
            cfg.accuracy_floor
        )
    });
    Ok(PretrainOutcome {
        encoder,
        test_accuracy,
        epoch_losses,
        warning,
    })
}
