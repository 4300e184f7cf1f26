use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::{MetricsRecord, TrainObserver, TrainState};

use super::checkpoint::{param_hash, save_checkpoint};
use super::metrics::MetricsWriter;

/// Persists a training run under one output directory:
///
/// ```text
/// metrics.csv
/// grad_norms.csv                       (debug runs only)
/// checkpoints/iter_000100/generator.{manifest,bin}
/// checkpoints/iter_000100/critic_x.{manifest,bin}
/// checkpoints/final/...
/// checkpoints/abort/...               (numeric failure)
/// ```
pub struct RunRecorder {
    dir: PathBuf,
    metrics: MetricsWriter,
    grad_norms: Option<csv::Writer<File>>,
    /// Provenance stored in every checkpoint manifest.
    meta: Vec<(String, String)>,
}

impl RunRecorder {
    pub fn create(dir: &Path, metrics: &Path, meta: Vec<(String, String)>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: MetricsWriter::create(metrics)?,
            grad_norms: None,
            meta,
        })
    }

    pub fn checkpoint_dir(&self, iteration: usize, tag: &str) -> PathBuf {
        let leaf = match tag {
            "iteration" => format!("iter_{iteration:06}"),
            other => other.to_string(),
        };
        self.dir.join("checkpoints").join(leaf)
    }
}

impl TrainObserver for RunRecorder {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.metrics.append(rec)
    }

    fn checkpoint(&mut self, iteration: usize, tag: &str, state: &TrainState) -> Result<()> {
        let dir = self.checkpoint_dir(iteration, tag);
        let mut meta = self.meta.clone();
        meta.push(("tag".into(), tag.into()));
        save_checkpoint(&dir.join("generator"), &state.generator, iteration, &meta)?;
        let mut summary = format!("generator {}\n", param_hash(&state.generator));
        for (c, cs) in &state.critics {
            let mut m = meta.clone();
            m.push(("critic_updates".into(), cs.updates.to_string()));
            save_checkpoint(&dir.join(c.as_str()), &cs.net, iteration, &m)?;
            summary.push_str(&format!("{c} {}\n", param_hash(&cs.net)));
        }
        let path = dir.join("hashes.txt");
        fs::write(&path, summary).map_err(|e| Error::io(&path, e))
    }

    fn grad_norms(&mut self, iteration: usize, network: &str, norms: &[(String, f64)]) -> Result<()> {
        if self.grad_norms.is_none() {
            let path = self.dir.join("grad_norms.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["iteration", "network", "layer", "grad_norm"])?;
            self.grad_norms = Some(w);
        }
        let w = self.grad_norms.as_mut().expect("opened above");
        for (layer, n) in norms {
            w.write_record([iteration.to_string(), network.to_string(), layer.clone(), format!("{n:?}")])?;
        }
        w.flush().map_err(|e| Error::io(self.dir.join("grad_norms.csv"), e))
    }
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
