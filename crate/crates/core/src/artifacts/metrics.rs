use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::MetricsRecord;

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "variant",
    "critic",
    "wasserstein_estimate",
    "loss_x",
    "loss_h",
    "loss_gan",
    "loss_total",
];

pub const SERIES_HEADER: [&str; 3] = ["critic", "iteration", "wasserstein_estimate"];

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Appends metrics rows, flushing after each so a crashed run keeps its history.
pub struct MetricsWriter {
    out: csv::Writer<File>,
    path: PathBuf,
}

impl MetricsWriter {
    /// Truncate `path` and write the header.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = csv::Writer::from_writer(file);
        out.write_record(METRICS_HEADER)?;
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out,
            path: path.to_path_buf(),
        })
    }

    /// Continue an existing metrics file, writing the header only if it is empty.
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let mut out = csv::Writer::from_writer(file);
        if empty {
            out.write_record(METRICS_HEADER)?;
        }
        Ok(Self {
            out,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, r: &MetricsRecord) -> Result<()> {
        self.out.write_record([
            r.iteration.to_string(),
            r.variant.clone(),
            r.critic.clone().unwrap_or_default(),
            opt(r.wasserstein_estimate),
            format!("{:?}", r.loss_x),
            format!("{:?}", r.loss_h),
            format!("{:?}", r.loss_gan),
            format!("{:?}", r.loss_total),
        ])?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("metrics line {line}: bad `{}`", METRICS_HEADER[i])))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    if rdr.headers()?.iter().ne(METRICS_HEADER) {
        return Err(Error::Format(format!("{}: not a metrics CSV", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let text = |i: usize| rec.get(i).unwrap_or("").to_string();
        let optional = |i: usize| -> Result<Option<f64>> {
            if text(i).is_empty() {
                Ok(None)
            } else {
                field(&rec, i, line).map(Some)
            }
        };
        out.push(MetricsRecord {
            iteration: field(&rec, 0, line)?,
            variant: text(1),
            critic: Some(text(2)).filter(|c| !c.is_empty()),
            wasserstein_estimate: optional(3)?,
            loss_x: field(&rec, 4, line)?,
            loss_h: field(&rec, 5, line)?,
            loss_gan: field(&rec, 6, line)?,
            loss_total: field(&rec, 7, line)?,
        });
    }
    Ok(out)
}

/// Wasserstein-estimate series per critic, each in iteration order.
pub fn wasserstein_series(records: &[MetricsRecord]) -> Result<BTreeMap<String, Vec<(usize, f64)>>> {
    let mut series: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        let (Some(c), Some(w)) = (&r.critic, r.wasserstein_estimate) else {
            continue;
        };
        let s = series.entry(c.clone()).or_default();
        if s.last().is_some_and(|&(last, _)| last >= r.iteration) {
            return Err(Error::Format(format!(
                "{c} series is not strictly increasing at iteration {}",
                r.iteration
            )));
        }
        s.push((r.iteration, w));
    }
    Ok(series)
}

/// Write the per-critic series of `metrics` as `critic,iteration,wasserstein_estimate`
/// rows grouped by critic. Returns the series.
pub fn export_plot(metrics: &Path, output: &Path) -> Result<BTreeMap<String, Vec<(usize, f64)>>> {
    let series = wasserstein_series(&read_metrics(metrics)?)?;
    let mut out = csv::Writer::from_path(output)?;
    out.write_record(SERIES_HEADER)?;
    for (critic, points) in &series {
        for (it, w) in points {
            out.write_record([critic.clone(), it.to_string(), format!("{w:?}")])?;
        }
    }
    out.flush().map_err(|e| Error::io(output, e))?;
    Ok(series)
}
