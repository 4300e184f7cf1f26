use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampler::{Grid, SamplerParams};

/// Binary PGM bytes: `P5 <width> <height> 255\n` followed by row-major pixels.
pub fn encode_pgm<P: Copy + Into<i64>>(width: usize, height: usize, pixels: &[P]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "{} pixels for a {width}×{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5 {width} {height} 255\n").into_bytes();
    out.reserve(pixels.len());
    for (i, &p) in pixels.iter().enumerate() {
        let v: i64 = p.into();
        let byte = u8::try_from(v)
            .map_err(|_| Error::Range(format!("pixel {v} at ({}, {}) is outside 0..=255", i % width.max(1), i / width.max(1))))?;
        out.push(byte);
    }
    Ok(out)
}

pub fn write_pgm<P: Copy + Into<i64>>(path: &Path, width: usize, height: usize, pixels: &[P]) -> Result<()> {
    let bytes = encode_pgm(width, height, pixels)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_image_grid(grid: &Grid, path: &Path) -> Result<()> {
    write_pgm(path, grid.width(), grid.height(), &grid.pixels)
}

/// Provenance of a sample grid: sampler settings, the checkpoints used and
/// the chain seed of every cell.
pub fn grid_manifest(grid: &Grid, p: &SamplerParams, provenance: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in provenance {
        writeln!(out, "{k} = {v}").unwrap();
    }
    writeln!(out, "rows = {}", grid.rows).unwrap();
    writeln!(out, "cols = {}", grid.cols).unwrap();
    writeln!(out, "eps1 = {:?}", p.eps1).unwrap();
    writeln!(out, "eps2 = {:?}", p.eps2).unwrap();
    writeln!(out, "eps3 = {:?}", p.eps3).unwrap();
    writeln!(out, "steps = {}", p.steps).unwrap();
    writeln!(out, "init = {}", p.init.as_str()).unwrap();
    writeln!(out, "base_seed = {}", p.seed).unwrap();
    for &(class, col, seed) in &grid.cells {
        writeln!(
            out,
            "cell = class {class} column {col} seed {seed} offset {}",
            seed.wrapping_sub(p.seed)
        )
        .unwrap();
    }
    out
}

/// `step,class,column,seed,class_probability` rows. `trace[step][chain]` is
/// the target-class probability of chain `chain` before update `step`.
pub fn write_trace_csv(path: &Path, cells: &[(usize, usize, u64)], trace: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["step", "class", "column", "seed", "class_probability"])?;
    for (step, probs) in trace.iter().enumerate() {
        if probs.len() != cells.len() {
            return Err(Error::Shape(format!("trace step {step} has {} chains, expected {}", probs.len(), cells.len())));
        }
        for (&(class, col, seed), p) in cells.iter().zip(probs) {
            out.write_record([
                step.to_string(),
                class.to_string(),
                col.to_string(),
                seed.to_string(),
                format!("{p:?}"),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}
