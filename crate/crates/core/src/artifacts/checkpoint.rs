//! Checkpoints are a text manifest (`<stem>.manifest`) next to a blob of
//! little-endian `f32` parameters (`<stem>.bin`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netspec::{build_spec, dims, Network, Role};
use crate::tensor::Tensor;

const FORMAT: &str = "ppgn-checkpoint-v1";

/// Parsed manifest of a checkpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub role: Role,
    pub iteration: usize,
    pub param_seed: u64,
    /// Additional `key = value` provenance lines, in file order.
    pub meta: Vec<(String, String)>,
    /// `(name, shape, byte offset)` of every tensor in the blob.
    pub tensors: Vec<(String, Vec<usize>, usize)>,
    pub param_hash: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("manifest"), stem.with_extension("bin"))
}

/// SHA-256 over the little-endian parameter bytes.
pub fn param_hash(net: &Network) -> String {
    let mut h = Sha256::new();
    for p in net.params() {
        for v in p.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn tensor_table(role: Role) -> Vec<(String, Vec<usize>, usize)> {
    let mut offset = 0;
    build_spec(role)
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let at = offset;
            offset += shape.iter().product::<usize>() * 4;
            (name, shape, at)
        })
        .collect()
}

/// Text manifest for `net`. The architecture must be one of the canonical four.
pub fn render_manifest(net: &Network, iteration: usize, meta: &[(String, String)]) -> Result<String> {
    let role: Role = net.spec().name.parse()?;
    if net.spec() != &build_spec(role) {
        return Err(Error::Checkpoint(format!("{} differs from the canonical spec", role)));
    }
    let mut out = String::new();
    writeln!(out, "format = {FORMAT}").unwrap();
    out.push_str(&net.spec().manifest());
    writeln!(out, "iteration = {iteration}").unwrap();
    writeln!(out, "param_seed = {}", net.param_seed()).unwrap();
    for (k, v) in meta {
        writeln!(out, "meta = {k} {v}").unwrap();
    }
    let table = tensor_table(role);
    for (name, shape, offset) in &table {
        writeln!(out, "tensor = {name} {} {offset}", dims(shape)).unwrap();
    }
    let bytes: usize = table.iter().map(|(_, s, _)| s.iter().product::<usize>() * 4).sum();
    writeln!(out, "blob_bytes = {bytes}").unwrap();
    writeln!(out, "param_hash = {}", param_hash(net)).unwrap();
    Ok(out)
}

pub fn save_checkpoint(stem: &Path, net: &Network, iteration: usize, meta: &[(String, String)]) -> Result<()> {
    let manifest = render_manifest(net, iteration, meta)?;
    let (mpath, bpath) = paths(stem);
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut blob = Vec::with_capacity(net.spec().param_count() * 4);
    for p in net.params() {
        for v in p.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

fn parse_manifest(text: &str) -> Result<(Checkpoint, Vec<String>, usize)> {
    let mut role = None;
    let mut iteration = None;
    let mut param_seed = None;
    let mut meta = Vec::new();
    let mut tensors = Vec::new();
    let mut layers = Vec::new();
    let mut blob_bytes = None;
    let mut hash = None;
    let mut format_ok = false;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Checkpoint(format!("malformed manifest line `{line}`")))?;
        let bad = |what: &str| Error::Checkpoint(format!("bad {what} `{value}`"));
        match key {
            "format" => format_ok = value == FORMAT,
            "architecture" => role = Some(value.parse::<Role>().map_err(|_| bad("architecture"))?),
            "input" => {}
            "layer" => layers.push(line.to_string()),
            "iteration" => iteration = Some(value.parse().map_err(|_| bad("iteration"))?),
            "param_seed" => param_seed = Some(value.parse().map_err(|_| bad("param_seed"))?),
            "meta" => {
                let (k, v) = value.split_once(' ').unwrap_or((value, ""));
                meta.push((k.to_string(), v.to_string()));
            }
            "tensor" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [name, shape, offset] = parts[..] else {
                    return Err(bad("tensor"));
                };
                let shape = shape
                    .split('x')
                    .map(str::parse)
                    .collect::<std::result::Result<Vec<usize>, _>>()
                    .map_err(|_| bad("tensor shape"))?;
                tensors.push((name.to_string(), shape, offset.parse().map_err(|_| bad("offset"))?));
            }
            "blob_bytes" => blob_bytes = Some(value.parse().map_err(|_| bad("blob_bytes"))?),
            "param_hash" => hash = Some(value.to_string()),
            _ => return Err(Error::Checkpoint(format!("unknown manifest key `{key}`"))),
        }
    }
    if !format_ok {
        return Err(Error::Checkpoint(format!("not a {FORMAT} manifest")));
    }
    let missing = |k: &str| Error::Checkpoint(format!("manifest lacks `{k}`"));
    Ok((
        Checkpoint {
            role: role.ok_or_else(|| missing("architecture"))?,
            iteration: iteration.ok_or_else(|| missing("iteration"))?,
            param_seed: param_seed.ok_or_else(|| missing("param_seed"))?,
            meta,
            tensors,
            param_hash: hash.ok_or_else(|| missing("param_hash"))?,
        },
        layers,
        blob_bytes.ok_or_else(|| missing("blob_bytes"))?,
    ))
}

/// Load and verify a checkpoint against its canonical architecture.
pub fn load_checkpoint(stem: &Path) -> Result<(Checkpoint, Network)> {
    let (mpath, bpath) = paths(stem);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let (ckpt, layers, blob_bytes) = parse_manifest(&text)?;
    let spec = build_spec(ckpt.role);
    let canonical: Vec<String> = spec
        .manifest()
        .lines()
        .filter(|l| l.starts_with("layer = "))
        .map(str::to_string)
        .collect();
    if layers != canonical {
        return Err(Error::Checkpoint(format!("layer list does not match the canonical {}", ckpt.role)));
    }
    let table = tensor_table(ckpt.role);
    if ckpt.tensors != table {
        return Err(Error::Checkpoint(format!(
            "tensor names, shapes or offsets do not match the canonical {}",
            ckpt.role
        )));
    }
    let expected: usize = table.iter().map(|(_, s, _)| s.iter().product::<usize>() * 4).sum();
    if blob_bytes != expected {
        return Err(Error::Checkpoint(format!("manifest declares {blob_bytes} blob bytes, expected {expected}")));
    }
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() != expected {
        return Err(Error::Length(format!("{}: {} bytes, expected {expected}", bpath.display(), blob.len())));
    }
    let params = table
        .iter()
        .map(|(_, shape, offset)| {
            let n: usize = shape.iter().product();
            let data = blob[*offset..offset + n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Tensor::from_vec(shape, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let net = Network::from_params(spec, params, ckpt.param_seed)?;
    if param_hash(&net) != ckpt.param_hash {
        return Err(Error::Checkpoint("parameter hash does not match the manifest".into()));
    }
    Ok((ckpt, net))
}
