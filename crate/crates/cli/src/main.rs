use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppgn::artifacts::{
    self, export_plot, grid_manifest, load_checkpoint, param_hash, save_checkpoint, write_image_grid, write_text,
    Command, RunConfig, RunRecorder,
};
use ppgn::mnist_io::{PreparedData, RawDataset};
use ppgn::netspec::{Network, Role};
use ppgn::sampler::{build_grid, grid_agreement, InitMode, SamplerNets};
use ppgn::trainer::{pretrain_encoder, train};
use ppgn::{Error, Result};

/// Joint PPGN-h on MNIST: encoder pretraining, adversarial training of the
/// generator, class-conditional sampling and plot export.
///
/// Every command accepts a flat `key = value` config file plus overrides
/// written as `--key value` or `--key=value`, using the config key names.
/// The dataset paths default to the standard MNIST file names inside
/// $PPGN_MNIST_DIR.
#[derive(Parser)]
#[command(name = "ppgn", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the encoder as an MNIST classifier and save its checkpoint.
    Pretrain(Args),
    /// Train a generator variant against the frozen encoder.
    Train(Args),
    /// Draw a 10-row class-conditional sample grid.
    Sample(Args),
    /// Turn a metrics CSV into per-critic Wasserstein-estimate series.
    ExportPlot(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    dry_run: bool,
    /// Config overrides: `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(tok) = it.next() {
        let key = tok
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{tok}`")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("`--{key}` needs a value")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn load_data(images: &str, labels: &str, subset: usize, cfg: &RunConfig) -> Result<PreparedData> {
    let raw = RawDataset::load(Path::new(images), Path::new(labels))?;
    let raw = if subset > 0 { raw.head(subset) } else { raw };
    PreparedData::new(&raw, &cfg.norm())
}

fn load_role(stem: &str, role: Role) -> Result<Network> {
    let (ckpt, net) = load_checkpoint(Path::new(stem))?;
    if ckpt.role != role {
        return Err(Error::Checkpoint(format!("{stem} holds a {}, expected a {role}", ckpt.role)));
    }
    Ok(net)
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    Path::new(&cfg.output_dir).join(name)
}

fn pretrain_cmd(cfg: &RunConfig) -> Result<()> {
    let train_set = load_data(&cfg.train_images, &cfg.train_labels, cfg.subset, cfg)?;
    let test_set = load_data(&cfg.test_images, &cfg.test_labels, 0, cfg)?;
    let outcome = pretrain_encoder(&cfg.pretrain_config(), &train_set, &test_set)?;
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {epoch}: mean cross entropy {loss:.5}");
    }
    println!("test accuracy {:.4}", outcome.test_accuracy);
    if let Some(w) = &outcome.warning {
        eprintln!("warning: {w}");
    }
    let meta = vec![
        ("test_accuracy".to_string(), format!("{:?}", outcome.test_accuracy)),
        ("seed_pretrain".to_string(), cfg.seed_pretrain.to_string()),
    ];
    save_checkpoint(Path::new(&cfg.encoder), &outcome.encoder, cfg.pretrain_epochs, &meta)?;
    let mut manifest = cfg.manifest();
    manifest.push_str(&format!("# test_accuracy {:?}\n", outcome.test_accuracy));
    if let Some(w) = &outcome.warning {
        manifest.push_str(&format!("# warning: {w}\n"));
    }
    write_text(&out_path(cfg, "pretrain_manifest.txt"), &manifest)?;
    println!("encoder saved to {}", cfg.encoder);
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let data = load_data(&cfg.train_images, &cfg.train_labels, cfg.subset, cfg)?;
    let encoder = load_role(&cfg.encoder, Role::Encoder)?;
    let tc = cfg.train_config();
    let iterations = tc.generator_iterations(data.len());
    write_text(&out_path(cfg, "run_manifest.txt"), &cfg.manifest())?;
    let meta = vec![
        ("variant".to_string(), cfg.variant.to_string()),
        ("encoder_hash".to_string(), param_hash(&encoder)),
        ("seed_data".to_string(), cfg.seed_data.to_string()),
        ("seed_params".to_string(), cfg.seed_params.to_string()),
        ("seed_selection".to_string(), cfg.seed_selection.to_string()),
        ("seed_penalty".to_string(), cfg.seed_penalty.to_string()),
    ];
    let mut recorder = RunRecorder::create(Path::new(&cfg.output_dir), Path::new(&cfg.metrics), meta)?;
    println!("training {} for {iterations} generator iterations on {} images", cfg.variant, data.len());
    let outcome = train(&tc, &encoder, &data, &mut recorder)?;
    println!(
        "done: {} iterations, checkpoints in {}",
        outcome.iterations,
        recorder.checkpoint_dir(outcome.iterations, "final").display()
    );
    Ok(())
}

fn sample_cmd(cfg: &RunConfig) -> Result<()> {
    let encoder = load_role(&cfg.encoder, Role::Encoder)?;
    let generator = load_role(&cfg.generator, Role::Generator)?;
    let held_out = match cfg.sampler_init {
        InitMode::EncodeRandomImage => Some(load_data(&cfg.test_images, &cfg.test_labels, 0, cfg)?),
        InitMode::Zeros => None,
    };
    let p = cfg.sampler_params();
    let nets = SamplerNets {
        encoder: &encoder,
        generator: &generator,
    };
    let norm = cfg.norm();
    let grid = build_grid(cfg.grid_per_class, &p, nets, held_out.as_ref(), &norm, cfg.sampler_trace)?;
    let dir = out_path(cfg, "samples");
    write_image_grid(&grid, &dir.join("grid.pgm"))?;
    let provenance = vec![
        ("encoder".to_string(), cfg.encoder.clone()),
        ("encoder_hash".to_string(), param_hash(&encoder)),
        ("generator".to_string(), cfg.generator.clone()),
        ("generator_hash".to_string(), param_hash(&generator)),
    ];
    write_text(&dir.join("grid.manifest"), &grid_manifest(&grid, &p, &provenance))?;
    write_text(&dir.join("sample_manifest.txt"), &cfg.manifest())?;
    if let Some(trace) = &grid.trace {
        artifacts::write_trace_csv(&dir.join("trace.csv"), &grid.cells, trace)?;
    }
    let agreement = grid_agreement(&encoder, &grid, &norm)?;
    println!(
        "{}x{} grid written to {} (classifier agrees with the target class on {:.1}% of cells)",
        grid.rows,
        grid.cols,
        dir.join("grid.pgm").display(),
        100.0 * agreement
    );
    Ok(())
}

fn export_cmd(cfg: &RunConfig) -> Result<()> {
    let series = export_plot(Path::new(&cfg.metrics), Path::new(&cfg.plot_output))?;
    for (critic, points) in &series {
        println!("{critic}: {} points", points.len());
    }
    println!("series written to {}", cfg.plot_output);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (command, args) = match cli.command {
        Cmd::Pretrain(a) => (Command::Pretrain, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Sample(a) => (Command::Sample, a),
        Cmd::ExportPlot(a) => (Command::ExportPlot, a),
    };
    let cfg = artifacts::load_config(command, args.config.as_deref(), &parse_overrides(&args.overrides)?)?;
    if args.dry_run {
        print!("{}", cfg.manifest());
        return Ok(());
    }
    match command {
        Command::Pretrain => pretrain_cmd(&cfg),
        Command::Train => train_cmd(&cfg),
        Command::Sample => sample_cmd(&cfg),
        Command::ExportPlot => export_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
