use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddvae::config::{load_data, ExperimentConfig, LoadedData};
use ddvae::kernels::{kl, Kernel, Prior};
use ddvae::quadrature::kl_quadrature;
use ddvae::seqmodel::{Model, Sequence};
use ddvae::trainer::{evaluate, load_model_params, EvalMode, EvalOptions, Trainer};
use ddvae::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "ddvae", version, about = "Deterministic-decoding autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (and fine-tune) a model; `--checkpoint` resumes a run.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated: seq_acc, delta_hat, delta_opt_hat, knn, kl_mean.
        #[arg(long, default_value = "seq_acc,delta_hat,kl_mean")]
        modes: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Monte Carlo sample count of the error-rate modes.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Write proposal parameters per example and, with `--grid-n`, the
    /// decoded output over a latent lattice.
    LatentDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        grid_n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form KL at (mu = 0, sigma = 1) next to its quadrature value.
    KlTable,
    /// Draw latents from the prior and print their decoded outputs.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        seed_override: Option<u64>,
    },
}

/// Exit status and message of a failed command.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn config_error(message: String) -> Failure {
    Failure { code: 2, message }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| config_error(e.to_string()))?;
    if let Some(s) = seed_override {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| Failure {
        code: 3,
        message: format!("{}: {e}", dir.display()),
    })?;
    Ok(dir)
}

fn fresh_model(cfg: &ExperimentConfig) -> Result<Model, Failure> {
    Ok(Model::new(cfg.model.clone(), cfg.train.seed)?)
}

fn restored_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Model, Failure> {
    let mut m = fresh_model(cfg)?;
    load_model_params(&mut m, checkpoint).map_err(|e| Failure {
        code: 3,
        message: format!(
            "checkpoint {} is incompatible with model spec {}: {e}",
            checkpoint.display(),
            serde_json::to_string(&cfg.model).unwrap_or_default()
        ),
    })?;
    Ok(m)
}

fn render(model: &Model, seq: &Sequence) -> String {
    match model.vocab() {
        Some(v) => v.render(seq.ids()),
        None => seq.ids().iter().map(|t| t.to_string()).collect(),
    }
}

fn csv_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

fn cmd_train(
    config: &Path,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
) -> CmdResult {
    let cfg = load_config(config, seed_override)?;
    let dir = output_dir(&cfg, out)?;
    cfg.write_resolved(&dir)?;
    let data = load_data(&cfg.dataset)?;
    let model = fresh_model(&cfg)?;
    let mut trainer = match checkpoint {
        Some(ck) => Trainer::resume(cfg.train.clone(), model, &ck, Some(&dir))?,
        None => Trainer::new(cfg.train.clone(), model)?,
    };
    trainer.run(&data.train, Some(&dir))?;
    if let Some(last) = trainer.log().last() {
        println!(
            "{} {} epoch {}: elbo {:.6} seq_acc {}",
            cfg.name,
            last.phase,
            last.epoch,
            last.elbo_total,
            last.seq_acc.map_or("-".to_string(), |a| format!("{a:.4}"))
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_eval(
    config: &Path,
    checkpoint: &Path,
    modes: &str,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
    samples: usize,
) -> CmdResult {
    let cfg = load_config(config, seed_override)?;
    let modes = modes
        .split(',')
        .map(|m| m.trim().parse::<EvalMode>())
        .collect::<Result<Vec<_>, _>>()?;
    let model = restored_model(&cfg, checkpoint)?;
    let LoadedData { train, test } = load_data(&cfg.dataset)?;
    let mut rows = Vec::new();
    for mode in modes {
        let (scored, reference) = match (mode, &test) {
            (EvalMode::Knn, Some(t)) => (t, Some(&train)),
            _ => (&train, None),
        };
        let opts = EvalOptions {
            n_samples: samples,
            seed: cfg.train.seed,
            reference,
            max_examples: usize::MAX,
        };
        rows.extend(evaluate(&model, scored, mode, &opts)?);
    }
    for (k, v) in &rows {
        println!("{k},{v}");
    }
    let dir = output_dir(&cfg, out)?;
    let path = dir.join("eval.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_failure(&path, e))?;
    w.write_record(["metric", "value"]).map_err(|e| csv_failure(&path, e))?;
    for (k, v) in &rows {
        w.write_record([k.clone(), v.to_string()])
            .map_err(|e| csv_failure(&path, e))?;
    }
    w.flush().map_err(|e| csv_failure(&path, e))?;
    Ok(())
}

/// Cell-centre coordinates of an `n`-point lattice over `[-extent, extent]`.
fn lattice(n: usize, extent: f64) -> Vec<f64> {
    (0..n)
        .map(|i| -extent + 2.0 * extent * (i as f64 + 0.5) / n as f64)
        .collect()
}

fn cmd_latent_dump(config: &Path, checkpoint: &Path, grid_n: Option<usize>, out: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(config, None)?;
    if grid_n.is_some() && cfg.model.latent_dim != 2 {
        return Err(config_error(format!(
            "grid mode needs a 2-dimensional latent space, model has {}",
            cfg.model.latent_dim
        )));
    }
    if grid_n == Some(0) {
        return Err(config_error("grid_n must be at least 1".into()));
    }
    let model = restored_model(&cfg, checkpoint)?;
    let LoadedData { train, test } = load_data(&cfg.dataset)?;
    let ds = test.as_ref().unwrap_or(&train);
    let dir = output_dir(&cfg, out)?;

    let path = dir.join("latents.csv");
    let props = model.proposals(&ds.all_inputs())?;
    let d = model.latent_dim();
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_failure(&path, e))?;
    let mut header = vec!["index".to_string()];
    header.extend((0..d).map(|i| format!("mu_{i}")));
    header.extend((0..d).map(|i| format!("sigma_{i}")));
    header.push(if ds.has_labels() { "label" } else { "string" }.into());
    w.write_record(&header).map_err(|e| csv_failure(&path, e))?;
    for (i, p) in props.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(p.mu.iter().map(f64::to_string));
        rec.extend(p.sigma.iter().map(f64::to_string));
        rec.push(ds.describe(i));
        w.write_record(&rec).map_err(|e| csv_failure(&path, e))?;
    }
    w.flush().map_err(|e| csv_failure(&path, e))?;

    if let Some(n) = grid_n {
        let extent = match cfg.model.prior {
            Prior::UniformCube => 1.0,
            Prior::StdNormal => 3.0,
        };
        let axis = lattice(n, extent);
        let zs: Vec<Vec<f64>> = axis
            .iter()
            .flat_map(|&y| axis.iter().map(move |&x| vec![x, y]))
            .collect();
        let decoded = model.decode_latents(&zs)?;
        let path = dir.join("grid.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_failure(&path, e))?;
        w.write_record(["z_0", "z_1", "decoded"]).map_err(|e| csv_failure(&path, e))?;
        for (z, s) in zs.iter().zip(&decoded) {
            w.write_record([z[0].to_string(), z[1].to_string(), render(&model, s)])
                .map_err(|e| csv_failure(&path, e))?;
        }
        w.flush().map_err(|e| csv_failure(&path, e))?;
        let meta = serde_json::json!({
            "grid_n": n,
            "extent": [-extent, extent],
            "prior": cfg.model.prior.name(),
            "points": "cell centres, row-major in z_1 then z_0",
        });
        let path = dir.join("grid_meta.json");
        fs::write(&path, format!("{meta:#}\n")).map_err(|e| csv_failure(&path, e))?;
    }
    println!("wrote latent dump to {}", dir.display());
    Ok(())
}

fn cmd_kl_table() -> CmdResult {
    println!("kernel,prior,closed_form,quadrature,abs_diff");
    for kernel in Kernel::ALL {
        for prior in [Prior::StdNormal, Prior::UniformCube] {
            let Ok(closed) = kl(kernel, prior, 0.0, 1.0) else {
                continue;
            };
            let quad = kl_quadrature(kernel, prior, 0.0, 1.0, 1e-12);
            println!("{kernel},{prior},{closed},{quad},{}", (closed - quad).abs());
        }
    }
    Ok(())
}

fn cmd_sample(config: &Path, checkpoint: &Path, n: usize, seed_override: Option<u64>) -> CmdResult {
    let cfg = load_config(config, seed_override)?;
    let model = restored_model(&cfg, checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let zs: Vec<Vec<f64>> = (0..n)
        .map(|_| cfg.model.prior.sample(&mut rng, model.latent_dim()))
        .collect();
    let decoded = model.decode_latents(&zs)?;
    for (z, s) in zs.iter().zip(&decoded) {
        let coords: Vec<String> = z.iter().map(|v| format!("{v:.6}")).collect();
        println!("{},{}", coords.join(","), render(&model, s));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            checkpoint,
            out,
            seed_override,
        } => cmd_train(&config, checkpoint, out, seed_override),
        Command::Eval {
            config,
            checkpoint,
            modes,
            out,
            seed_override,
            samples,
        } => cmd_eval(&config, &checkpoint, &modes, out, seed_override, samples),
        Command::LatentDump {
            config,
            checkpoint,
            grid_n,
            out,
        } => cmd_latent_dump(&config, &checkpoint, grid_n, out),
        Command::KlTable => cmd_kl_table(),
        Command::Sample {
            config,
            checkpoint,
            n,
            seed_override,
        } => cmd_sample(&config, &checkpoint, n, seed_override),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
