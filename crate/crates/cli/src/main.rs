use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use candle_core::{DType, Device};
use clap::{Parser, Subcommand};
use warpstyle::adaptation::{run_adaptation, TrainConfig, Trainer};
use warpstyle::backends::{IdentityConfig, PerceptualConfig, SemanticsConfig};
use warpstyle::generator::InversionConfig;
use warpstyle::imageops::{load_image, load_image_resized, save_image};
use warpstyle::objectives::write_loss_csv;
use warpstyle::semantics::Level;
use warpstyle::toolkit::{
    alpha_grid, alpha_sweep, evaluate, parse_seeds, resolve_latent, stylize, visualize_features, Bundle,
    ImageEncoder, InversionEncoder, StylizeInput,
};

#[derive(Parser)]
#[command(name = "warpstyle", version, about = "Deformation-aware one-shot face stylization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt the source generator to one real/style image pair.
    Train {
        #[arg(long, num_args = 2, value_names = ["REAL", "STYLE"])]
        pair: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue the run stored in this run directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one stylized image from a seed or a real image.
    Stylize {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
        image: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        /// Fail instead of inverting when an image is given.
        #[arg(long)]
        no_inversion: bool,
        #[arg(long)]
        inversion_steps: Option<usize>,
    },
    /// Render a seed at evenly spaced deformation strengths.
    Sweep {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a bundle with LPIPS, dir-CC and dir-ID.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        n: usize,
        /// File of whitespace- or comma-separated seeds; defaults to 0..n.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `stub` or `vgg:PATH`; defaults to the bundle's perceptual backend.
        #[arg(long)]
        perceptual: Option<String>,
        /// `stub` or `arcface:PATH`.
        #[arg(long)]
        identity: Option<String>,
    },
    /// Write PCA maps of ViT tokens.
    Visualize {
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "3,6,12")]
        layers: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Training config whose semantics backend is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Bad input from the user; exits with code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn run_dir(base: &Path, tag: &str) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let dir = base.join(format!("{stamp}_{tag}"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            require_file(p, "config file")?;
            Ok(TrainConfig::load(p)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn style_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "style".into())
}

fn train(pair: &[PathBuf], config: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<()> {
    let device = Device::Cpu;
    let (trainer, dir, style) = if let Some(run) = resume {
        let ckpt = run.join("checkpoints");
        let mut trainer = Trainer::resume(&ckpt, &device)?;
        log::info!("resuming at step {}", trainer.step());
        trainer.run(Some(&ckpt))?;
        let style = std::fs::read_to_string(run.join("style.txt")).unwrap_or_else(|_| "style".into());
        (trainer, run.to_path_buf(), style.trim().to_string())
    } else {
        for p in pair {
            require_file(p, "image")?;
        }
        let cfg = load_config(config)?;
        let res = cfg.generator.output_resolution;
        let real = load_image_resized(&pair[0], res, &device)?;
        let styl = load_image_resized(&pair[1], res, &device)?;
        let dir = run_dir(out, &cfg.hash()?)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
        let style = style_name(&pair[1]);
        std::fs::write(dir.join("style.txt"), &style)?;
        let ckpt = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt)?;
        let trainer = run_adaptation(&real, &styl, &cfg, Some(&ckpt))?;
        (trainer, dir, style)
    };
    write_loss_csv(&dir.join("losses.csv"), trainer.history())?;
    let bundle_path = dir.join("bundle.tar");
    Bundle::from_trainer(&trainer, style)?.save(&bundle_path)?;
    println!("{}", bundle_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_stylize(
    bundle: &Path,
    image: Option<&Path>,
    seed: Option<u64>,
    alpha: f64,
    out: &Path,
    no_inversion: bool,
    inversion_steps: Option<usize>,
) -> Result<()> {
    require_file(bundle, "bundle")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(usage(format!("--alpha {alpha} outside [0, 1]")));
    }
    let device = Device::Cpu;
    let bundle = Bundle::load(bundle, &device)?;
    let w = match (image, seed) {
        (Some(path), _) => {
            require_file(path, "image")?;
            let img = load_image_resized(path, bundle.config().generator.output_resolution, &device)?;
            let encoder: Option<Box<dyn ImageEncoder>> = if no_inversion {
                None
            } else {
                let mut config: InversionConfig = bundle.config().inversion;
                if let Some(s) = inversion_steps {
                    config.steps = s;
                }
                Some(Box::new(InversionEncoder {
                    perceptual: bundle.config().perceptual.build(DType::F32, &device)?,
                    config,
                }))
            };
            resolve_latent(&bundle, StylizeInput::Image(&img), encoder.as_deref())?
        }
        (None, Some(s)) => resolve_latent(&bundle, StylizeInput::Seed(s), None)?,
        (None, None) => return Err(usage("one of --image or --seed is required")),
    };
    save_image(&stylize(&bundle, &w, alpha)?, out)?;
    println!("{}", out.display());
    Ok(())
}

fn run_sweep(bundle_path: &Path, seed: u64, steps: usize, out: &Path) -> Result<()> {
    require_file(bundle_path, "bundle")?;
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let bundle = Bundle::load(bundle_path, &Device::Cpu)?;
    let w = resolve_latent(&bundle, StylizeInput::Seed(seed), None)?;
    let frames = alpha_sweep(bundle.generator(), &w, &alpha_grid(steps))?;
    let dir = run_dir(out, &bundle.manifest.model_hash[..12])?;
    let mut summary = Vec::new();
    for f in &frames {
        let path = dir.join(format!("seed{seed}_alpha{:.2}.png", f.alpha));
        save_image(&f.image, &path)?;
        summary.push(serde_json::json!({
            "alpha": f.alpha,
            "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            "displacement_norms": f.displacement_norms,
        }));
    }
    std::fs::write(dir.join("sweep.json"), serde_json::to_vec_pretty(&summary)?)?;
    println!("{}", dir.display());
    Ok(())
}

fn parse_perceptual(spec: &str) -> Result<PerceptualConfig> {
    match spec.split_once(':') {
        None if spec == "stub" => Ok(PerceptualConfig::Stub { seed: 0 }),
        Some(("vgg", path)) => Ok(PerceptualConfig::Vgg {
            checkpoint: PathBuf::from(path),
            resolution: None,
        }),
        _ => Err(usage(format!("unknown perceptual backend `{spec}` (expected stub or vgg:PATH)"))),
    }
}

fn parse_identity(spec: &str) -> Result<IdentityConfig> {
    match spec.split_once(':') {
        None if spec == "stub" => Ok(IdentityConfig::Stub { seed: 0 }),
        Some(("arcface", path)) => Ok(IdentityConfig::Arcface {
            checkpoint: PathBuf::from(path),
        }),
        _ => Err(usage(format!("unknown identity backend `{spec}` (expected stub or arcface:PATH)"))),
    }
}

fn run_evaluate(
    bundle_path: &Path,
    n: usize,
    seeds: Option<&Path>,
    out: &Path,
    perceptual: Option<&str>,
    identity: Option<&str>,
) -> Result<()> {
    require_file(bundle_path, "bundle")?;
    let Some(identity) = identity else {
        return Err(warpstyle::Error::MissingBackend(
            "identity embedding network (pass --identity stub or --identity arcface:PATH)".into(),
        )
        .into());
    };
    let identity = parse_identity(identity)?;
    let device = Device::Cpu;
    let bundle = Bundle::load(bundle_path, &device)?;
    let perceptual = match perceptual {
        Some(s) => parse_perceptual(s)?,
        None => bundle.config().perceptual.clone(),
    };
    let seed_list = match seeds {
        Some(p) => {
            require_file(p, "seed file")?;
            let all = parse_seeds(&std::fs::read_to_string(p)?)?;
            if all.len() < n {
                return Err(usage(format!("{} lists {} seeds, fewer than --n {n}", p.display(), all.len())));
            }
            all[..n].to_vec()
        }
        None => (0..n as u64).collect(),
    };
    let p_net = perceptual.build(DType::F32, &device)?;
    let i_net = identity.build(DType::F32, &device)?;
    let source = bundle.source_generator()?;
    let report = evaluate(&bundle, &source, p_net.as_ref(), i_net.as_ref(), &seed_list)?;
    let dir = run_dir(out, &bundle.manifest.model_hash[..12])?;
    report.write_json(&dir.join("report.json"))?;
    report.write_csv(&dir.join("report.csv"))?;
    println!(
        "LPIPS {:.4}  dir-CC {:.4}  dir-ID {:.4}  ({} samples)",
        report.mean_lpips, report.mean_dir_cc, report.mean_dir_id, report.n_samples
    );
    println!("{}", dir.display());
    Ok(())
}

fn run_visualize(images: &[PathBuf], layers: &[usize], out: &Path, config: Option<&Path>) -> Result<()> {
    let device = Device::Cpu;
    let semantics: SemanticsConfig = load_config(config)?.semantics;
    let levels = layers
        .iter()
        .map(|&l| Level::from_layer(l).map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut loaded = Vec::new();
    for p in images {
        require_file(p, "image")?;
        loaded.push((style_name(p), load_image(p, &device)?));
    }
    let encoder = semantics.build(DType::F32, &device)?;
    let dir = run_dir(out, "pca")?;
    for path in visualize_features(&encoder, &loaded, &levels, &dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            pair,
            config,
            out,
            resume,
        } => train(&pair, config.as_deref(), &out, resume.as_deref()),
        Command::Stylize {
            bundle,
            image,
            seed,
            alpha,
            out,
            no_inversion,
            inversion_steps,
        } => run_stylize(&bundle, image.as_deref(), seed, alpha, &out, no_inversion, inversion_steps),
        Command::Sweep { bundle, seed, steps, out } => run_sweep(&bundle, seed, steps, &out),
        Command::Evaluate {
            bundle,
            n,
            seeds,
            out,
            perceptual,
            identity,
        } => run_evaluate(&bundle, n, seeds.as_deref(), &out, perceptual.as_deref(), identity.as_deref()),
        Command::Visualize {
            images,
            layers,
            out,
            config,
        } => run_visualize(&images, &layers, &out, config.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
