//! Command-line entry point: data generation, GAN training, AE
//! training, task solving, the Lasso baseline, and evaluation drivers.
//!
//! Exit codes: 0 success, 2 usage, 3 config/shape, 4 numeric/training
//! failure. Every command writes into a fresh output directory via a
//! temp-dir-then-rename scheme; on error no partial outputs remain.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use ge::autoenc::{augment_dataset, encode, train_ae, AeConfig};
use ge::began::{history_csv, sample_latent, train_began, BeganConfig};
use ge::data::{
    gen_blobs_dataset, load_checkpoint, load_image_dir, load_png, save_checkpoint, save_png,
    ImageSet,
};
use ge::error::GeError;
use ge::eval::{
    compare_methods, comparison_grid, error_decomposition, measurement_rate, sweep_measurements,
    MethodSpec, SweepNetConfig,
};
use ge::imaging::{
    apply_noise, bicubic_upsample, downsample, gaussian_blur, mask_apply, mask_from_png,
    rect_mask, AdjustmentOp,
};
use ge::lasso::{build_dct_dictionary, lasso_solve, LassoConfig};
use ge::nn::{
    build_decoder, build_discriminator, build_encoder, build_generator, extract_encoder,
    EncoderVariant, Network,
};
use ge::solver::{gaussian_sensing_matrix, solve_ga, solve_ge, SolveConfig};
use ge::tensor::{matmul_raw, Tape, Tensor};
use ge::Result;

#[derive(Parser)]
#[command(name = "ge", version, about = "Generative-encoder toolkit for inverse imaging")]
struct Cli {
    /// TOML file with per-command default values ([gen-data], [solve],
    /// [eval.compare], ...); command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image/per-restart parallelism (0 = all
    /// cores). Results are independent of this value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blobs dataset of PNGs
    GenData(GenDataArgs),
    /// Pre-train a BEGAN generator/discriminator pair
    TrainGan(TrainGanArgs),
    /// Pre-train a convolutional autoencoder (or extract the
    /// discriminator's encoder with --variant ge0)
    TrainAe(TrainAeArgs),
    /// Recover an image from a degraded observation by latent-space
    /// optimization
    Solve(SolveArgs),
    /// Sparse-recovery baseline over a cosine dictionary
    BaselineLasso(LassoArgs),
    /// Evaluation drivers (method comparison, error decomposition,
    /// measurement sweep); configured through --config
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    max_blobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainGanArgs {
    /// Directory of training PNGs
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Proportional gain for the BEGAN balance variable k
    #[arg(long)]
    lambda_k: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Generator conv layers
    #[arg(long)]
    g_layers: Option<usize>,
    /// Generator base filter count
    #[arg(long)]
    g_filters: Option<usize>,
    /// Discriminator encoder depth
    #[arg(long = "d")]
    d_depth: Option<usize>,
    /// Discriminator base filter count
    #[arg(long = "f")]
    d_filters: Option<usize>,
    /// Discriminator bottleneck width
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Discriminator learning rate (overrides --lr for D only)
    #[arg(long)]
    d_lr: Option<f64>,
    /// Generator learning rate (overrides --lr for G only)
    #[arg(long)]
    g_lr: Option<f64>,
}

#[derive(Args)]
struct TrainAeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Generator checkpoint used to draw fake training images
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Discriminator checkpoint (required for --variant ge0)
    #[arg(long)]
    discriminator: Option<PathBuf>,
    #[arg(long)]
    fake_ratio: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = ["ge0", "ge1"])]
    variant: Option<String>,
    #[arg(long = "d")]
    d_depth: Option<usize>,
    #[arg(long = "f")]
    f_filters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Total images after mixing real and generated
    #[arg(long)]
    n_total: Option<usize>,
    /// Decoder conv layers
    #[arg(long)]
    dec_layers: Option<usize>,
    /// Decoder base filter count
    #[arg(long)]
    dec_filters: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_parser = ["cs", "denoise", "deblur", "superres", "inpaint"])]
    task: String,
    /// Input image (clean unless --no-degrade)
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    generator: PathBuf,
    /// Encoder checkpoint; required unless --sensing gaussian:m
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Noise standard deviation for --task denoise
    #[arg(long)]
    sigma: Option<f64>,
    /// Blur kernel standard deviation for --task deblur
    #[arg(long)]
    blur_sigma: Option<f64>,
    /// Downsampling factor for --task superres
    #[arg(long)]
    factor: Option<usize>,
    /// Inpainting mask rectangle as x0,y0,width,height
    #[arg(long, value_parser = parse_rect)]
    mask_rect: Option<Rect>,
    /// Inpainting mask PNG (white = keep, black = masked)
    #[arg(long)]
    mask_png: Option<PathBuf>,
    /// Measurement operator: "encoder" or "gaussian:<m>"
    #[arg(long, value_parser = parse_sensing)]
    sensing: Option<Sensing>,
    /// Treat the input as already degraded
    #[arg(long)]
    no_degrade: bool,
}

#[derive(Clone, Debug)]
struct Rect {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn parse_rect(s: &str) -> std::result::Result<Rect, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [x0, y0, w, h] = parts[..] else {
        return Err(format!("expected x0,y0,width,height, got '{s}'"));
    };
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("'{v}' is not a non-negative integer"))
    };
    Ok(Rect {
        x0: parse(x0)?,
        y0: parse(y0)?,
        w: parse(w)?,
        h: parse(h)?,
    })
}

#[derive(Clone, Debug)]
enum Sensing {
    Encoder,
    Gaussian(usize),
}

fn parse_sensing(s: &str) -> std::result::Result<Sensing, String> {
    if s == "encoder" {
        return Ok(Sensing::Encoder);
    }
    if let Some(m) = s.strip_prefix("gaussian:") {
        return m
            .parse::<usize>()
            .map(Sensing::Gaussian)
            .map_err(|_| format!("'{m}' is not a measurement count"));
    }
    Err(format!("expected 'encoder' or 'gaussian:<m>', got '{s}'"))
}

#[derive(Args)]
struct LassoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    overcomplete: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    fista: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    mode: EvalMode,
}

#[derive(Subcommand)]
enum EvalMode {
    /// Per-method reconstruction MSE over the test split
    Compare {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fake-vs-real recovery error decomposition
    Decompose {
        #[arg(long)]
        out: PathBuf,
    },
    /// Median MSE across measurement budgets (trains one AE per budget)
    Sweep {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parsed TOML defaults file; absent keys fall through to built-ins.
struct FileConfig(toml::Value);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let value = match path {
            None => toml::Value::Table(Default::default()),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                text.parse::<toml::Value>()
                    .map_err(|e| GeError::Config(format!("{}: {e}", p.display())))?
            }
        };
        Ok(FileConfig(value))
    }

    fn get(&self, section: &str, key: &str) -> Option<&toml::Value> {
        let mut node = &self.0;
        for part in section.split('.') {
            if part.is_empty() {
                continue;
            }
            node = node.get(part)?;
        }
        node.get(key)
    }

    fn usize(&self, section: &str, key: &str) -> Option<usize> {
        self.get(section, key)?.as_integer().map(|v| v as usize)
    }

    fn u64(&self, section: &str, key: &str) -> Option<u64> {
        self.get(section, key)?.as_integer().map(|v| v as u64)
    }

    fn f64(&self, section: &str, key: &str) -> Option<f64> {
        let v = self.get(section, key)?;
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
    }

    fn string(&self, section: &str, key: &str) -> Option<String> {
        self.get(section, key)?.as_str().map(|s| s.to_string())
    }

    fn require_str(&self, section: &str, key: &str) -> Result<String> {
        self.string(section, key).ok_or_else(|| {
            GeError::Config(format!("missing [{section}] {key} in config file"))
        })
    }

    fn usize_list(&self, section: &str, key: &str) -> Option<Vec<usize>> {
        self.get(section, key)?
            .as_array()?
            .iter()
            .map(|v| v.as_integer().map(|i| i as usize))
            .collect()
    }

    fn string_list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.get(section, key)?
            .as_array()?
            .iter()
            .map(|v| v.as_str().map(|s| s.to_string()))
            .collect()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: cannot configure {} worker threads: {e}", cli.jobs);
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                GeError::Numeric(_)
                | GeError::Training { .. }
                | GeError::Solver { .. } => 4,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(args) => cmd_gen_data(args, &cfg),
        Command::TrainGan(args) => cmd_train_gan(args, &cfg),
        Command::TrainAe(args) => cmd_train_ae(args, &cfg),
        Command::Solve(args) => cmd_solve(args, &cfg),
        Command::BaselineLasso(args) => cmd_lasso(args, &cfg),
        Command::Eval(args) => match &args.mode {
            EvalMode::Compare { out } => cmd_eval_compare(out, &cfg),
            EvalMode::Decompose { out } => cmd_eval_decompose(out, &cfg),
            EvalMode::Sweep { out } => cmd_eval_sweep(out, &cfg),
        },
    }
}

/// Run `body` against a temp directory, write run.json with the
/// effective configuration, then rename to `out`. `out` must not
/// already exist; on error the temp dir is removed.
fn with_outdir<F>(out: &Path, command: &str, body: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<Value>,
{
    if out.exists() {
        return Err(GeError::Config(format!(
            "output directory {} already exists",
            out.display()
        )));
    }
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(p) = parent {
        fs::create_dir_all(p)?;
    }
    let name = out
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| GeError::Config(format!("invalid output path {}", out.display())))?;
    let tmp = parent
        .unwrap_or(Path::new("."))
        .join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let start = Instant::now();
    let result = body(&tmp);
    match result {
        Ok(effective) => {
            let run = json!({
                "command": command,
                "effective": effective,
                "wall_ms": start.elapsed().as_secs_f64() * 1e3,
            });
            fs::write(tmp.join("run.json"), serde_json::to_string_pretty(&run)?)?;
            fs::rename(&tmp, out)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn cmd_gen_data(args: &GenDataArgs, cfg: &FileConfig) -> Result<()> {
    let n = args.n.or(cfg.usize("gen-data", "n")).unwrap_or(1000);
    let size = args.size.or(cfg.usize("gen-data", "size")).unwrap_or(16);
    let max_blobs = args
        .max_blobs
        .or(cfg.usize("gen-data", "max_blobs"))
        .unwrap_or(3);
    let seed = args.seed.or(cfg.u64("gen-data", "seed")).unwrap_or(0);
    if n == 0 {
        return Err(GeError::Config("--n must be >= 1".into()));
    }
    with_outdir(&args.out, "gen-data", |dir| {
        let set = gen_blobs_dataset(n, size, max_blobs, seed);
        for (i, img) in set.images.iter().enumerate() {
            save_png(img, &dir.join(format!("img_{i:05}.png")))?;
        }
        let meta = json!({
            "n": n, "size": size, "max_blobs": max_blobs, "seed": seed,
            "source": "blobs",
        });
        fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(meta)
    })
}

fn image_shape(set: &ImageSet) -> Result<(usize, usize, usize)> {
    match set.shape() {
        Some([c, h, w]) => Ok((*c, *h, *w)),
        _ => Err(GeError::Shape("dataset images must be C,H,W".into())),
    }
}

fn cmd_train_gan(args: &TrainGanArgs, cfg: &FileConfig) -> Result<()> {
    let sec = "train-gan";
    let size = args.size.or(cfg.usize(sec, "size")).unwrap_or(16);
    let channels = args.channels.or(cfg.usize(sec, "channels")).unwrap_or(1);
    let defaults = BeganConfig::default();
    let config = BeganConfig {
        latent_dim: args
            .latent_dim
            .or(cfg.usize(sec, "latent_dim"))
            .unwrap_or(defaults.latent_dim),
        gamma: args.gamma.or(cfg.f64(sec, "gamma")).unwrap_or(defaults.gamma),
        lambda_k: args
            .lambda_k
            .or(cfg.f64(sec, "lambda_k"))
            .unwrap_or(defaults.lambda_k),
        k0: cfg.f64(sec, "k0").unwrap_or(defaults.k0),
        steps: args.steps.or(cfg.usize(sec, "steps")).unwrap_or(defaults.steps),
        batch_size: args
            .batch
            .or(cfg.usize(sec, "batch"))
            .unwrap_or(defaults.batch_size),
        d_learning_rate: args
            .d_lr
            .or(cfg.f64(sec, "d_lr"))
            .or(args.lr)
            .or(cfg.f64(sec, "lr"))
            .unwrap_or(defaults.d_learning_rate),
        g_learning_rate: args
            .g_lr
            .or(cfg.f64(sec, "g_lr"))
            .or(args.lr)
            .or(cfg.f64(sec, "lr"))
            .unwrap_or(defaults.g_learning_rate),
        seed: args.seed.or(cfg.u64(sec, "seed")).unwrap_or(defaults.seed),
    };
    let g_layers = args.g_layers.or(cfg.usize(sec, "g_layers")).unwrap_or(4);
    let g_filters = args.g_filters.or(cfg.usize(sec, "g_filters")).unwrap_or(16);
    let d_depth = args.d_depth.or(cfg.usize(sec, "d")).unwrap_or(2);
    let d_filters = args.d_filters.or(cfg.usize(sec, "f")).unwrap_or(8);
    let m = args.m.or(cfg.usize(sec, "m")).unwrap_or(8);

    with_outdir(&args.out, "train-gan", |dir| {
        let dataset = load_image_dir(&args.data, size, channels)?;
        let shape = image_shape(&dataset)?;
        let g = build_generator(config.latent_dim, g_layers, g_filters, shape, config.seed)?;
        let d = build_discriminator(
            d_depth,
            d_filters,
            m,
            g_layers,
            g_filters,
            shape,
            config.seed ^ 0x5eed,
        )?;
        let (g, d, history) = train_began(&dataset, g, d, &config)?;
        let meta = json!({"role": "generator", "seed": config.seed});
        save_checkpoint(&g, &dir.join("generator.gec"), meta)?;
        save_checkpoint(
            &d,
            &dir.join("discriminator.gec"),
            json!({"role": "discriminator", "seed": config.seed}),
        )?;
        fs::write(dir.join("history.csv"), history_csv(&history))?;
        let samples_dir = dir.join("samples");
        fs::create_dir_all(&samples_dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5a);
        let zs = sample_latent(8, config.latent_dim, &mut rng);
        for i in 0..8 {
            let z = Tensor::new(
                vec![config.latent_dim],
                zs.data[i * config.latent_dim..(i + 1) * config.latent_dim].to_vec(),
            )?;
            let img = g.forward(&mut Tape::frozen(), &z)?;
            save_png(&img, &samples_dir.join(format!("sample_{i}.png")))?;
        }
        Ok(json!({
            "data": args.data.display().to_string(),
            "size": size, "channels": channels,
            "began": serde_json::to_value(&config)?,
            "g_layers": g_layers, "g_filters": g_filters,
            "d": d_depth, "f": d_filters, "m": m,
        }))
    })
}

fn cmd_train_ae(args: &TrainAeArgs, cfg: &FileConfig) -> Result<()> {
    let sec = "train-ae";
    let variant = args
        .variant
        .clone()
        .or(cfg.string(sec, "variant"))
        .unwrap_or_else(|| "ge1".into());
    let seed = args.seed.or(cfg.u64(sec, "seed")).unwrap_or(0);

    if variant == "ge0" {
        let disc_path = args
            .discriminator
            .clone()
            .or(cfg.string(sec, "discriminator").map(PathBuf::from))
            .ok_or_else(|| {
                GeError::Config("--variant ge0 requires --discriminator".into())
            })?;
        return with_outdir(&args.out, "train-ae", |dir| {
            let d = load_checkpoint(&disc_path)?;
            let encoder = extract_encoder(&d)?;
            save_checkpoint(
                &encoder,
                &dir.join("encoder.gec"),
                json!({"role": "encoder", "variant": "ge0"}),
            )?;
            Ok(json!({
                "variant": "ge0",
                "discriminator": disc_path.display().to_string(),
            }))
        });
    }

    let gen_path = args
        .generator
        .clone()
        .or(cfg.string(sec, "generator").map(PathBuf::from))
        .ok_or_else(|| GeError::Config("--variant ge1 requires --generator".into()))?;
    let size = args.size.or(cfg.usize(sec, "size")).unwrap_or(16);
    let channels = args.channels.or(cfg.usize(sec, "channels")).unwrap_or(1);
    let fake_ratio = args
        .fake_ratio
        .or(cfg.f64(sec, "fake_ratio"))
        .unwrap_or(0.5);
    let m = args.m.or(cfg.usize(sec, "m")).unwrap_or(8);
    let d_depth = args.d_depth.or(cfg.usize(sec, "d")).unwrap_or(2);
    let f_filters = args.f_filters.or(cfg.usize(sec, "f")).unwrap_or(8);
    let dec_layers = args.dec_layers.or(cfg.usize(sec, "dec_layers")).unwrap_or(4);
    let dec_filters = args
        .dec_filters
        .or(cfg.usize(sec, "dec_filters"))
        .unwrap_or(16);
    let defaults = AeConfig::default();
    let config = AeConfig {
        fake_ratio,
        steps: args.steps.or(cfg.usize(sec, "steps")).unwrap_or(defaults.steps),
        batch_size: args
            .batch
            .or(cfg.usize(sec, "batch"))
            .unwrap_or(defaults.batch_size),
        learning_rate: args
            .lr
            .or(cfg.f64(sec, "lr"))
            .unwrap_or(defaults.learning_rate),
        seed,
    };

    with_outdir(&args.out, "train-ae", |dir| {
        let real = load_image_dir(&args.data, size, channels)?;
        let shape = image_shape(&real)?;
        let g = load_checkpoint(&gen_path)?;
        if g.output_shape()? != vec![shape.0, shape.1, shape.2] {
            return Err(GeError::Shape(format!(
                "generator produces {:?}, dataset images are {:?}",
                g.output_shape()?,
                shape
            )));
        }
        let n_total = args
            .n_total
            .or(cfg.usize(sec, "n_total"))
            .unwrap_or(real.images.len());
        let mixed = augment_dataset(&real, &g, fake_ratio, n_total, seed ^ 0xae)?;
        let encoder = build_encoder(EncoderVariant::Ge1, d_depth, f_filters, m, shape, seed)?;
        let decoder = build_decoder(m, dec_layers, dec_filters, shape, seed ^ 1)?;
        let (encoder, decoder, losses) = train_ae(&mixed, encoder, decoder, &config)?;
        save_checkpoint(
            &encoder,
            &dir.join("encoder.gec"),
            json!({"role": "encoder", "variant": "ge1", "d": d_depth, "f": f_filters, "m": m}),
        )?;
        save_checkpoint(
            &decoder,
            &dir.join("decoder.gec"),
            json!({"role": "decoder", "m": m}),
        )?;
        let mut csv = String::from("step,loss\n");
        for (i, loss) in losses.iter().enumerate() {
            csv.push_str(&format!("{i},{loss:.17e}\n"));
        }
        fs::write(dir.join("history.csv"), csv)?;
        Ok(json!({
            "variant": "ge1",
            "data": args.data.display().to_string(),
            "generator": gen_path.display().to_string(),
            "size": size, "channels": channels, "n_total": n_total,
            "d": d_depth, "f": f_filters, "m": m,
            "dec_layers": dec_layers, "dec_filters": dec_filters,
            "ae": serde_json::to_value(&config)?,
        }))
    })
}

fn cmd_solve(args: &SolveArgs, cfg: &FileConfig) -> Result<()> {
    let sec = "solve";
    let solve = SolveConfig {
        lambda: args.lambda.or(cfg.f64(sec, "lambda")).unwrap_or(1e-3),
        iterations: args.iters.or(cfg.usize(sec, "iters")).unwrap_or(500),
        restarts: args.restarts.or(cfg.usize(sec, "restarts")).unwrap_or(2),
        learning_rate: args.lr.or(cfg.f64(sec, "lr")).unwrap_or(0.1),
        seed: args.seed.or(cfg.u64(sec, "seed")).unwrap_or(0),
    };
    let sigma = args.sigma.or(cfg.f64(sec, "sigma")).unwrap_or(0.4);
    let blur_sigma = args.blur_sigma.or(cfg.f64(sec, "blur_sigma")).unwrap_or(1.0);
    let factor = args.factor.or(cfg.usize(sec, "factor")).unwrap_or(4);
    let sensing = args.sensing.clone().unwrap_or(Sensing::Encoder);

    let generator = load_checkpoint(&args.generator)?;
    let out_shape = generator.output_shape()?;
    let [c, h, w] = out_shape[..] else {
        return Err(GeError::Shape("generator must produce a C,H,W image".into()));
    };

    // checkpoint compatibility before any optimization
    let encoder = match (&sensing, &args.encoder) {
        (Sensing::Gaussian(_), _) => None,
        (Sensing::Encoder, Some(path)) => {
            let en = load_checkpoint(path)?;
            if en.spec.input_shape != out_shape {
                return Err(GeError::Config(format!(
                    "encoder expects {:?}, generator produces {out_shape:?}",
                    en.spec.input_shape
                )));
            }
            Some(en)
        }
        (Sensing::Encoder, None) => {
            return Err(GeError::Config(
                "--encoder is required unless --sensing gaussian:<m>".into(),
            ))
        }
    };

    with_outdir(&args.out, "solve", |dir| {
        // degraded observation x_dagger at generator resolution
        let (x_clean, x_dagger, mask) = prepare_input(args, (c, h, w), sigma, blur_sigma, factor, solve.seed)?;
        let adjustment = match &mask {
            Some(m) => AdjustmentOp::Mask { mask: m.clone() },
            None => AdjustmentOp::Identity,
        };
        let result = match &sensing {
            Sensing::Encoder => {
                let en = encoder.as_ref().expect("checked above");
                let m = encode(en, &x_dagger)?;
                solve_ge(&m, en, &generator, &adjustment, &solve)?
            }
            Sensing::Gaussian(m) => {
                let n = c * h * w;
                let a = gaussian_sensing_matrix(*m, n, solve.seed ^ 0x6a);
                let y = Tensor::new(vec![*m], matmul_raw(&a.data, &x_dagger.data, *m, n, 1))?;
                solve_ga(&y, &a, &generator, &solve)?
            }
        };
        save_png(&x_dagger, &dir.join("x_dagger.png"))?;
        save_png(&result.x_hat, &dir.join("x_hat.png"))?;
        let mse_vs_original = x_clean
            .as_ref()
            .map(|x| ge::eval::image_mse(&result.x_hat, x))
            .transpose()?;
        let report = json!({
            "task": args.task,
            "objective_final": result.objective_final,
            "winning_restart": result.winning_restart,
            "objective_trace": result.objective_trace,
            "z_star": result.z_star.data,
            "mse_vs_original": mse_vs_original,
            "mse_vs_degraded": ge::eval::image_mse(&result.x_hat, &x_dagger)?,
        });
        fs::write(dir.join("solve.json"), serde_json::to_string_pretty(&report)?)?;
        Ok(json!({
            "task": args.task,
            "input": args.input.display().to_string(),
            "generator": args.generator.display().to_string(),
            "encoder": args.encoder.as_ref().map(|p| p.display().to_string()),
            "solve": serde_json::to_value(&solve)?,
            "sigma": sigma, "blur_sigma": blur_sigma, "factor": factor,
            "no_degrade": args.no_degrade,
            "sensing": match &sensing {
                Sensing::Encoder => "encoder".to_string(),
                Sensing::Gaussian(m) => format!("gaussian:{m}"),
            },
        }))
    })
}

/// Load the input and produce (clean original if known, degraded
/// observation, inpainting mask if any), all at the generator's
/// resolution.
fn prepare_input(
    args: &SolveArgs,
    shape: (usize, usize, usize),
    sigma: f64,
    blur_sigma: f64,
    factor: usize,
    seed: u64,
) -> Result<(Option<Tensor>, Tensor, Option<Tensor>)> {
    let (c, h, w) = shape;
    let loaded = load_png(&args.input, c)?;
    let mask = match (&args.mask_rect, &args.mask_png) {
        (Some(r), None) => Some(rect_mask(shape, r.x0, r.y0, r.w, r.h)?),
        (None, Some(p)) => Some(mask_from_png(p, shape)?),
        (None, None) if args.task == "inpaint" => {
            return Err(GeError::Config(
                "--task inpaint requires --mask-rect or --mask-png".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(GeError::Config(
                "--mask-rect and --mask-png are mutually exclusive".into(),
            ))
        }
        _ => None,
    };
    if args.task != "inpaint" && mask.is_some() {
        return Err(GeError::Config(
            "mask flags only apply to --task inpaint".into(),
        ));
    }

    if args.no_degrade {
        // input is already the observation
        let x_dagger = if args.task == "superres" && loaded.shape == vec![c, h / factor, w / factor]
        {
            bicubic_upsample(&loaded, factor)?
        } else if loaded.shape == vec![c, h, w] {
            loaded
        } else {
            return Err(GeError::Shape(format!(
                "input shape {:?} incompatible with generator output {:?}",
                loaded.shape,
                vec![c, h, w]
            )));
        };
        return Ok((None, x_dagger, mask));
    }

    if loaded.shape != vec![c, h, w] {
        return Err(GeError::Shape(format!(
            "input shape {:?} does not match generator output {:?}",
            loaded.shape,
            vec![c, h, w]
        )));
    }
    let x_dagger = match args.task.as_str() {
        "cs" => loaded.clone(),
        "denoise" => apply_noise(&loaded, sigma, seed ^ 0xd0)?,
        "deblur" => {
            let ksize = 2 * (2.0 * blur_sigma).ceil().max(1.0) as usize + 1;
            gaussian_blur(&loaded, blur_sigma, ksize)?
        }
        "superres" => bicubic_upsample(&downsample(&loaded, factor)?, factor)?,
        "inpaint" => mask_apply(&loaded, mask.as_ref().expect("checked above"))?,
        other => return Err(GeError::Config(format!("unknown task {other}"))),
    };
    Ok((Some(loaded), x_dagger, mask))
}

fn cmd_lasso(args: &LassoArgs, cfg: &FileConfig) -> Result<()> {
    let sec = "baseline-lasso";
    let m = args.m.or(cfg.usize(sec, "m")).unwrap_or(64);
    let alpha = args.alpha.or(cfg.f64(sec, "alpha")).unwrap_or(0.1);
    let overcomplete = args
        .overcomplete
        .or(cfg.usize(sec, "overcomplete"))
        .unwrap_or(2);
    let iterations = args
        .iterations
        .or(cfg.usize(sec, "iterations"))
        .unwrap_or(500);
    let seed = args.seed.or(cfg.u64(sec, "seed")).unwrap_or(0);

    with_outdir(&args.out, "baseline-lasso", |dir| {
        let x = load_png(&args.input, 1)?;
        let [_, h, w] = x.shape[..] else {
            return Err(GeError::Shape("input must be a grayscale image".into()));
        };
        let n = h * w;
        let dict = build_dct_dictionary(h, w, overcomplete)?;
        let p = dict.psi.shape[1];
        let a_sense = gaussian_sensing_matrix(m, n, seed);
        let composed = Tensor::new(
            vec![m, p],
            matmul_raw(&a_sense.data, &dict.psi.data, m, n, p),
        )?;
        let b = Tensor::new(vec![m], matmul_raw(&a_sense.data, &x.data, m, n, 1))?;
        let config = LassoConfig {
            alpha,
            iterations,
            step: None,
            fista: args.fista,
        };
        let (beta, flat) = lasso_solve(&composed, &b, &dict, &config)?;
        let x_hat = Tensor::new(x.shape.clone(), flat.data)?;
        save_png(&x_hat, &dir.join("x_hat.png"))?;
        let report = json!({
            "m": m, "alpha": alpha, "overcomplete": overcomplete,
            "iterations": iterations, "fista": args.fista,
            "nonzeros": beta.data.iter().filter(|v| **v != 0.0).count(),
            "mse_vs_input": ge::eval::image_mse(&x_hat, &x)?,
            "measurement_rate": measurement_rate(m, (1, h, w)),
        });
        fs::write(dir.join("solve.json"), serde_json::to_string_pretty(&report)?)?;
        Ok(json!({
            "input": args.input.display().to_string(),
            "m": m, "alpha": alpha, "overcomplete": overcomplete,
            "iterations": iterations, "seed": seed, "fista": args.fista,
        }))
    })
}

/// Shared eval plumbing: dataset test split and checkpoints from the
/// config file.
struct EvalContext {
    test: Vec<Tensor>,
    train: ImageSet,
    generator: Network,
    solve: SolveConfig,
    seed: u64,
}

fn eval_context(cfg: &FileConfig) -> Result<EvalContext> {
    let data_path = PathBuf::from(cfg.require_str("data", "path")?);
    let size = cfg.usize("data", "size").unwrap_or(16);
    let channels = cfg.usize("data", "channels").unwrap_or(1);
    let n_test = cfg.usize("data", "n_test").unwrap_or(20);
    let seed = cfg.u64("", "seed").unwrap_or(0);
    let set = load_image_dir(&data_path, size, channels)?;
    let (train, _, test) = set.split(seed);
    if test.images.len() < n_test {
        return Err(GeError::Config(format!(
            "test split has {} images, need n_test = {n_test}",
            test.images.len()
        )));
    }
    let generator = load_checkpoint(Path::new(&cfg.require_str("checkpoints", "generator")?))?;
    let solve = SolveConfig {
        lambda: cfg.f64("solve", "lambda").unwrap_or(1e-3),
        iterations: cfg.usize("solve", "iters").unwrap_or(500),
        restarts: cfg.usize("solve", "restarts").unwrap_or(2),
        learning_rate: cfg.f64("solve", "lr").unwrap_or(0.1),
        seed,
    };
    Ok(EvalContext {
        test: test.images[..n_test].to_vec(),
        train,
        generator,
        solve,
        seed,
    })
}

fn cmd_eval_compare(out: &Path, cfg: &FileConfig) -> Result<()> {
    let ctx = eval_context(cfg)?;
    let method_names = cfg
        .string_list("compare", "methods")
        .unwrap_or_else(|| vec!["ge1".into(), "ga".into(), "lasso".into()]);
    let encoder_ge1 = cfg
        .string("checkpoints", "encoder_ge1")
        .map(|p| load_checkpoint(Path::new(&p)))
        .transpose()?;
    let encoder_ge0 = cfg
        .string("checkpoints", "encoder_ge0")
        .map(|p| load_checkpoint(Path::new(&p)))
        .transpose()?;

    let mut methods = Vec::new();
    for name in &method_names {
        match name.as_str() {
            "ge1" => {
                let en = encoder_ge1.as_ref().ok_or_else(|| {
                    GeError::Config("method ge1 needs [checkpoints] encoder_ge1".into())
                })?;
                methods.push(MethodSpec::Ge {
                    label: "ge1".into(),
                    encoder: en,
                });
            }
            "ge0" => {
                let en = encoder_ge0.as_ref().ok_or_else(|| {
                    GeError::Config("method ge0 needs [checkpoints] encoder_ge0".into())
                })?;
                methods.push(MethodSpec::Ge {
                    label: "ge0".into(),
                    encoder: en,
                });
            }
            "ga" => {
                let m = cfg.usize("compare", "ga_m").unwrap_or(8);
                methods.push(MethodSpec::Ga { m });
            }
            "lasso" => methods.push(MethodSpec::Lasso {
                m: cfg.usize("compare", "lasso_m").unwrap_or(32),
                alpha: cfg.f64("compare", "lasso_alpha").unwrap_or(0.1),
                overcomplete: cfg.usize("compare", "lasso_overcomplete").unwrap_or(2),
                iterations: cfg.usize("compare", "lasso_iterations").unwrap_or(500),
            }),
            other => {
                return Err(GeError::Config(format!(
                    "unknown method '{other}' (expected ge0, ge1, ga, lasso)"
                )))
            }
        }
    }

    with_outdir(out, "eval-compare", |dir| {
        let (report, recovered) =
            compare_methods(&ctx.test, &ctx.generator, &methods, &ctx.solve)?;
        fs::write(dir.join("report.csv"), report.csv())?;
        fs::write(dir.join("report_deterministic.csv"), report.csv_deterministic())?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        let mut grid_rows = vec![("original".to_string(), ctx.test.clone())];
        for (method, images) in methods.iter().zip(recovered) {
            grid_rows.push((method.label(), images));
        }
        save_png(&comparison_grid(&grid_rows)?, &dir.join("grid.png"))?;
        Ok(json!({
            "methods": method_names,
            "n_test": ctx.test.len(),
            "solve": serde_json::to_value(&ctx.solve)?,
            "seed": ctx.seed,
            "config_hash": report.config_hash,
        }))
    })
}

fn cmd_eval_decompose(out: &Path, cfg: &FileConfig) -> Result<()> {
    let ctx = eval_context(cfg)?;
    let n_fake = cfg.usize("decompose", "n_fake").unwrap_or(20);
    let n_real = cfg.usize("decompose", "n_real").unwrap_or(ctx.test.len());
    if n_real > ctx.test.len() {
        return Err(GeError::Config(format!(
            "n_real = {n_real} exceeds test split size {}",
            ctx.test.len()
        )));
    }
    let encoder = load_checkpoint(Path::new(&cfg.require_str("checkpoints", "encoder_ge1")?))?;

    with_outdir(out, "eval-decompose", |dir| {
        let (fake_mse, real_mse, ratio) = error_decomposition(
            &ctx.generator,
            &encoder,
            &ctx.solve,
            &ctx.test[..n_real],
            n_fake,
            ctx.seed ^ 0xde,
        )?;
        let report = json!({
            "fake_mse": fake_mse,
            "real_mse": real_mse,
            "ratio": ratio,
            "n_fake": n_fake,
            "n_real": n_real,
        });
        fs::write(dir.join("decompose.json"), serde_json::to_string_pretty(&report)?)?;
        fs::write(
            dir.join("decompose.csv"),
            format!("metric,value\nfake_mse,{fake_mse:.17e}\nreal_mse,{real_mse:.17e}\nratio,{ratio:.17e}\n"),
        )?;
        Ok(json!({
            "n_fake": n_fake, "n_real": n_real,
            "solve": serde_json::to_value(&ctx.solve)?,
            "seed": ctx.seed,
        }))
    })
}

fn cmd_eval_sweep(out: &Path, cfg: &FileConfig) -> Result<()> {
    let ctx = eval_context(cfg)?;
    let budgets = cfg
        .usize_list("sweep", "budgets")
        .unwrap_or_else(|| vec![4, 8, 16]);
    let nets = SweepNetConfig {
        d: cfg.usize("sweep", "d").unwrap_or(2),
        f: cfg.usize("sweep", "f").unwrap_or(8),
        dec_layers: cfg.usize("sweep", "dec_layers").unwrap_or(4),
        dec_filters: cfg.usize("sweep", "dec_filters").unwrap_or(16),
        seed: ctx.seed ^ 0x5e,
    };
    let ae = AeConfig {
        fake_ratio: cfg.f64("sweep", "fake_ratio").unwrap_or(0.5),
        steps: cfg.usize("sweep", "ae_steps").unwrap_or(2000),
        batch_size: cfg.usize("sweep", "ae_batch").unwrap_or(8),
        learning_rate: cfg.f64("sweep", "ae_lr").unwrap_or(1e-4),
        seed: ctx.seed,
    };

    with_outdir(out, "eval-sweep", |dir| {
        // mix in generated images once, shared across budgets
        let mixed = augment_dataset(
            &ctx.train,
            &ctx.generator,
            ae.fake_ratio,
            ctx.train.images.len(),
            ctx.seed ^ 0xae,
        )?;
        let result = sweep_measurements(
            &budgets,
            &mixed,
            &ctx.test,
            &ctx.generator,
            &nets,
            &ae,
            &ctx.solve,
        )?;
        fs::write(dir.join("sweep.csv"), &result.csv)?;
        fs::write(dir.join("sweep.svg"), &result.svg)?;
        fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&result)?)?;
        Ok(json!({
            "budgets": budgets,
            "nets": serde_json::to_value(&nets)?,
            "ae": serde_json::to_value(&ae)?,
            "solve": serde_json::to_value(&ctx.solve)?,
            "seed": ctx.seed,
        }))
    })
}
