//! `dynpatch`: batch command-line front end.
//!
//! Exit codes: 0 success, 1 check failed (gradcheck), 2 usage or data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynpatch::complexity::{compute_map, Metric};
use dynpatch::model::ModelConfig;
use dynpatch::rng;
use dynpatch::tokenizer::{sample_mask, token_count_report, tokenize_volume, TokenizerConfig};
use dynpatch::train::{
    gradcheck, make_phantom, train_on_volumes, GradFault, GradcheckConfig, PhantomSpec, ToyRun, TrainConfig,
};
use dynpatch::volume::{load_volume_auto, write_raw_volume, Volume4D};
use dynpatch::Real;

#[derive(Parser, Debug)]
#[command(name = "dynpatch", version, about = "Complexity-gated dynamic patch tokenization for 4D volumes")]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run model arithmetic in 64-bit.
    #[arg(long = "f64", global = true)]
    use_f64: bool,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every coarse patch and write a .cmap.json file.
    Complexity(ComplexityArgs),
    /// Tokenize a volume and print the token count report.
    Tokenize(TokenizeArgs),
    /// Train the masked autoencoder (toy profile) or echo the full profile.
    Pretrain(PretrainArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic phantom as a raw .vol file.
    Phantom(PhantomArgs),
}

#[derive(Args, Debug)]
struct ComplexityArgs {
    #[arg(long)]
    input: PathBuf,
    /// variance, entropy, laplacian or mse.
    #[arg(long, default_value = "variance", value_parser = parse_metric)]
    metric: Metric,
    #[arg(long, default_value_t = 8)]
    coarse_edge: usize,
    /// Output path; defaults to the input with a .cmap.json extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TokenizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, default_value_t = 4)]
    base_edge: usize,
    #[arg(long, default_value_t = 2)]
    scales: usize,
    #[arg(long, default_value_t = 1e-3)]
    bg_thresh: f64,
    /// Token layout JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a mask plan drawn with --seed.
    #[arg(long)]
    mask_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    mask_ratio: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Profile {
    Toy,
    Paper,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long, value_enum, default_value_t = Profile::Toy)]
    profile: Profile,
    #[arg(long)]
    epochs: Option<usize>,
    /// Directory of .vol files; phantoms are generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of generated phantoms when --data is absent.
    #[arg(long, default_value_t = 4)]
    phantoms: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    /// Output directory for loss.csv and model.ckpt.
    #[arg(long, default_value = "pretrain_out")]
    out: PathBuf,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
    /// Allow training the full-size profile.
    #[arg(long)]
    force: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum CheckConfig {
    Toy,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = CheckConfig::Toy)]
    config: CheckConfig,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 2)]
    scales: usize,
    #[arg(long)]
    patch_norm: bool,
    #[arg(long, default_value_t = 0.75)]
    ratio: f64,
    /// Check every parameter instead of a subsample.
    #[arg(long)]
    all_params: bool,
    /// Multiply the reconstruction-head gradients by 1.01 before comparing.
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, default_value_t = 64)]
    edge: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 6)]
    blobs: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

type CmdResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("dynpatch: error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Complexity(a) => cmd_complexity(&cli, a),
        Command::Tokenize(a) => cmd_tokenize(&cli, a),
        Command::Pretrain(a) => cmd_pretrain(&cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cli, a),
        Command::Phantom(a) => cmd_phantom(&cli, a),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("dynpatch: error: {msg}");
        ExitCode::from(2)
    })
}

fn load(path: &Path) -> Result<Volume4D, String> {
    load_volume_auto(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmap_path(input: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    input.with_file_name(format!("{stem}.cmap.json"))
}

fn cmd_complexity(cli: &Cli, a: &ComplexityArgs) -> CmdResult {
    let vol = load(&a.input)?;
    let map = compute_map(&vol, a.metric, a.coarse_edge).map_err(|e| e.to_string())?;
    let out = a.out.clone().unwrap_or_else(|| cmap_path(&a.input));
    map.write_json(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    if !cli.quiet {
        eprintln!("wrote {} ({} cells, {})", out.display(), map.scores.len(), a.metric.name());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_tokenize(cli: &Cli, a: &TokenizeArgs) -> CmdResult {
    let vol = load(&a.input)?;
    let cfg = TokenizerConfig {
        tau: a.tau,
        base_edge: a.base_edge,
        num_scales: a.scales,
        bg_thresh: a.bg_thresh,
        ..TokenizerConfig::default()
    };
    let tok = tokenize_volume(&vol, &cfg).map_err(|e| e.to_string())?;
    if let Some(out) = &a.out {
        tok.layout.write_json(out).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    if let Some(out) = &a.mask_out {
        let plan = sample_mask(&tok.layout, a.mask_ratio, cli.seed);
        std::fs::write(out, plan.to_json()).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    println!("{}", token_count_report(&tok.layout).summary_line());
    Ok(ExitCode::SUCCESS)
}

fn load_dir(dir: &Path) -> Result<Vec<Volume4D>, String> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vol"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("{}: no .vol files", dir.display()));
    }
    paths.iter().map(|p| load(p)).collect()
}

fn cmd_pretrain(cli: &Cli, a: &PretrainArgs) -> CmdResult {
    let (mut model, mut train) = match a.profile {
        Profile::Toy => (ModelConfig::toy(), TrainConfig::toy()),
        Profile::Paper => (ModelConfig::full_size(), TrainConfig::default()),
    };
    train.seed = cli.seed;
    if let Some(e) = a.epochs {
        train.epochs = e;
        train.warmup_epochs = train.warmup_epochs.min(e);
    }
    if let Some(lr) = a.lr {
        train.lr = lr;
        train.min_lr = train.min_lr.min(lr);
    }
    if let Some(b) = a.batch {
        train.batch = b;
    }
    if let Some(r) = a.mask_ratio {
        model.mask_ratio = r;
    }
    model.validate().map_err(|e| e.to_string())?;
    train.validate().map_err(|e| e.to_string())?;

    if a.dry_run {
        let num_params = dynpatch::model::ParamLayout::new(&model).total;
        let echo = serde_json::json!({
            "profile": format!("{:?}", a.profile).to_lowercase(),
            "model": model,
            "train": train,
            "num_params": num_params,
        });
        println!("{}", serde_json::to_string_pretty(&echo).expect("config serializes"));
        return Ok(ExitCode::SUCCESS);
    }
    if a.profile == Profile::Paper && !a.force {
        let n = dynpatch::model::ParamLayout::new(&model).total;
        return Err(format!(
            "the paper profile has {n} parameters and is not meant for CPU training; use --dry-run, or --force to run anyway"
        ));
    }

    let vols = match &a.data {
        Some(dir) => load_dir(dir)?,
        None => (0..a.phantoms)
            .map(|i| {
                let spec = PhantomSpec {
                    frames: model.frames,
                    ..PhantomSpec::toy(rng::derive_seed(cli.seed, &[rng::TAG_PHANTOM, i as u64]))
                };
                make_phantom(&spec).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    if cli.use_f64 {
        finish::<f64>(cli, a, train_on_volumes(&model, &train, &vols))
    } else {
        finish::<f32>(cli, a, train_on_volumes(&model, &train, &vols))
    }
}

fn finish<F: Real>(cli: &Cli, a: &PretrainArgs, run: dynpatch::train::Result<ToyRun<F>>) -> CmdResult {
    let run = run.map_err(|e| e.to_string())?;
    run.save(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let first = run.epoch_losses.first().copied().unwrap_or(0.0);
    let last = run.epoch_losses.last().copied().unwrap_or(0.0);
    if !cli.quiet {
        for (e, l) in run.epoch_losses.iter().enumerate() {
            if e % 10 == 0 || e + 1 == run.epoch_losses.len() {
                eprintln!("epoch {e:>4}  loss {l:.6}");
            }
        }
        eprintln!("wrote {}", a.out.display());
    }
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    println!(
        "epochs={} steps={} initial_loss={first:.6} final_loss={last:.6} ratio={ratio:.6}",
        run.epoch_losses.len(),
        run.steps.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> CmdResult {
    let CheckConfig::Toy = a.config;
    let mut cfg = GradcheckConfig::toy(a.scales, a.patch_norm);
    cfg.seed = cli.seed;
    cfg.tolerance = a.tol;
    cfg.model.mask_ratio = a.ratio;
    if a.all_params {
        cfg.max_params = None;
    }
    cfg.model.validate().map_err(|e| e.to_string())?;
    if a.inject_fault {
        let layout = dynpatch::model::ParamLayout::new(&cfg.model);
        cfg.fault = Some(GradFault::all_heads(&layout, 1.01));
    }
    let report = gradcheck(&cfg).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    if !cli.quiet {
        eprintln!(
            "{}: max relative error {:.3e} at {} (tolerance {:.1e})",
            if report.pass { "pass" } else { "FAIL" },
            report.max_rel_err,
            report.worst_param,
            a.tol
        );
    }
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_phantom(cli: &Cli, a: &PhantomArgs) -> CmdResult {
    let spec = PhantomSpec {
        edge: a.edge,
        frames: a.frames,
        n_blobs: a.blobs,
        noise_sigma: a.noise,
        seed: cli.seed,
        ..PhantomSpec::default()
    };
    let vol = make_phantom(&spec).map_err(|e| e.to_string())?;
    write_raw_volume(&vol, &a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    if !cli.quiet {
        eprintln!("wrote {} ({:?})", a.out.display(), vol.dims());
    }
    Ok(ExitCode::SUCCESS)
}
