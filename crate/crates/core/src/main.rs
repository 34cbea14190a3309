use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dgda::bounds::{theorem1_bound, theorem3_bound, wasserstein1_exact, BoundInputs, MAX_W1_SAMPLES};
use dgda::config::{parse_overrides, read_config_file, TrainConfig};
use dgda::format::{read_features, write_features};
use dgda::parallel::Execution;
use dgda::synth::{generate_pair, inject_label_noise, SyntheticConfig};
use dgda::train::{evaluate, history_csv, load_datasets, load_model, save_model, sweep, sweep_csv};
use dgda::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "dgda", version, about = "Dual-branch graph domain adaptation for conversational emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair as DGDF files.
    Generate(GenerateArgs),
    /// Train a model and write per-epoch metrics as CSV.
    Train(TrainArgs),
    /// Evaluate a saved model on a DGDF file.
    Evaluate(EvaluateArgs),
    /// Evaluate the adaptation and noisy-label risk bounds.
    Bound(BoundArgs),
    /// Train over a grid of seeds and noise rates.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// key=value file with generator settings (`classes`, `d_t`, `mean_shift`, ..., `noise_rate`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Settings given as --key=value, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metrics CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to save the trained model.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Run evaluation sequentially.
    #[arg(long)]
    sequential: bool,
    /// Any training setting as --key=value, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 0.0)]
    source_risk: f64,
    #[arg(long, default_value_t = 0.0)]
    target_risk: f64,
    #[arg(long, default_value_t = 1000)]
    n_source: usize,
    #[arg(long, default_value_t = 50)]
    n_target: usize,
    #[arg(long, default_value_t = 10)]
    pdim: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    lipschitz_product: f64,
    /// W1 between source and target features; computed from
    /// --source-features/--target-features when those are given.
    #[arg(long, default_value_t = 0.0)]
    w1: f64,
    /// Joint optimal risk. Not observable without the true labeling
    /// functions; supply an assumed value.
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    /// Joint risk of the looser single-domain line; also unobservable.
    #[arg(long, default_value_t = 0.0)]
    omega_prime: f64,
    #[arg(long)]
    source_features: Option<PathBuf>,
    #[arg(long)]
    target_features: Option<PathBuf>,
    /// Subsampling seed for the W1 estimate.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rademacher complexity; enables the noisy-label bound.
    #[arg(long)]
    rademacher: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Emit a CSV record instead of key=value lines.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    noise_rates: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(io(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_config(config: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = config {
        cfg.apply(&read_config_file(p)?)?;
    }
    cfg.apply(&parse_overrides(overrides)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut entries = match &args.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    entries.extend(parse_overrides(&args.overrides)?);
    let mut synth = SyntheticConfig::default();
    let mut noise_rate = 0.0;
    let mut noise_seed = None;
    for (k, v) in &entries {
        let bad = || Error::Config(format!("{k}: cannot parse `{v}`"));
        match k.as_str() {
            "noise_rate" => noise_rate = v.parse().map_err(|_| bad())?,
            "noise_seed" => noise_seed = Some(v.parse().map_err(|_| bad())?),
            _ => synth.set(k.strip_prefix("synth.").unwrap_or(k), v)?,
        }
    }
    let (source, target) = generate_pair(&synth)?;
    let source = inject_label_noise(&source, noise_rate, noise_seed.unwrap_or(synth.seed))?;
    std::fs::create_dir_all(&args.out_dir).map_err(io(&args.out_dir))?;
    let s = args.out_dir.join("source.dgdf");
    let t = args.out_dir.join("target.dgdf");
    write_features(&source, &s)?;
    write_features(&target, &t)?;
    println!("source={}", s.display());
    println!("target={}", t.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = train_config(args.config.as_deref(), &args.overrides)?;
    let data = load_datasets(&cfg)?;
    let out = dgda::train::train_with(&cfg, &data, exec(args.sequential))?;
    if let Some(p) = &args.snapshot {
        save_model(&out, &cfg, p)?;
    }
    emit(args.out.as_deref(), &history_csv(data.source.classes, &out.history))
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let (model, store, cfg) = load_model(&args.model)?;
    let data = read_features(&args.data)?;
    let report = evaluate(&model, &store, &data, cfg.batch_size, Execution::default())?;
    println!("wf1={}", report.wf1);
    for (k, f) in report.per_class_f1.iter().enumerate() {
        println!("f1_class{k}={f}");
    }
    println!("memorization_rate={}", report.memorization_rate);
    println!("branch_agreement={}", report.branch_agreement);
    for (k, row) in report.confusion.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        println!("confusion_row{k}={}", cells.join(","));
    }
    Ok(())
}

fn subsample(x: &Tensor, n: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if x.rows() == n {
        return Ok(x.clone());
    }
    let mut idx = sample(rng, x.rows(), n).into_vec();
    idx.sort_unstable();
    let data = idx.iter().flat_map(|&i| x.row_slice(i).iter().copied()).collect();
    Tensor::matrix(n, x.cols(), data)
}

fn run_bound(args: BoundArgs) -> Result<()> {
    let w1 = match (&args.source_features, &args.target_features) {
        (Some(s), Some(t)) => {
            let xs = read_features(s)?.stacked_features();
            let xt = read_features(t)?.stacked_features();
            let n = xs.rows().min(xt.rows()).min(MAX_W1_SAMPLES);
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            wasserstein1_exact(&subsample(&xs, n, &mut rng)?, &subsample(&xt, n, &mut rng)?)?
        }
        (None, None) => args.w1,
        _ => return Err(Error::Config("give both --source-features and --target-features".into())),
    };
    let report = theorem1_bound(&BoundInputs {
        source_risk: args.source_risk,
        target_risk: args.target_risk,
        n_source: args.n_source,
        n_target: args.n_target,
        pdim: args.pdim,
        delta: args.delta,
        lipschitz_product: args.lipschitz_product,
        w1,
        omega: args.omega,
        omega_prime: args.omega_prime,
    })?;
    if report.target_exceeds_source {
        eprintln!("warning: n_target > n_source; the bound assumes far fewer target than source samples");
    }
    let mut text = if args.csv { report.to_csv() } else { report.to_key_value() };
    if let Some(r) = args.rademacher {
        let nb = theorem3_bound(r, args.lambda, args.n_source, args.delta, args.eta, args.eps, args.margin)?;
        if args.csv {
            text.push_str(&format!(
                "noise_rademacher,noise_confidence,noise_term,noise_total\n{},{},{},{}\n",
                nb.rademacher, nb.confidence, nb.noise, nb.total
            ));
        } else {
            text.push_str(&format!(
                "noise_rademacher={}\nnoise_confidence={}\nnoise_term={}\nnoise_total={}\n",
                nb.rademacher, nb.confidence, nb.noise, nb.total
            ));
        }
    }
    print!("{text}");
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let cfg = train_config(args.config.as_deref(), &args.overrides)?;
    let rows = sweep(&cfg, &args.seeds, &args.noise_rates, exec(args.sequential))?;
    emit(args.out.as_deref(), &sweep_csv(cfg.synth.classes, &rows))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Bound(a) => run_bound(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
