use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use minimax_filter::dataset::{gen_synthetic, load_csv, save_csv, split_per_subject, CsvSchema, SyntheticSpec};
use minimax_filter::dp::{compute_diameters, default_bound_scale, perturb_raw, BoundKind, NoiseConfig};
use minimax_filter::experiment::{export_results, fit_filter, run_experiment, Chain, ExperimentConfig, FilterSpec};
use minimax_filter::heads::{accuracy, fit_softmax};
use minimax_filter::record::{load_record, save_record};
use minimax_filter::rng::derived_rng;
use minimax_filter::{Dataset, Error, Result};

#[derive(Parser)]
#[command(name = "mmf", version, about = "Train and evaluate privacy-preserving minimax filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one filter on a dataset and save it with its heads.
    Train(TrainArgs),
    /// Score a saved filter on a dataset with fresh attack and analyst classifiers.
    Eval(EvalArgs),
    /// Run a full experiment grid and export the results.
    Sweep(SweepArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Print between-subject and within-subject diameters.
    Diameters(DiameterArgs),
}

/// Settings that override keys of the config file.
#[derive(Args, Default)]
struct Overrides {
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight of the utility term against the privacy term.
    #[arg(long)]
    rho: Option<f64>,
    /// Regularization of every head.
    #[arg(long)]
    lambda: Option<f64>,
    /// Outer descent iterations.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Master seed for splits, initializations and noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Unit-ball map applied before noise: clip, squash or normalize.
    #[arg(long)]
    bound: Option<BoundKind>,
    /// Bound parameter; defaults to a percentile of training output norms.
    #[arg(long)]
    bound_scale: Option<f64>,
    /// Hidden widths of the sigmoid network, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Share of each subject's samples used for training.
    #[arg(long)]
    train_fraction: Option<f64>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => toml::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.lambda {
            cfg.reg_lambda = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.bound {
            cfg.bound = v;
        }
        if let Some(v) = self.bound_scale {
            cfg.bound_scale = Some(v);
        }
        if let Some(v) = &self.hidden {
            cfg.hidden_dims = v.clone();
        }
        if let Some(v) = self.train_fraction {
            cfg.train_fraction = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    /// CSV with columns f0..f{D-1}, y, z, subject.
    #[arg(long)]
    data: PathBuf,
    /// Treat the data as having no target labels (reconstruction utility).
    #[arg(long)]
    no_target: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let schema = CsvSchema { target_column: (!self.no_target).then(|| "z".into()), ..Default::default() };
        load_csv(&self.data, &schema)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "minimax-linear")]
    filter: FilterSpec,
    /// Output dimension.
    #[arg(long)]
    dim: usize,
    /// Where to write the filter record.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON-lines training trace.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Filter record written by `train`.
    #[arg(long)]
    filter_file: PathBuf,
    /// Noise level 1/eps; 0 disables bounding and noise.
    #[arg(long, default_value_t = 0.0)]
    epsilon_inverse: f64,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// raw, rand, pca, ppls, minimax-linear, minimax-mlp, lds-init
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<FilterSpec>>,
    /// Output dimensions to sweep.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// clean, pre (filter then noise) or post (noise then filter).
    #[arg(long, value_delimiter = ',')]
    chains: Option<Vec<Chain>>,
    /// Noise levels 1/eps for the noisy chains.
    #[arg(long, value_delimiter = ',')]
    epsilon_inverse: Option<Vec<f64>>,
    /// Random splits per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory for cells.jsonl and summary.csv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    per_subject: usize,
    /// Degrees between the subject and target axes.
    #[arg(long, default_value_t = 90.0)]
    angle: f64,
    #[arg(long, default_value_t = 4.0)]
    subject_sep: f64,
    #[arg(long, default_value_t = 4.0)]
    target_sep: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DiameterArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Measure on the outputs of this filter instead of the raw features.
    #[arg(long)]
    filter_file: Option<PathBuf>,
}

fn train(args: &TrainArgs) -> Result<()> {
    let data = args.data.load()?;
    let cfg = args.overrides.resolve()?;
    let fitted = fit_filter(args.filter, &data, args.dim, &cfg, cfg.master_seed)?;
    let heads = fitted.report.as_ref().map(|r| r.final_objective.heads.clone()).unwrap_or_default();
    save_record(&args.out, &fitted.filter, &heads)?;
    if let Some(r) = &fitted.report {
        println!(
            "phi {:.6} after {} iterations ({:?})",
            r.final_phi(),
            r.iterations(),
            r.stop_reason
        );
        if let Some(path) = &args.report {
            r.save_jsonl(path)?;
        }
    }
    println!("saved {}", args.out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let data = args.data.load()?;
    let cfg = args.overrides.resolve()?;
    let filter = load_record(&args.filter_file)?.filter;
    let (train, test) = split_per_subject(&data, cfg.train_fraction, cfg.master_seed)?;
    let mut g_train = filter.apply(&train.features)?;
    let mut g_test = filter.apply(&test.features)?;
    if args.epsilon_inverse > 0.0 {
        let scale = cfg.bound_scale.unwrap_or_else(|| default_bound_scale(cfg.bound, &g_train));
        let noise = NoiseConfig::new(args.epsilon_inverse, cfg.bound, scale, cfg.master_seed)?;
        let mut rng = derived_rng(cfg.master_seed, &[2]);
        g_train = perturb_raw(&g_train, &noise, &mut rng)?;
        g_test = perturb_raw(&g_test, &noise, &mut rng)?;
    }
    let (head, _) = fit_softmax(&g_train, &train.private_labels, train.num_private_classes, cfg.reg_lambda, cfg.eval_solver, None)?;
    println!(
        "private accuracy {:.4} (chance {:.4})",
        accuracy(&head, &g_test, &test.private_labels),
        1.0 / train.num_private_classes as f64
    );
    if let (Some(ztr), Some(zte)) = (&train.target_labels, &test.target_labels) {
        let (head, _) = fit_softmax(&g_train, ztr, train.num_target_classes, cfg.reg_lambda, cfg.eval_solver, None)?;
        println!(
            "target accuracy {:.4} (chance {:.4})",
            accuracy(&head, &g_test, zte),
            1.0 / train.num_target_classes as f64
        );
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let data = args.data.load()?;
    let mut cfg = args.overrides.resolve()?;
    if let Some(v) = &args.filters {
        cfg.filters = v.clone();
    }
    if let Some(v) = &args.dims {
        cfg.dims = v.clone();
    }
    if let Some(v) = &args.chains {
        cfg.chains = v.clone();
    }
    if let Some(v) = &args.epsilon_inverse {
        cfg.epsilon_inverse = v.clone();
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    let report = run_experiment(&cfg, &data)?;
    let failures = report.cells.iter().filter(|c| c.error.is_some()).count();
    export_results(&report, &args.out)?;
    for row in report.summary() {
        let target = row.target_mean.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<15} {:<5} d={:<4} 1/eps={:<8} target {:>6} private {:.3}",
            row.filter.name(),
            format!("{:?}", row.chain).to_lowercase(),
            row.dim,
            row.epsilon_inverse,
            target,
            row.private_mean
        );
    }
    if failures > 0 {
        eprintln!("{failures} cells failed; see cells.jsonl");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        dim: args.dim,
        n_subjects: args.subjects,
        n_target_classes: args.classes,
        per_subject: args.per_subject,
        angle_deg: args.angle,
        subject_sep: args.subject_sep,
        target_sep: args.target_sep,
        noise: args.noise,
        seed: args.seed,
    };
    let data = gen_synthetic(&spec)?;
    save_csv(&data, &args.out)?;
    println!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(())
}

fn diameters(args: &DiameterArgs) -> Result<()> {
    let data = args.data.load()?;
    let x = match &args.filter_file {
        Some(path) => load_record(path)?.filter.apply(&data.features)?,
        None => data.features.clone(),
    };
    let report = compute_diameters(&x, &data.private_labels, data.target()?)?;
    let pair = |p: Option<(usize, usize)>| p.map_or_else(|| "no pair".to_string(), |(i, j)| format!("rows {i},{j}"));
    println!("between-subject diameter {:.6} ({})", report.between, pair(report.between_pair));
    println!("within-subject diameter  {:.6} ({})", report.within, pair(report.within_pair));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Diameters(a) => diameters(a),
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

