//! Subcommand definitions and execution.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use sustain_core::baselines;
use sustain_core::evaluation::{self, NoiseSpec};
use sustain_core::solver::{self, InitScheme, SolverConfig, SolverTrace};
use sustain_core::{IntegerFactorModel, SparseTensor};

use crate::io::{self, FileFormat, IoError, ModelMeta, RunManifest, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(IoError),
    #[error("{0}")]
    Output(IoError),
    #[error("{0}")]
    Numerical(#[from] sustain_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) | CliError::Output(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "sustain",
    about = "Integer-score factorization of sparse count matrices and tensors",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Factor an order-2 input into integer scores.
    FactorM(FactorArgs),
    /// Factor a tensor of any order into integer scores.
    FactorT(FactorArgs),
    /// Run a comparison method (round, scale-round, or AILS).
    Baseline(BaselineArgs),
    /// Stability-driven rank selection over a range of candidate ranks.
    Stability(StabilityArgs),
    /// Generate a planted instance and write it as a .tns file.
    Generate(GenerateArgs),
    /// Recompute the fit of a saved model against a tensor.
    Fit(FitArgs),
    /// Render a saved model as per-component score tables.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum InitArg {
    Random,
    Sampling,
    Round,
    ScaleRound,
}

impl InitArg {
    fn scheme(self) -> InitScheme {
        match self {
            InitArg::Random => InitScheme::Random,
            InitArg::Sampling => InitScheme::RandomSampling,
            InitArg::Round => InitScheme::RoundSeed,
            InitArg::ScaleRound => InitScheme::ScaleRoundSeed,
        }
    }

    fn name(self) -> &'static str {
        match self {
            InitArg::Random => "random",
            InitArg::Sampling => "sampling",
            InitArg::Round => "round",
            InitArg::ScaleRound => "scale-round",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FormatArg {
    Text,
    Binary,
}

impl FormatArg {
    fn format(self) -> FileFormat {
        match self {
            FormatArg::Text => FileFormat::Text,
            FormatArg::Binary => FileFormat::Binary,
        }
    }
}

#[derive(Args, Debug)]
pub struct FactorArgs {
    /// Input tensor (.tns).
    #[arg(long)]
    pub input: PathBuf,
    /// Number of rank-1 components.
    #[arg(long)]
    pub rank: usize,
    /// Upper bound of the integer score range {0..tau}.
    #[arg(long, default_value_t = 5)]
    pub tau: u32,
    /// Convergence threshold on the successive objective difference.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the model, trace and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
    /// Compare the raw (unnormalized) objective difference against tol.
    #[arg(long)]
    pub raw_tol: bool,
}

impl FactorArgs {
    fn config(&self) -> SolverConfig {
        let mut config = SolverConfig::new(self.rank);
        config.tau = self.tau;
        config.tol = self.tol;
        config.max_iters = self.max_iters;
        config.init = self.init.scheme();
        config.seed = self.seed;
        config.normalized_tol = !self.raw_tol;
        config
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MethodArg {
    Round,
    ScaleRound,
    Ails,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[command(flatten)]
    pub factor: FactorArgs,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Candidate ranks, as `lo:hi` or a comma list like `2,3,5`.
    #[arg(long)]
    pub ranks: String,
    /// Solver runs per rank.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub tau: u32,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Starting points for the repeated runs (perturbed per run).
    #[arg(long, value_enum, default_value_t = InitArg::Round)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mode (1-based) whose factor is compared across runs.
    #[arg(long, default_value_t = 2)]
    pub assess_mode: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Shape, e.g. `200x40` or `50x30x20`.
    #[arg(long)]
    pub dims: String,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 5)]
    pub tau: u32,
    /// Target fraction of nonzero cells.
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
    /// Component weights are drawn uniformly from {1..lambda-max}.
    #[arg(long, default_value_t = 5)]
    pub lambda_max: i64,
    /// Poisson rate for additive integer noise on nonzeros (0 = none).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output .tns path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional directory for the ground-truth model.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Model directory written by factor-m/factor-t/baseline.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Mode (1-based) whose factor defines the score tables.
    #[arg(long, default_value_t = 2)]
    pub mode: usize,
    /// Optional feature-name file: line k names index k of the chosen mode.
    #[arg(long)]
    pub names: Option<PathBuf>,
    /// Show at most this many features per component.
    #[arg(long)]
    pub top: Option<usize>,
}

/// Parses argv and runs the chosen command, returning the process exit
/// code: 0 on success, 1 on usage or input errors, 2 on numerical failure.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::FactorM(args) => run_factor(&args, false),
        Command::FactorT(args) => run_factor(&args, true),
        Command::Baseline(args) => run_baseline(&args),
        Command::Stability(args) => run_stability(&args),
        Command::Generate(args) => run_generate(&args),
        Command::Fit(args) => run_fit(&args),
        Command::Report(args) => run_report(&args),
    }
}

fn load_input(path: &Path) -> Result<SparseTensor, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "input {} does not exist",
            path.display()
        )));
    }
    io::load_tensor(path).map_err(CliError::Input)
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Output(IoError::Io { path: dir.display().to_string(), source: e }))
}

fn manifest_for(command: &str, args: &FactorArgs) -> RunManifest {
    RunManifest {
        format_version: FORMAT_VERSION,
        command: command.to_string(),
        input: args.input.display().to_string(),
        out_dir: args.out.display().to_string(),
        rank: args.rank,
        tau: args.tau,
        tol: args.tol,
        max_iters: args.max_iters,
        init: args.init.name().to_string(),
        seed: args.seed,
    }
}

fn save_run_outputs(
    args: &FactorArgs,
    x: &SparseTensor,
    model: &IntegerFactorModel,
    trace: &SolverTrace,
) -> Result<f64, CliError> {
    let fit = model.fit(x)?;
    let meta = ModelMeta {
        format_version: FORMAT_VERSION,
        dims: x.dims().to_vec(),
        rank: model.rank(),
        tau: model.tau,
        seed: args.seed,
        fit,
    };
    io::save_model(&args.out, model, &meta, args.format.format()).map_err(CliError::Output)?;
    io::write_trace_csv(&args.out.join("trace.csv"), trace).map_err(CliError::Output)?;
    Ok(fit)
}

fn run_factor(args: &FactorArgs, tensor_mode: bool) -> Result<(), CliError> {
    let x = load_input(&args.input)?;
    prepare_out_dir(&args.out)?;
    let command = if tensor_mode { "factor-t" } else { "factor-m" };
    io::write_manifest(&args.out, &manifest_for(command, args)).map_err(CliError::Output)?;
    let config = args.config();
    let (model, trace) = if tensor_mode {
        solver::sustain_t(&x, &config)?
    } else {
        solver::sustain_m(&x, &config)?
    };
    let fit = save_run_outputs(args, &x, &model, &trace)?;
    println!(
        "{command}: fit {fit:.6}, {} sweeps in {:.3}s (converged: {}), outputs in {}",
        trace.sweeps_run,
        trace.total_seconds,
        trace.converged,
        args.out.display()
    );
    Ok(())
}

fn run_baseline(args: &BaselineArgs) -> Result<(), CliError> {
    let factor = &args.factor;
    let x = load_input(&factor.input)?;
    prepare_out_dir(&factor.out)?;
    let name = match args.method {
        MethodArg::Round => "baseline-round",
        MethodArg::ScaleRound => "baseline-scale-round",
        MethodArg::Ails => "baseline-ails",
    };
    io::write_manifest(&factor.out, &manifest_for(name, factor)).map_err(CliError::Output)?;

    let (model, trace) = match args.method {
        MethodArg::Ails => baselines::ails_matrix(&x, &factor.config())?,
        MethodArg::Round | MethodArg::ScaleRound => {
            let (real, trace) = if x.order() == 2 {
                baselines::nmf_hals(&x, factor.rank, factor.tol, factor.max_iters, factor.seed)?
            } else {
                baselines::cp_als_nonneg(
                    &x,
                    factor.rank,
                    factor.tol,
                    factor.max_iters,
                    factor.seed,
                )?
            };
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(factor.seed);
            let model = match args.method {
                MethodArg::Round => baselines::round_model(&real, factor.tau, &mut rng)?,
                _ => baselines::scale_and_round_model(&real, factor.tau, &mut rng)?,
            };
            (model, trace)
        }
    };
    let fit = save_run_outputs(factor, &x, &model, &trace)?;
    println!(
        "{name}: fit {fit:.6}, {} sweeps in {:.3}s, outputs in {}",
        trace.sweeps_run,
        trace.total_seconds,
        factor.out.display()
    );
    Ok(())
}

fn parse_ranks(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Usage(format!("bad rank specification '{spec}'"));
    let ranks: Vec<usize> = if let Some((lo, hi)) = spec.split_once(':') {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        spec.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(bad());
    }
    Ok(ranks)
}

fn run_stability(args: &StabilityArgs) -> Result<(), CliError> {
    let x = load_input(&args.input)?;
    let ranks = parse_ranks(&args.ranks)?;
    if args.assess_mode == 0 || args.assess_mode > x.order() {
        return Err(CliError::Usage(format!(
            "assess mode {} out of range for order {}",
            args.assess_mode,
            x.order()
        )));
    }
    prepare_out_dir(&args.out)?;
    io::write_manifest(
        &args.out,
        &RunManifest {
            format_version: FORMAT_VERSION,
            command: "stability".to_string(),
            input: args.input.display().to_string(),
            out_dir: args.out.display().to_string(),
            rank: ranks[0],
            tau: args.tau,
            tol: args.tol,
            max_iters: args.max_iters,
            init: args.init.name().to_string(),
            seed: args.seed,
        },
    )
    .map_err(CliError::Output)?;

    let mut config = SolverConfig::new(ranks[0]);
    config.tau = args.tau;
    config.tol = args.tol;
    config.max_iters = args.max_iters;
    config.init = args.init.scheme();
    config.seed = args.seed;
    let (report, best) =
        evaluation::stability_select(&x, &ranks, args.reps, &config, args.assess_mode - 1)?;

    let json_path = args.out.join("stability.json");
    let file = std::fs::File::create(&json_path)
        .map_err(|e| CliError::Output(IoError::Io { path: json_path.display().to_string(), source: e }))?;
    serde_json::to_writer_pretty(file, &report).map_err(|e| {
        CliError::Output(IoError::Format {
            path: json_path.display().to_string(),
            message: e.to_string(),
        })
    })?;

    let meta = ModelMeta {
        format_version: FORMAT_VERSION,
        dims: x.dims().to_vec(),
        rank: report.selected_rank,
        tau: args.tau,
        seed: report.selected_seed,
        fit: report.selected_fit,
    };
    io::save_model(&args.out.join("best_model"), &best, &meta, args.format.format())
        .map_err(CliError::Output)?;

    for rank in &report.ranks {
        println!(
            "rank {:>3}: stability score {:.6} over {} pairs ({} excluded)",
            rank.rank,
            rank.score,
            rank.pairs.len(),
            rank.excluded_pairs
        );
    }
    println!(
        "selected rank {} (seed {}, fit {:.6}); outputs in {}",
        report.selected_rank,
        report.selected_seed,
        report.selected_fit,
        args.out.display()
    );
    Ok(())
}

fn parse_dims(spec: &str) -> Result<Vec<usize>, CliError> {
    let dims: Vec<usize> = spec
        .split('x')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad dims '{spec}'")))?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(CliError::Usage(format!("bad dims '{spec}'")));
    }
    Ok(dims)
}

fn run_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let dims = parse_dims(&args.dims)?;
    let noise = if args.noise > 0.0 {
        NoiseSpec::Poisson { rate: args.noise }
    } else {
        NoiseSpec::None
    };
    let instance = evaluation::generate_planted(
        &dims,
        args.rank,
        args.tau,
        (1, args.lambda_max),
        args.density,
        noise,
        args.seed,
    )?;
    io::save_tensor(&args.out, &instance.tensor).map_err(CliError::Output)?;
    if let Some(truth_dir) = &args.truth_out {
        let meta = ModelMeta {
            format_version: FORMAT_VERSION,
            dims: dims.clone(),
            rank: args.rank,
            tau: args.tau,
            seed: args.seed,
            fit: instance.truth.fit(&instance.tensor)?,
        };
        io::save_model(truth_dir, &instance.truth, &meta, FileFormat::Text)
            .map_err(CliError::Output)?;
    }
    println!(
        "generated {} with {} nonzeros (density {:.4}) -> {}",
        args.dims,
        instance.tensor.nnz(),
        instance.tensor.nnz() as f64 / instance.tensor.dense_size() as f64,
        args.out.display()
    );
    Ok(())
}

fn run_fit(args: &FitArgs) -> Result<(), CliError> {
    let x = load_input(&args.input)?;
    let (model, meta) = io::load_model(&args.model).map_err(CliError::Input)?;
    let fit = model.fit(&x)?;
    println!("fit {fit} (stored {})", meta.fit);
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<(), CliError> {
    let (model, _meta) = io::load_model(&args.model).map_err(CliError::Input)?;
    if args.mode == 0 || args.mode > model.order() {
        return Err(CliError::Usage(format!(
            "mode {} out of range for order {}",
            args.mode,
            model.order()
        )));
    }
    let factor = &model.factors[args.mode - 1];
    let names: Vec<String> = match &args.names {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(IoError::Io { path: path.display().to_string(), source: e }))?
            .lines()
            .map(|l| l.trim().to_string())
            .collect(),
        None => Vec::new(),
    };
    let name_of = |i: usize| -> String {
        names
            .get(i)
            .filter(|n| !n.is_empty())
            .cloned()
            .unwrap_or_else(|| format!("feature_{}", i + 1))
    };

    // Components in descending weight order; ties keep the original index.
    let mut order: Vec<usize> = (0..model.rank()).collect();
    order.sort_by(|&a, &b| model.lambda[b].cmp(&model.lambda[a]).then(a.cmp(&b)));
    for &k in &order {
        let members = model.factors[0]
            .column(k)
            .iter()
            .filter(|&&v| v != 0.0)
            .count();
        println!(
            "component {} (weight {}, members {})",
            k + 1,
            model.lambda[k],
            members
        );
        let mut rows: Vec<(usize, f64)> = factor
            .column(k)
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(top) = args.top {
            rows.truncate(top);
        }
        for (i, score) in rows {
            println!("  {:>3}  {}", score as i64, name_of(i));
        }
        println!();
    }
    Ok(())
}
