use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pdsel::error::Failure;
use pdsel::formats::emit_report;
use pdsel::parallel::with_threads;
use pdsel::pipeline;
use pdsel::PipelineConfig;

/// Preference-divergence data selection for aggregated fine-grained
/// preference corpora.
#[derive(Debug, Parser)]
#[command(name = "pdsel", version)]
struct Cli {
    /// JSON pipeline config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (1 is the determinism reference).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the dataset and print its summary.
    Validate,
    /// Generate a synthetic corpus into the dataset path.
    Synth,
    /// Train one reward head per aspect.
    TrainRm,
    /// Compute the PD table from the trained heads.
    Score,
    /// Select a subset from the PD table.
    Select,
    /// Compute margins and DPO/DMPO losses.
    EvalLoss,
    /// Check the loss bounds of the current selection.
    Bounds,
    /// Run the randomized and exhaustive theory checks.
    VerifyTheory {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Validate, train, score and select in one go.
    Run,
}

#[derive(Debug, Default, Args)]
struct Overrides {
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    models_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    table: Option<PathBuf>,
    #[arg(long, global = true)]
    subset: Option<PathBuf>,
    #[arg(long, global = true)]
    selection: Option<PathBuf>,
    #[arg(long, global = true)]
    margins: Option<PathBuf>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    l2: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    p_r: Option<f64>,
    #[arg(long, global = true)]
    balanced: Option<bool>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    strategy: Option<String>,
    #[arg(long, global = true)]
    r_bound: Option<f64>,
    /// Selection seed (used by RAND).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    train_seed: Option<u64>,
    #[arg(long, global = true)]
    synth_seed: Option<u64>,
    #[arg(long, global = true)]
    theory_seed: Option<u64>,
    #[arg(long, global = true)]
    n_prompts: Option<usize>,
    #[arg(long, global = true)]
    responses_per_prompt: Option<usize>,
    #[arg(long, global = true)]
    kappa: Option<usize>,
    #[arg(long, global = true)]
    conflict_target: Option<f64>,
    #[arg(long, global = true)]
    length_bias_prob: Option<f64>,
    #[arg(long, global = true)]
    feature_dim: Option<usize>,
    #[arg(long, global = true)]
    feature_noise: Option<f64>,
    #[arg(long, global = true)]
    margin_noise: Option<f64>,
}

macro_rules! apply {
    ($o:expr; $($src:ident => $($dst:ident).+),* $(,)?) => {
        $(if let Some(v) = $o.$src.clone() { $($dst).+ = v; })*
    };
}

impl Overrides {
    fn apply(&self, c: &mut PipelineConfig) {
        apply!(self;
            dataset => c.paths.dataset,
            models_dir => c.paths.models_dir,
            table => c.paths.table,
            subset => c.paths.subset,
            selection => c.paths.selection,
            margins => c.paths.margins,
            learning_rate => c.train.learning_rate,
            epochs => c.train.epochs,
            batch_size => c.train.batch_size,
            l2 => c.train.l2,
            rho => c.train.rho,
            tau => c.train.tau,
            p_r => c.train.p_r,
            balanced => c.train.balanced,
            gamma => c.gamma,
            beta => c.beta,
            lambda => c.lambda,
            strategy => c.strategy,
            r_bound => c.r_bound,
            seed => c.seeds.selection,
            train_seed => c.seeds.train,
            synth_seed => c.seeds.synth,
            theory_seed => c.seeds.theory,
            n_prompts => c.synth.n_prompts,
            responses_per_prompt => c.synth.responses_per_prompt,
            kappa => c.synth.kappa,
            conflict_target => c.synth.conflict_target,
            length_bias_prob => c.synth.length_bias_prob,
            feature_dim => c.synth.feature_dim,
            feature_noise => c.synth.feature_noise,
            margin_noise => c.synth.margin_noise,
        );
    }
}

fn emit<T: Serialize>(out: Option<&PathBuf>, report: &T) -> Result<(), Failure> {
    emit_report(out.map(PathBuf::as_path), report).map_err(|e| e.into_failure("report"))
}

fn execute(cli: &Cli, config: &PipelineConfig) -> Result<(), Failure> {
    let out = cli.out.as_ref();
    match &cli.command {
        Command::Validate => emit(out, &pipeline::validate(config)?),
        Command::Synth => emit(out, &pipeline::synth(config)?),
        Command::TrainRm => emit(out, &pipeline::train_rm(config)?),
        Command::Score => emit(out, &pipeline::score(config)?),
        Command::Select => emit(out, &pipeline::select_stage(config)?),
        Command::EvalLoss => emit(out, &pipeline::eval_loss(config)?),
        Command::Bounds => {
            let report = pipeline::bounds(config)?;
            emit(out, &report)?;
            pipeline::bounds_verdict(&report)
        }
        Command::VerifyTheory { trials, instances } => {
            let report = pipeline::verify_theory(config, *trials, *instances)?;
            emit(out, &report)?;
            pipeline::theory_verdict(&report)
        }
        Command::Run => {
            let (report, failure) = pipeline::run(config);
            emit(out, &report)?;
            failure.map_or(Ok(()), Err)
        }
    }
}

fn main_inner() -> Result<(), Failure> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Err(Failure::usage("arguments", "invalid command line"))
            } else {
                Ok(())
            };
        }
    };
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut config);
    config.validate()?;
    with_threads(cli.threads, || execute(&cli, &config))?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            if failure.stage != "arguments" {
                eprintln!("error: {failure}");
            }
            ExitCode::from(failure.kind.code())
        }
    }
}
