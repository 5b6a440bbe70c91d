//! `dbmmd` command-line driver.
//!
//! Exit codes: 0 on success, 1 when any experiment cell (or the run itself)
//! fails, 2 on an invalid command line or config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dbmmd::adapt::ModelKind;
use dbmmd::data::{AdaptConfig, GraphMode, KernelSetting, MatrixMode, SigmaMode};
use dbmmd::harness::experiment::{
    render_markdown, rerender, run_experiment, summarize, ExperimentSpec,
};
use dbmmd::harness::io::{save_features, write_atomic, FeatureFile, FeatureFormat};
use dbmmd::harness::synth::{generate_synthetic, pair_digest, Shift, SyntheticRecipe};
use dbmmd::Error;

#[derive(Parser)]
#[command(
    name = "dbmmd",
    version,
    about = "Decision-boundary MMD domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic source/target pair as feature files.
    Synth(SynthArgs),
    /// Run an experiment described by a JSON config.
    Run(RunArgs),
    /// Re-render summary files from a finished run's results.json.
    Report {
        /// Output directory of a previous `run`.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    RawF64,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => FeatureFormat::Csv,
            FormatArg::RawF64 => FeatureFormat::RawF64,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Recipe JSON; other recipe flags override its fields.
    #[arg(long)]
    recipe: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// `rotation:<degrees>`, `translation:<v1,v2,..>` or `covariance-scale:<s>`.
    #[arg(long, value_parser = parse_shift)]
    shift: Option<Shift>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    center_spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Directory receiving source.*, target.* and recipe.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Comma-separated model list, replacing the config's.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    repeat: Option<usize>,
    #[arg(long)]
    dump_embeddings: bool,
    #[command(flatten)]
    overrides: ConfigFlags,
}

/// One flag per `AdaptConfig` key.
#[derive(Args)]
struct ConfigFlags {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// `primal`, `linear`, `rbf` or `poly:<degree>`.
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelSetting>,
    /// `median` or a fixed bandwidth.
    #[arg(long, value_parser = parse_sigma)]
    sigma_mode: Option<SigmaMode>,
    #[arg(long)]
    neighborhood_p: Option<usize>,
    #[arg(long)]
    normalized_laplacian: Option<bool>,
    #[arg(long, value_parser = parse_graph_mode)]
    graph_mode: Option<GraphMode>,
    #[arg(long, value_parser = parse_matrix_mode)]
    matrix_mode: Option<MatrixMode>,
    #[arg(long)]
    keep_off_mask: Option<bool>,
    #[arg(long)]
    w_floor: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    meda_alpha: Option<f64>,
    #[arg(long)]
    meda_rho: Option<f64>,
    #[arg(long)]
    meda_eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigFlags {
    fn apply(&self, cfg: &mut AdaptConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            k,
            lambda,
            mu,
            max_iter,
            kernel,
            sigma_mode,
            neighborhood_p,
            normalized_laplacian,
            graph_mode,
            matrix_mode,
            keep_off_mask,
            w_floor,
            meda_alpha,
            meda_rho,
            meda_eta,
            seed
        );
        if self.ridge.is_some() {
            cfg.ridge = self.ridge;
        }
    }
}

fn parse_kernel(s: &str) -> Result<KernelSetting, String> {
    match s {
        "primal" => Ok(KernelSetting::Primal),
        "linear" => Ok(KernelSetting::Linear),
        "rbf" => Ok(KernelSetting::Rbf),
        _ => match s.strip_prefix("poly:") {
            Some(d) => d
                .parse()
                .map(|degree| KernelSetting::Poly { degree })
                .map_err(|e| format!("bad degree: {e}")),
            None => Err(format!("unknown kernel {s:?}")),
        },
    }
}

fn parse_sigma(s: &str) -> Result<SigmaMode, String> {
    if s == "median" {
        return Ok(SigmaMode::Median);
    }
    f64::from_str(s)
        .map(|sigma| SigmaMode::Fixed { sigma })
        .map_err(|_| format!("expected `median` or a number, got {s:?}"))
}

fn parse_graph_mode(s: &str) -> Result<GraphMode, String> {
    match s {
        "literal" => Ok(GraphMode::Literal),
        "spirit" => Ok(GraphMode::Spirit),
        _ => Err(format!("unknown graph mode {s:?}")),
    }
}

fn parse_matrix_mode(s: &str) -> Result<MatrixMode, String> {
    match s {
        "literal" => Ok(MatrixMode::Literal),
        "rank_one_sum" | "rank-one-sum" => Ok(MatrixMode::RankOneSum),
        _ => Err(format!("unknown matrix mode {s:?}")),
    }
}

fn parse_shift(s: &str) -> Result<Shift, String> {
    let (kind, value) = s.split_once(':').ok_or("expected <kind>:<value>")?;
    let num = |v: &str| f64::from_str(v.trim()).map_err(|e| format!("{v:?}: {e}"));
    match kind {
        "rotation" => Ok(Shift::Rotation {
            degrees: num(value)?,
        }),
        "translation" => Ok(Shift::Translation {
            offset: value.split(',').map(num).collect::<Result<_, _>>()?,
        }),
        "covariance-scale" => Ok(Shift::CovarianceScale {
            factor: num(value)?,
        }),
        _ => Err(format!("unknown shift {kind:?}")),
    }
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn read_json(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let mut recipe = match &args.recipe {
        Some(path) => serde_json::from_str(&read_json(path)?)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => SyntheticRecipe::golden(),
    };
    macro_rules! set {
        ($($arg:ident => $field:ident),*) => {$(
            if let Some(v) = args.$arg.clone() {
                recipe.$field = v;
            }
        )*};
    }
    set!(classes => class_count, per_class => per_class, dim => dim, shift => shift,
         noise => noise, center_spread => center_spread, seed => seed);
    recipe
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;

    let pair = generate_synthetic(&recipe)?;
    let format: FeatureFormat = args.format.into();
    let ext = match format {
        FeatureFormat::Csv => "csv",
        FeatureFormat::RawF64 => "bin",
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Run(format!("{}: {e}", args.out.display())))?;
    let to_i64 = |l: &[usize]| Some(l.iter().map(|&y| y as i64).collect());
    save_features(
        &args.out.join(format!("source.{ext}")),
        format,
        &FeatureFile {
            features: pair.source.features.clone(),
            labels: to_i64(&pair.source.labels),
        },
    )?;
    save_features(
        &args.out.join(format!("target.{ext}")),
        format,
        &FeatureFile {
            features: pair.target.features.clone(),
            labels: pair.target_truth.as_deref().and_then(to_i64),
        },
    )?;
    let recipe_json = serde_json::to_string_pretty(&recipe).map_err(Error::from)?;
    write_atomic(&args.out.join("recipe.json"), recipe_json.as_bytes())?;
    println!("wrote {} ({})", args.out.display(), pair_digest(&pair));
    Ok(())
}

fn run(args: RunArgs) -> Result<bool, Failure> {
    let text = read_json(&args.config)?;
    let mut spec = ExperimentSpec::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    spec.resolve_paths(&base);
    if let Some(models) = args.models {
        spec.models = models;
    }
    if let Some(dir) = args.output_dir {
        spec.output_dir = dir;
    }
    if let Some(repeat) = args.repeat {
        spec.repeat = repeat;
    }
    spec.dump_embeddings |= args.dump_embeddings;
    args.overrides.apply(&mut spec.config);
    spec.validate()
        .map_err(|e| Failure::Config(e.to_string()))?;

    let outcome = run_experiment(&spec)?;
    print!("{}", render_markdown(&summarize(&outcome.results)));
    for cell in outcome.results.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "{} (rep {}) failed: {}",
            cell.model,
            cell.rep,
            cell.error.as_deref().unwrap_or("")
        );
    }
    println!("results in {}", spec.output_dir.display());
    Ok(!outcome.results.any_failed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth(args).map(|()| true),
        Command::Run(args) => run(args),
        Command::Report { dir } => rerender(&dir)
            .map(|results| {
                print!("{}", render_markdown(&summarize(&results)));
                !results.any_failed()
            })
            .map_err(Failure::from),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
