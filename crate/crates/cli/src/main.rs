mod ablate;
mod commands;
mod manifest;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const LOG_ENV: &str = "IGREC_LOG";

#[derive(Parser, Debug)]
#[command(name = "igrec", version = env!("IGREC_VERSION"), about = "Group-aware multi-interest recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-interest dataset.
    Synth(SynthArgs),
    /// Split a dataset directory, optionally synthesising group–item edges.
    Prepare(PrepareArgs),
    /// Train one model per seed and keep the best-validation checkpoints.
    Train(TrainArgs),
    /// Evaluate checkpoints or the popularity baseline on the test split.
    Eval(EvalArgs),
    /// Grid search ranked by validation NDCG@10.
    Sweep(SweepArgs),
    /// Compare ablation variants or interest generators against the full model.
    Ablate(AblateArgs),
    /// Re-run the command recorded in a manifest into a new directory.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML configuration file; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override applied after the file, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub users: usize,
    #[arg(long, default_value_t = 120)]
    pub items: usize,
    #[arg(long, default_value_t = 60)]
    pub groups: usize,
    #[arg(long, default_value_t = 4)]
    pub interests: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability that a user holds a second interest.
    #[arg(long, default_value_t = 0.5)]
    pub second_interest: f64,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Dataset directory in the canonical layout; split.tsv is written here.
    #[arg(long)]
    pub data: PathBuf,
    /// Build group–item edges from members' most frequent training items.
    #[arg(long)]
    pub synthesize_groups: bool,
    #[arg(long, default_value_t = igrec::data::DEFAULT_GROUP_ITEM_CAP)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Seeds to train, comma separated; defaults to the config seed.
    #[arg(long, alias = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    User,
    Group,
    Both,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint file, repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Training output directory; every `seed-*.ckpt` in it is evaluated.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Evaluate the popularity ranking instead of a model.
    #[arg(long, conflicts_with_all = ["checkpoints", "run"])]
    pub popularity: bool,
    #[arg(long, value_enum, default_value_t = TaskArg::Both)]
    pub task: TaskArg,
    #[arg(long, value_delimiter = ',', default_values_t = igrec::eval::DEFAULT_KS)]
    pub k: Vec<usize>,
    /// Number of runs to report; checkpoints beyond this are ignored.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file mapping config keys to lists of values.
    #[arg(long)]
    pub grid: PathBuf,
    /// Maximum number of grid points to run.
    #[arg(long)]
    pub budget: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "Full,A,B,C,D")]
    pub variants: Vec<String>,
    /// Compare interest generators instead of variants
    /// (self_gating, fc1, fc2, free_embedding).
    #[arg(long, value_delimiter = ',')]
    pub generators: Vec<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = igrec::eval::DEFAULT_KS)]
    pub k: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use igrec::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::Shape(_)) => "shape",
        Some(E::NonFinite(_)) => "non_finite",
        Some(E::InvalidArgument(_)) => "invalid_argument",
        Some(E::Config(_)) => "config",
        Some(E::Parse { .. }) => "parse",
        Some(E::Dataset(_)) => "dataset",
        Some(E::Checkpoint(_)) => "checkpoint",
        Some(E::Diverged { .. }) => "diverged",
        Some(E::Io { .. }) => "io",
        Some(E::Json(_)) => "json",
        Some(E::Csv(_)) => "csv",
        None => "error",
    }
}

/// The error chain joined with `: `, skipping causes already quoted by
/// their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match commands::dispatch(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), &describe(&e), 1),
    }
}
