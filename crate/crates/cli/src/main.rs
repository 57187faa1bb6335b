use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spx_core::ErrorKind;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "spx", version, about = "Body-part relevance for black-box object detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Explain one instance: report.json, relevance.png and error.png.
    Explain(ExplainArgs),
    /// Average reports into aggregate.json and pictogram.svg.
    Aggregate(AggregateArgs),
    /// Run the sample-efficiency ladder over a directory of instances.
    Convergence(ConvergenceArgs),
    /// Exact Shapley values of a synthetic detector.
    Oracle(OracleArgs),
    /// Synthetic test instances.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Kernelshap,
    Beta,
}

impl From<MethodArg> for spx_core::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kernelshap => spx_core::Method::KernelShap,
            MethodArg::Beta => spx_core::Method::BetaSampling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskingArg {
    Noise,
    Neighbor,
    Inpaint,
}

impl From<MaskingArg> for spx_core::MaskingKind {
    fn from(m: MaskingArg) -> Self {
        match m {
            MaskingArg::Noise => spx_core::MaskingKind::RemainingNoise,
            MaskingArg::Neighbor => spx_core::MaskingKind::NeighborNoise,
            MaskingArg::Inpaint => spx_core::MaskingKind::Inpaint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BandArg {
    Instances,
    Seeds,
}

/// Estimator settings shared by `explain` and `convergence`.
#[derive(Args, Debug, Clone)]
pub struct EstimatorArgs {
    /// Restrict matching to detections with this label.
    #[arg(long)]
    pub match_label: Option<String>,
    /// Ignore detections scoring below this.
    #[arg(long, default_value_t = 0.0)]
    pub min_score: f64,
    /// Redraw noise masks for every sample.
    #[arg(long)]
    pub resample_noise: bool,
    /// Beta distribution alpha.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// Beta distribution beta.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 4)]
    pub bootstrap_rounds: usize,
    #[arg(long, default_value_t = 0.75)]
    pub bootstrap_fraction: f64,
    /// Seconds to wait for each external detector response.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    /// Parallel detector handles.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Instance directory holding image.png, segmentation.png(+.json) and gt.json.
    #[arg(long, conflicts_with_all = ["image", "segmentation", "gt"])]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub segmentation: Option<PathBuf>,
    /// Label table; defaults to the segmentation path with a .json extension.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// A command speaking spx/1, or synthetic:<form>.
    #[arg(long)]
    pub detector: String,
    #[arg(long, value_enum, default_value = "beta")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "inpaint")]
    pub masking: MaskingArg,
    #[arg(long, default_value_t = 0)]
    pub abstraction: u8,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    /// Report files or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    pub reports: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConvergenceArgs {
    /// Directory of instance directories; each may hold a detector.txt.
    #[arg(long)]
    pub instances: PathBuf,
    /// Detector for instances without their own detector.txt.
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "kernelshap,beta")]
    pub methods: Vec<MethodArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "inpaint")]
    pub maskings: Vec<MaskingArg>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub levels: Vec<u8>,
    /// Comma-separated powers of two.
    #[arg(long, default_value = "8,16,32,64,128,256,512,1024,2048,4096")]
    pub ladder: String,
    /// Number of seeds, counted up from --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only the N instances with the largest ground-truth box.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long, value_enum, default_value = "instances")]
    pub band: BandArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// synthetic:<form>
    #[arg(long)]
    pub detector: String,
    /// Number of parts; defaults to the smallest the form accepts.
    #[arg(long)]
    pub parts: Option<usize>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Pedestrian scenes only.
    Pedestrian,
    /// Pedestrians with a detector.txt holding a level-1 interaction detector.
    Interaction,
}

#[derive(Subcommand, Debug)]
enum FixturesCommand {
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "pedestrian")]
    pub kind: FixtureKind,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Solver => 2,
        ErrorKind::Detector => 3,
        ErrorKind::Io => 4,
    }
}

fn fail(code: &str, message: &str, exit: u8) -> ExitCode {
    let line = serde_json::json!({ "code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(exit)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPX_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail("usage", first, 1);
        }
    };
    let result = match cli.command {
        Command::Explain(args) => commands::explain(&args),
        Command::Aggregate(args) => commands::aggregate(&args),
        Command::Convergence(args) => commands::convergence(&args),
        Command::Oracle(args) => commands::oracle(&args),
        Command::Fixtures(FixturesCommand::Generate(args)) => commands::generate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string(), exit_code(e.kind())),
    }
}
