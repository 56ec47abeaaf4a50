use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod files;
mod rl;

use files::{read_config, AtomicFile};
use popart::harness::{
    best_cells_from_csv, read_csv, render_svg, run_grid_with, CsvRows, CsvSink, ExperimentConfig,
    Profile, RunRecord, Summary,
};
use popart::verify;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<popart::Error> for CliError {
    fn from(e: popart::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "popart",
    version,
    about = "Adaptive target normalization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Ci,
    Full,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Ci => Profile::Ci,
            ProfileArg::Full => Profile::Full,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binary regression grid search: results.csv, summary.json, <method>.svg.
    Binreg {
        #[command(flatten)]
        common: Common,
        /// Built-in grid used when no config file is given.
        #[arg(long, value_enum, default_value = "ci")]
        profile: ProfileArg,
        /// Worker threads [default: available cores].
        #[arg(long, env = "POPART_WORKERS")]
        workers: Option<usize>,
        /// Skip the per-method SVG plots.
        #[arg(long)]
        no_plots: bool,
    },
    /// Double Q-learning with Pop-Art on a chain MDP: rl_metrics.csv, rl_summary.json.
    RlDemo {
        #[command(flatten)]
        common: Common,
        /// Training steps (overrides the config).
        #[arg(long)]
        steps: Option<usize>,
        /// Terminal reward of the chain (overrides the config).
        #[arg(long)]
        reward_scale: Option<f64>,
    },
    /// Fixed-seed property checks; exits 1 if any fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Renders <method>.svg for each method's best cell from an existing results CSV.
    Plot {
        /// Results CSV [default: <out>/results.csv].
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Smoothing window in samples.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Binreg {
            common,
            profile,
            workers,
            no_plots,
        } => binreg(&common, profile.into(), workers, !no_plots),
        Command::RlDemo {
            common,
            steps,
            reward_scale,
        } => rl::run(&common, steps, reward_scale),
        Command::Verify { seed } => run_verify(seed),
        Command::Plot {
            results,
            out,
            window,
        } => {
            let results = results.unwrap_or_else(|| out.join("results.csv"));
            plot(&results, &out, window)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("popart: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn binreg(common: &Common, profile: Profile, workers: Option<usize>, plots: bool) -> CliResult {
    let mut cfg = match &common.config {
        Some(path) => read_config::<ExperimentConfig>(path)?,
        None => ExperimentConfig::for_profile(profile),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let workers = match workers {
        Some(0) => return Err(CliError::Config("workers must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    ensure_dir(&common.out)?;

    let csv_path = common.out.join("results.csv");
    let file = AtomicFile::create(&csv_path)?;
    let mut sink = CsvSink::new(file.writer()).map_err(io_err(&csv_path))?;
    let mut io_failure = None;
    let mut kept: Vec<RunRecord> = Vec::new();
    let outcome = run_grid_with(&cfg, workers, |record| match cfg.csv_rows {
        CsvRows::All => {
            if io_failure.is_none() {
                io_failure = sink.write_record(record).err();
            }
        }
        CsvRows::Best => kept.push(record.clone()),
    })?;
    if let Some(e) = io_failure {
        return Err(io_err(&csv_path)(e));
    }
    if cfg.csv_rows == CsvRows::Best {
        let best: Vec<_> = cfg
            .methods
            .iter()
            .filter_map(|&m| outcome.best(m))
            .map(|c| c.cell())
            .collect();
        for r in kept.iter().filter(|r| best.contains(&r.cell)) {
            sink.write_record(r).map_err(io_err(&csv_path))?;
        }
    }
    sink.finish().map_err(io_err(&csv_path))?;
    file.commit()?;

    let summary = Summary::new(&outcome, &cfg.methods);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    files::write_atomic(&common.out.join("summary.json"), json.as_bytes())?;

    for b in &summary.best {
        let beta = b
            .beta
            .map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
        let auc = b
            .median_auc
            .map_or_else(|| "diverged".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<15} alpha={:.3e} beta={beta:<10} median_auc={auc}",
            b.method.as_str(),
            b.alpha
        );
    }
    if plots {
        for &m in &cfg.methods {
            let Some(cell) = outcome.best(m) else {
                continue;
            };
            let Some(band) = &cell.band else { continue };
            let svg = render_svg(&plot_title(m.as_str(), cell.alpha, cell.beta), band)?;
            files::write_atomic(&common.out.join(format!("{m}.svg")), svg.as_bytes())?;
        }
    }
    Ok(())
}

fn plot_title(method: &str, alpha: f64, beta: Option<f64>) -> String {
    match beta {
        Some(b) => format!("{method}: alpha = {alpha:.2e}, beta = {b:.2e}"),
        None => format!("{method}: alpha = {alpha:.2e}"),
    }
}

fn run_verify(seed: u64) -> CliResult {
    let checks = verify::run_all(seed)?;
    print!("{}", verify::format_table(&checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} checks failed",
            checks.len()
        )));
    }
    Ok(())
}

fn plot(results: &Path, out: &Path, window: usize) -> CliResult {
    if window == 0 {
        return Err(CliError::Config("window must be positive".into()));
    }
    let file = std::fs::File::open(results).map_err(io_err(results))?;
    let rows = read_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", results.display())))?;
    ensure_dir(out)?;
    for cell in best_cells_from_csv(&rows, &[10.0, 50.0, 90.0], window)? {
        let svg = render_svg(
            &plot_title(cell.method.as_str(), cell.alpha, cell.beta),
            &cell.band,
        )?;
        let path = out.join(format!("{}.svg", cell.method));
        files::write_atomic(&path, svg.as_bytes())?;
        println!("{}", path.display());
    }
    Ok(())
}
