use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use monoball::evaluation::{evaluate, AccuracyOptions, DEFAULT_WINDOW};
use monoball::io::{read_ground_truth, read_trajectory, Config, FrameReader};
use monoball::state_model::ModelParams;
use monoball_cli::{exit_code, simulate_to, sweep, sweep_csv, sweep_table, track};

/// Monocular 3D ball tracking with a multi-mode beam filter.
#[derive(Parser)]
#[command(name = "monoball", version)]
struct Cli {
    /// TOML configuration; missing keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a frame stream and write one trajectory record per frame.
    Track {
        /// Frame stream; `-` or nothing reads standard input.
        input: Option<PathBuf>,
        #[command(flatten)]
        filter: FilterArgs,
        /// Trajectory output; standard output if omitted.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic clip and its ground truth.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        /// Clip length in frames.
        #[arg(long)]
        duration: Option<u64>,
        /// Frame stream; standard output if omitted.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Ground-truth sidecar; defaults to the stream path with a
        /// `.truth.jsonl` suffix.
        #[arg(long, value_name = "PATH")]
        truth: Option<PathBuf>,
    },
    /// Score a trajectory against ground truth.
    Eval {
        pred: PathBuf,
        truth: PathBuf,
        /// Event matching tolerance in frames.
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: u64,
        /// Leave frames without a ball detection out of the accuracy.
        #[arg(long)]
        exclude_occluded: bool,
    },
    /// Track one clip at several lags and tabulate the scores.
    Sweep {
        input: PathBuf,
        truth: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,10,25,50")]
        lags: Vec<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: u64,
        /// Also write the table as CSV.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Add a throughput column. Timings vary from run to run.
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Args)]
struct FilterArgs {
    /// Frames of delay before an estimate is final.
    #[arg(long)]
    lag: Option<usize>,
    /// Hypotheses kept per frame.
    #[arg(long)]
    beam: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn model_params(cfg: &Config, lag: Option<usize>, beam: Option<usize>) -> Result<ModelParams> {
    let mut p = cfg.model_params();
    p.lag = lag.unwrap_or(p.lag);
    p.beam_width = beam.unwrap_or(p.beam_width);
    p.validate()?;
    Ok(p)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn truth_path(stream: Option<&Path>, truth: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(t) = truth {
        return Ok(t);
    }
    let Some(stream) = stream else {
        bail!("--truth is required when the stream goes to standard output");
    };
    let stem = stream.file_stem().unwrap_or_default().to_string_lossy();
    Ok(stream.with_file_name(format!("{stem}.truth.jsonl")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Track { input, filter, output: out } => {
            let params = model_params(&cfg, filter.lag, filter.beam)?;
            let sink = output(out.as_deref())?;
            let summary = match input.filter(|p| p.as_os_str() != "-") {
                Some(p) => track(open(&p)?, sink, params)?,
                None => track(BufReader::new(io::stdin()), sink, params)?,
            };
            log::info!("{} frames, {} records, {} reseeds", summary.frames, summary.records, summary.reseeds);
        }
        Command::Simulate { seed, duration, output: out, truth } => {
            let mut sim = cfg.sim_config();
            sim.seed = seed.unwrap_or(sim.seed);
            sim.duration = duration.unwrap_or(sim.duration);
            sim.validate()?;
            let truth = create(&truth_path(out.as_deref(), truth)?)?;
            let n = simulate_to(&sim, output(out.as_deref())?, truth)?;
            log::info!("{n} frames simulated");
        }
        Command::Eval { pred, truth, window, exclude_occluded } => {
            let pred = read_trajectory(open(&pred)?)?;
            let gt = read_ground_truth(open(&truth)?)?;
            let opts = AccuracyOptions { exclude_occluded, ..AccuracyOptions::default() };
            let report = evaluate(&pred, &gt, window, opts)?;
            print!("{}", report.to_table());
        }
        Command::Sweep { input, truth, lags, beam, window, output: out, timing } => {
            let params = model_params(&cfg, None, beam)?;
            let frames = FrameReader::new(open(&input)?).collect::<Result<Vec<_>, _>>()?;
            let gt = read_ground_truth(open(&truth)?)?;
            let rows = sweep(&frames, &gt, params, &lags, window, timing)?;
            print!("{}", sweep_table(&rows));
            if let Some(p) = out {
                let mut w = create(&p)?;
                w.write_all(sweep_csv(&rows).as_bytes())?;
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MONOBALL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
