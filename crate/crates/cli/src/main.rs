use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use polymeasure::grading::GradeThresholds;
use polymeasure::metrics::MatchConfig;
use polymeasure::pipeline::{self, EvalOptions};
use polymeasure::synth::{self, SynthConfig};
use polymeasure::{gradcheck, io, DistanceKind, Error, Result};

#[derive(Parser)]
#[command(name = "polymeasure", version, about = "Polyline detection evaluation and Vd:Cd measurement")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distance {
    Chamfer,
    Emd,
}

#[derive(Subcommand)]
enum Command {
    /// Score predicted polylines against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        chamfer_thresh: f64,
        #[arg(long, default_value_t = 0.5)]
        conf_thresh: f64,
        #[arg(long, value_enum, default_value = "chamfer")]
        distance: Distance,
        /// Directory of ground-truth `<id>.pgm` label maps (enables Dice/IoU).
        #[arg(long, requires = "pred_masks")]
        gt_masks: Option<PathBuf>,
        /// Directory of predicted `<id>.pgm` label maps.
        #[arg(long, requires = "gt_masks")]
        pred_masks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grade Vd:Cd ratios from a ratio list or an evaluation report.
    #[command(group(ArgGroup::new("source").required(true).args(["ratios", "report"])))]
    Grade {
        #[arg(long)]
        ratios: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure villi/crypt lengths and crypt depth from PGM label maps.
    MeasureMask {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 20)]
        min_area: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic cohort (gt.jsonl, pred.jsonl, masks/).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Eval {
            gt,
            pred,
            chamfer_thresh,
            conf_thresh,
            distance,
            gt_masks,
            pred_masks,
            out,
        } => {
            let opts = EvalOptions {
                matching: MatchConfig {
                    chamfer_threshold: chamfer_thresh,
                    confidence_threshold: conf_thresh,
                    distance: match distance {
                        Distance::Chamfer => DistanceKind::ChamferSquared,
                        Distance::Emd => DistanceKind::EarthMover,
                    },
                    ..MatchConfig::default()
                },
                thresholds: GradeThresholds::default(),
                gt_masks,
                pred_masks,
            };
            let report = pipeline::run_eval_files(gt, pred, &opts)?;
            emit(out.as_deref(), &report.to_json()?)
        }
        Command::Grade { ratios, report, out } => {
            let t = GradeThresholds::default();
            let grades = match (ratios, report) {
                (Some(r), _) => pipeline::grade_ratios(&io::parse_ratios_str(&std::fs::read_to_string(r)?)?, &t)?,
                (None, Some(r)) => pipeline::grade_report(&std::fs::read_to_string(r)?, &t)?,
                (None, None) => unreachable!("clap enforces one source"),
            };
            emit(out.as_deref(), &to_json(&grades)?)
        }
        Command::MeasureMask { inputs, min_area, out } => {
            let reports = pipeline::run_measure_mask(&inputs, min_area, &GradeThresholds::default())?;
            emit(out.as_deref(), &to_json(&reports)?)
        }
        Command::Synth { config, out_dir } => {
            let cfg = SynthConfig::from_json(&std::fs::read_to_string(config)?)?;
            synth::generate(&cfg)?.write(out_dir)
        }
        Command::Gradcheck { trials, step, tol, seed } => {
            if trials == 0 || !(step > 0.0) || !(tol > 0.0) {
                return Err(Error::InvalidArgument("trials, step and tol must be positive".into()));
            }
            let reports = gradcheck::gradcheck_all(trials, step, tol, seed);
            let text: String = reports.iter().map(|r| format!("{r}\n")).collect();
            emit(None, &text)?;
            match reports.iter().filter(|r| !r.passed).count() {
                0 => Ok(()),
                n => Err(Error::Invariant(format!("{n} gradient check(s) failed"))),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
