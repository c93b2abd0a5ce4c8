//! The `npa3d` command-line tool.
//!
//! Commands: `gen-data`, `train-ae`, `train-img`, `infer`, `eval`, `report`.
//! Global flags `--config`, `--seed` and `--out` may appear before or after
//! the command. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

pub mod config;
pub mod eval;
pub mod report;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::flowmatch::{FlowConfig, TimestepSampling};
use crate::geometry::io;
use crate::synthdata::{build_dataset, load_split, Normalization};
use crate::util::{derive_seed, seeded_rng};
use config::{AlignMode, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "npa3d", version, about = "Complete point clouds from unposed images")]
struct Cli {
    /// JSON run configuration (sections: data, stage1, stage2, train, flow, eval).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, or the checkpoint / cloud file for train-* and infer.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData,
    /// Train the point autoencoder.
    TrainAe(TrainArgs),
    /// Train the image transformer against a frozen autoencoder.
    TrainImg(TrainImgArgs),
    /// Generate a point cloud from rendered views.
    Infer(InferArgs),
    /// Evaluate a model on a dataset split.
    Eval(EvalArgs),
    /// Join eval directories into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Total optimizer steps.
    #[arg(long)]
    steps: u64,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainImgArgs {
    #[command(flatten)]
    common: TrainArgs,
    /// Frozen stage-1 checkpoint.
    #[arg(long)]
    stage1: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplingArg {
    Uniform,
    Cosine,
}

#[derive(Debug, Args)]
struct FlowArgs {
    /// Euler step size.
    #[arg(long = "fm-step")]
    fm_step: Option<f64>,
    /// Training timestep distribution.
    #[arg(long = "fm-tsample", value_enum)]
    fm_tsample: Option<SamplingArg>,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Comma-separated NIM renders, view 0 first.
    #[arg(long, value_delimiter = ',', required = true)]
    images: Vec<PathBuf>,
    #[arg(long)]
    stage1: PathBuf,
    #[arg(long)]
    stage2: PathBuf,
    #[arg(long, default_value_t = 2048)]
    points: usize,
    /// `scale,ox,oy,oz` of the sample normalisation, to output scene units.
    #[arg(long)]
    norm: Option<String>,
    #[command(flatten)]
    flow: FlowArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Ae,
    Img,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlignArg {
    None,
    Ts,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    stage: StageArg,
    #[arg(long)]
    stage1: PathBuf,
    /// Required for `--stage img`.
    #[arg(long)]
    stage2: Option<PathBuf>,
    #[arg(long, value_enum)]
    align: Option<AlignArg>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    flow: FlowArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Eval output directories (comma-separated or repeated).
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Runs the process arguments and returns the exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| Error::Config("--out is required".into()))
}

fn apply_flow(flow: &mut FlowConfig, args: &FlowArgs) -> Result<()> {
    if let Some(s) = args.fm_step {
        flow.step_size = s;
    }
    if let Some(t) = args.fm_tsample {
        flow.t_sampling = match t {
            SamplingArg::Uniform => TimestepSampling::Uniform,
            SamplingArg::Cosine => TimestepSampling::Cosine,
        };
    }
    flow.validate().map_err(|e| Error::Config(e.to_string()))
}

fn parse_norm(s: &str) -> Result<Normalization> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--norm {s:?}: {e}")))?;
    match v.as_slice() {
        [scale, ox, oy, oz] if *scale > 0.0 => Ok(Normalization {
            scale: *scale,
            offset: [*ox, *oy, *oz],
        }),
        _ => Err(Error::Config(format!("--norm expects scale,ox,oy,oz with scale > 0, got {s:?}"))),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::GenData => {
            let out = require_out(cli.out)?;
            if let Some(s) = cli.seed {
                cfg.data.seed = s;
            }
            let manifest = build_dataset(&cfg.data, &out)?;
            println!("{}", manifest.display());
        }
        Command::TrainAe(a) => {
            let req = train::TrainRequest {
                manifest: a.data,
                out: require_out(cli.out)?,
                steps: a.steps,
                seed,
                resume: a.resume,
                config: cfg,
            };
            let s = train::train_ae(&req)?;
            report_training(&req, &s);
        }
        Command::TrainImg(a) => {
            let req = train::TrainRequest {
                manifest: a.common.data,
                out: require_out(cli.out)?,
                steps: a.common.steps,
                seed,
                resume: a.common.resume,
                config: cfg,
            };
            let s = train::train_img(&req, &a.stage1)?;
            report_training(&req, &s);
        }
        Command::Infer(a) => {
            let out = require_out(cli.out)?;
            apply_flow(&mut cfg.flow, &a.flow)?;
            let norm = a.norm.as_deref().map(parse_norm).transpose()?;
            let stage1 = train::load_stage1(&a.stage1)?;
            let stage2 = train::load_stage2(&a.stage2, &stage1)?;
            let images = a.images.iter().map(|p| io::read_nim(p)).collect::<Result<Vec<_>>>()?;
            let mut rng = seeded_rng(derive_seed(seed, 0x1afe));
            let inf = stage2.infer(&stage1, &images, a.points, &cfg.flow, norm.as_ref(), &mut rng)?;
            io::write_npc(&out, &inf.cloud)?;
            let units = if inf.normalized { "normalized units" } else { "scene units" };
            println!("{} ({} points, {units})", out.display(), inf.cloud.len());
        }
        Command::Eval(a) => {
            let out = require_out(cli.out)?;
            apply_flow(&mut cfg.flow, &a.flow)?;
            if let Some(al) = a.align {
                cfg.eval.align = match al {
                    AlignArg::None => AlignMode::None,
                    AlignArg::Ts => AlignMode::Ts,
                };
            }
            if let Some(p) = a.points {
                cfg.eval.points = p;
            }
            if let Some(s) = a.split {
                cfg.eval.split = s;
            }
            if a.limit.is_some() {
                cfg.eval.limit = a.limit;
            }
            let stage1 = train::load_stage1(&a.stage1)?;
            let stage2 = match (a.stage, &a.stage2) {
                (StageArg::Img, Some(p)) => Some(train::load_stage2(p, &stage1)?),
                (StageArg::Img, None) => return Err(Error::Config("--stage img needs --stage2".into())),
                (StageArg::Ae, _) => None,
            };
            let predictor = match &stage2 {
                Some(s2) => eval::Predictor::Img(&stage1, s2),
                None => eval::Predictor::Ae(&stage1),
            };
            let mut samples = load_split(&a.data, Some(&cfg.eval.split))?;
            if let Some(l) = cfg.eval.limit {
                samples.truncate(l);
            }
            let s = eval::run_eval(predictor, &samples, &cfg.eval, &cfg.flow, seed, &out)?;
            for (method, m) in &s.aggregate.methods {
                let cd = m.get("cd").map_or(f64::NAN, |x| x.mean);
                let hr = m.get("hole_ratio").map_or(f64::NAN, |x| x.mean);
                println!("{method:>14}: cd {cd:.5}  hole_ratio {hr:.4}");
            }
            println!("{}", s.aggregate_path.display());
        }
        Command::Report(a) => {
            let out = require_out(cli.out)?;
            let s = report::run_report(&a.runs, &out)?;
            println!("{}", s.table.display());
        }
    }
    Ok(())
}

fn report_training(req: &train::TrainRequest, s: &train::TrainSummary) {
    if let Some(last) = s.losses.last() {
        println!("step {} loss {:.6} ({:.1} s)", last.step, last.loss, last.wall_time);
    }
    println!("{}", req.out.display());
}
