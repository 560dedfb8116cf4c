use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dctdet_cli::{
    bench_decode, cmd_decode, cmd_eval, cmd_flops, cmd_inspect, infer, parse_arch, threads_from_env, BenchConfig,
    CliError, DecodeMode, InferOptions, Result, WeightSource,
};
use dctdet_core::detection::PostprocessConfig;
use dctdet_core::evaluation::write_detections;
use dctdet_core::EvalMode;

/// Object detection on JPEG DCT coefficients.
///
/// Set DCTDET_THREADS to cap the worker pool.
#[derive(Parser)]
#[command(name = "dctdet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print markers, tables, sampling layout and DCT plane shapes.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Decode to DCT planes (DCTT tensor file) or to RGB (PPM).
    Decode {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "partial")]
        mode: DecodeMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Time partial against full decoding over a directory of JPEGs.
    BenchDecode {
        dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 200)]
        per_run: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
    },
    /// Run a detector and print detections as JSON lines.
    Infer(InferArgs),
    /// Multiply-accumulate counts per architecture, as JSON.
    Flops {
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        arch: Option<String>,
        #[arg(long)]
        all: bool,
        /// Include a per-layer breakdown.
        #[arg(long)]
        layers: bool,
    },
    /// Mean average precision of detections against ground truth, as JSON.
    Eval {
        detections: PathBuf,
        ground_truth: PathBuf,
        #[arg(long, default_value = "voc11")]
        mode: EvalMode,
    },
}

#[derive(Args)]
struct InferArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    arch: String,
    /// WTS1 weight file.
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    weights: Option<PathBuf>,
    /// Use deterministic random weights instead of a file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.01)]
    score_thr: f64,
    #[arg(long, default_value_t = 0.45)]
    iou_thr: f64,
    #[arg(long, default_value_t = 200)]
    top_k: usize,
    #[arg(long, default_value_t = 200)]
    keep_top_k: usize,
    /// Including background.
    #[arg(long, default_value_t = 21)]
    num_classes: usize,
    /// Force the first-head L2 normalisation on or off.
    #[arg(long)]
    l2norm: Option<bool>,
    /// Write detections here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<Vec<u8>> {
    let out = match cli.command {
        Command::Inspect { file, json } => cmd_inspect(&file, json)?,
        Command::Decode { file, mode, out, json } => cmd_decode(&file, mode, &out, json)?,
        Command::BenchDecode {
            dir,
            runs,
            batch,
            per_run,
            warmup,
        } => {
            let report = bench_decode(
                &dir,
                &BenchConfig {
                    runs,
                    batch,
                    per_run,
                    warmup,
                },
            )?;
            format!("{}\n", serde_json::to_string(&report).expect("report serializes"))
        }
        Command::Flops { arch, layers, .. } => {
            let arch = arch.as_deref().map(parse_arch).transpose()?;
            cmd_flops(arch, layers)?
        }
        Command::Eval {
            detections,
            ground_truth,
            mode,
        } => cmd_eval(&detections, &ground_truth, mode)?,
        Command::Infer(a) => {
            let weights = match (a.weights, a.seed) {
                (Some(p), _) => WeightSource::File(p),
                (None, Some(s)) => WeightSource::Seed(s),
                (None, None) => unreachable!("clap requires one"),
            };
            let opts = InferOptions {
                arch: parse_arch(&a.arch)?,
                weights,
                post: PostprocessConfig {
                    score_threshold: a.score_thr,
                    iou_threshold: a.iou_thr,
                    top_k: a.top_k,
                    keep_top_k: a.keep_top_k,
                    ..Default::default()
                },
                num_classes: a.num_classes,
                l2norm: a.l2norm,
            };
            let mut buf = Vec::new();
            for f in &a.files {
                write_detections(&mut buf, &infer(f, &opts)?).expect("writing to memory");
            }
            if let Some(path) = a.out {
                dctdet_cli::write_file(&path, &buf)?;
                return Ok(Vec::new());
            }
            return Ok(buf);
        }
    };
    Ok(out.into_bytes())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = threads_from_env().and_then(|threads| {
        if let Some(n) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        run(cli)
    });
    match result {
        Ok(bytes) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(&bytes).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dctdet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
