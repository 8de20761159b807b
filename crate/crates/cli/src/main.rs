//! `microadam` command-line front end.
//!
//! Exit codes: 0 success, 1 output failure, 2 configuration error,
//! 3 numeric divergence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use microadam::checkpoint::{self, Snapshot};
use microadam::lowrank_ef::{run_lowrank_ef, LowRankEfConfig};
use microadam::theory::{
    c_constants, ef_bound, memory_footprints, quantizer_omega_worst, topk_q, vhat_bound,
    CompressionParams, GaloreSpec, MemorySpec,
};
use microadam::{problem_by_name, run, run_with, MicroAdam, OptimizerKind, RunSpec, RunStatus};

use config::RunConfig;

/// Environment variable naming the default directory for output files.
const OUT_DIR_VAR: &str = "MICROADAM_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "microadam", version, about = "MicroAdam optimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run optimizers on a test problem and write per-step CSV trajectories.
    Run(Box<RunArgs>),
    /// Print optimizer-state memory footprints.
    Memory(MemoryArgs),
    /// Print the convergence constants for a compressor pair.
    Constants(ConstantsArgs),
    /// Low-rank projection with error feedback on a quadratic matrix layer.
    EfLowrank(LowRankArgs),
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Flat JSON object with any of the flag names below as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// rosenbrock, quadratic, illcond, logistic or flat.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Comma-separated optimizers run in parallel; `--out` is then a directory.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// constant, inv_sqrt or log.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Dimension of the quadratic, logistic and flat problems.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Rescale gradients to at most this norm.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Sliding-window length.
    #[arg(long)]
    pub window: Option<usize>,
    /// Fraction of coordinates kept per step.
    #[arg(long)]
    pub density: Option<f64>,
    /// Error-feedback bit width.
    #[arg(long)]
    pub bits: Option<u32>,
    /// Top-K block length (default: global selection).
    #[arg(long)]
    pub block: Option<usize>,
    /// Quantization bucket length.
    #[arg(long)]
    pub bucket: Option<usize>,
    /// nearest or stochastic.
    #[arg(long)]
    pub rounding: Option<String>,
    /// Output CSV (a directory with `--sweep`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dump the final engine state (microadam only).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args, Debug)]
struct MemoryArgs {
    /// Built-in model: llama2-7b.
    #[arg(long, conflicts_with = "d")]
    model: Option<String>,
    /// Parameter count.
    #[arg(long)]
    d: Option<u64>,
    /// Window length.
    #[arg(long)]
    m: Option<u64>,
    /// Coordinates kept per gradient (default: 1% of d).
    #[arg(long)]
    k: Option<u64>,
    /// Add low-rank rows.
    #[arg(long)]
    galore: bool,
    #[arg(long, requires = "bits")]
    rank: Option<u64>,
    /// 8 or 16.
    #[arg(long, requires = "rank")]
    bits: Option<u32>,
    /// Sum of projected-layer row counts (custom models).
    #[arg(long)]
    layer_row_sums: Option<u64>,
    /// Bytes of unprojected parameters (custom models).
    #[arg(long, default_value_t = 0)]
    rank1_bytes: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    /// Contraction factor of the gradient compressor.
    #[arg(long, conflicts_with_all = ["k", "d"])]
    q: Option<f64>,
    /// Top-K count, with `--d`.
    #[arg(long, requires = "d")]
    k: Option<usize>,
    #[arg(long, requires = "k")]
    d: Option<usize>,
    /// Variance factor of the error quantizer.
    #[arg(long, conflicts_with_all = ["bits", "bucket"])]
    omega: Option<f64>,
    /// Quantizer bit width, with `--bucket`; uses the worst-case factor.
    #[arg(long, requires = "bucket")]
    bits: Option<u32>,
    #[arg(long, requires = "bits")]
    bucket: Option<usize>,
    /// Gradient norm bound.
    #[arg(long = "G", default_value_t = 1.0)]
    g: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct LowRankArgs {
    #[arg(long, default_value_t = 32)]
    rows: usize,
    #[arg(long, default_value_t = 32)]
    cols: usize,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    /// Steps between subspace refreshes.
    #[arg(long, default_value_t = 200, conflicts_with = "fixed")]
    period: usize,
    /// Keep the first subspace for the whole run.
    #[arg(long)]
    fixed: bool,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Marks failures to write results, as opposed to bad configuration.
#[derive(Debug)]
struct OutputFailure(PathBuf);

impl fmt::Display for OutputFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "writing {}", self.0.display())
    }
}

enum Outcome {
    Done,
    Diverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Memory(args) => cmd_memory(&args).map(|()| Outcome::Done),
        Command::Constants(args) => cmd_constants(&args).map(|()| Outcome::Done),
        Command::EfLowrank(args) => cmd_ef_lowrank(&args).map(|()| Outcome::Done),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(3),
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<OutputFailure>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn default_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    let fail = || OutputFailure(path.to_path_buf());
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(fail)?;
    }
    std::fs::write(path, bytes).with_context(fail)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// One row per step: `step,loss,grad_norm,error_norm,update_nnz,theta0..`.
fn trajectory_csv(traj: &microadam::Trajectory) -> String {
    let dim = traj.initial.len();
    let mut out = String::from("step,loss,grad_norm,error_norm,update_nnz");
    for i in 0..dim {
        write!(out, ",theta{i}").unwrap();
    }
    out.push('\n');
    for (r, theta) in traj.reports.iter().zip(&traj.iterates) {
        write!(
            out,
            "{},{},{},{},{}",
            r.step,
            num(r.loss),
            num(r.grad_norm),
            num(r.error_norm),
            r.update_nnz
        )
        .unwrap();
        for v in theta {
            write!(out, ",{}", num(*v)).unwrap();
        }
        out.push('\n');
    }
    if let RunStatus::Diverged { step, norm } = traj.status {
        writeln!(out, "# diverged at step {step}: iterate norm {}", num(norm)).unwrap();
    }
    out
}

fn cmd_run(args: &RunArgs) -> Result<Outcome> {
    let cfg = RunConfig::resolve(args)?;
    let sweep = args.sweep.is_some();
    if args.checkpoint.is_some() && (sweep || cfg.optimizers != [OptimizerKind::MicroAdam]) {
        bail!("--checkpoint needs a single microadam run");
    }
    // fail on unknown names before any thread starts
    problem_by_name(&cfg.problem, cfg.dim, cfg.seed)?;

    let target = |kind: OptimizerKind| -> PathBuf {
        let name = format!("{}_{}_s{}.csv", cfg.problem, kind, cfg.seed);
        match (&args.out, sweep) {
            (Some(out), false) => out.clone(),
            (Some(dir), true) => dir.join(name),
            (None, _) => default_dir().join(name),
        }
    };

    let results: Vec<Result<RunReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .optimizers
            .iter()
            .map(|&kind| {
                let cfg = &cfg;
                let path = target(kind);
                let checkpoint = args.checkpoint.as_deref();
                scope.spawn(move || run_one(cfg, kind, &path, checkpoint))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });

    let mut diverged = false;
    for r in results {
        let report = r?;
        if report.diverged {
            eprintln!("{}", report.message);
        } else {
            println!("{}", report.message);
        }
        diverged |= report.diverged;
    }
    Ok(if diverged {
        Outcome::Diverged
    } else {
        Outcome::Done
    })
}

struct RunReport {
    diverged: bool,
    message: String,
}

/// Runs one optimizer and writes its CSV.
fn run_one(
    cfg: &RunConfig,
    kind: OptimizerKind,
    path: &Path,
    checkpoint_path: Option<&Path>,
) -> Result<RunReport> {
    let problem = problem_by_name(&cfg.problem, cfg.dim, cfg.seed)?;
    let spec = RunSpec {
        schedule: cfg.schedule,
        seed: cfg.seed,
        clip: cfg.clip,
        ..RunSpec::new(kind, cfg.hyper.clone(), cfg.steps)
    };
    let traj = match checkpoint_path {
        Some(dump) => {
            let mut engine =
                MicroAdam::new(problem.dim(), cfg.hyper.clone(), spec.optimizer_seed())?;
            let traj = run_with(&spec, problem.as_ref(), &mut engine)?;
            let snap = Snapshot {
                params: traj.final_point().to_vec(),
                window: engine.window().clone(),
                error: engine.error_store().clone(),
            };
            write_output(dump, &checkpoint::encode(&snap)?)?;
            traj
        }
        None => run(&spec, problem.as_ref())?,
    };
    write_output(path, trajectory_csv(&traj).as_bytes())?;
    Ok(match traj.status {
        RunStatus::Completed => RunReport {
            diverged: false,
            message: format!(
                "{kind} on {}: {} steps, final loss {}, wrote {}",
                cfg.problem,
                traj.reports.len(),
                num(traj.final_loss()),
                path.display()
            ),
        },
        RunStatus::Diverged { step, norm } => RunReport {
            diverged: true,
            message: format!(
                "{kind} on {}: diverged at step {step} (iterate norm {}), partial trajectory in {}",
                cfg.problem,
                num(norm),
                path.display()
            ),
        },
    })
}

fn memory_spec(args: &MemoryArgs) -> Result<MemorySpec> {
    let mut spec = match (&args.model, args.d) {
        (Some(name), _) => match name.as_str() {
            "llama2-7b" => MemorySpec::llama2_7b(),
            other => bail!("unknown model '{other}' (built-in: llama2-7b)"),
        },
        (None, Some(d)) => MemorySpec {
            d,
            m: 10,
            k: d.div_ceil(100),
            galore: None,
        },
        (None, None) => bail!("give --model or --d"),
    };
    if let Some(m) = args.m {
        spec.m = m;
    }
    if let Some(k) = args.k {
        spec.k = k;
    }
    if args.galore && spec.galore.is_none() {
        let Some(sums) = args.layer_row_sums else {
            bail!("--galore on a custom model needs --layer-row-sums");
        };
        spec.galore = Some(GaloreSpec {
            layer_row_sums: sums,
            rank1_bytes: args.rank1_bytes,
            configs: vec![(256, 8), (1024, 8), (256, 16), (1024, 16)],
        });
    }
    if let (Some(g), Some(rank), Some(bits)) = (&mut spec.galore, args.rank, args.bits) {
        g.configs = vec![(rank, bits)];
    }
    if args.rank.is_some() && spec.galore.is_none() {
        bail!("--rank and --bits need --galore");
    }
    Ok(spec)
}

fn cmd_memory(args: &MemoryArgs) -> Result<()> {
    let rows = memory_footprints(&memory_spec(args)?)?;
    match args.format {
        Format::Csv => {
            println!("optimizer,bytes,gib");
            for r in &rows {
                println!("{},{},{}", r.label, r.bytes, r.gib());
            }
        }
        Format::Text => {
            println!("{:<20} {:>16} {:>10}", "optimizer", "bytes", "GiB");
            for r in &rows {
                println!("{:<20} {:>16} {:>10.2}", r.label, r.bytes, r.gib());
            }
        }
    }
    Ok(())
}

fn cmd_constants(args: &ConstantsArgs) -> Result<()> {
    let q = match (args.q, args.k, args.d) {
        (Some(q), _, _) => q,
        (None, Some(k), Some(d)) => topk_q(k, d)?,
        _ => bail!("give --q or both --k and --d"),
    };
    let omega = match (args.omega, args.bits, args.bucket) {
        (Some(w), _, _) => w,
        (None, Some(bits), Some(bucket)) => quantizer_omega_worst(bits, bucket)?,
        _ => bail!("give --omega or both --bits and --bucket"),
    };
    let cp = match CompressionParams::new(q, omega) {
        Err(microadam::Error::CompressionCondition { q_omega }) => bail!(
            "q_ω = (1+ω)q = {} ≥ 1; convergence requires q_ω < 1",
            (q_omega * 1e6).round() / 1e6
        ),
        other => other?,
    };
    let c = c_constants(&cp, args.g, args.eps, args.beta1)?;
    let rows = [
        ("q", q),
        ("omega", omega),
        ("q_omega", cp.q_omega()),
        ("C0", c.c0),
        ("C1", c.c1),
        ("C2", c.c2),
        ("ef_bound", ef_bound(&cp, args.g)),
        ("vhat_bound", vhat_bound(&cp, args.g)),
    ];
    match args.format {
        Format::Csv => {
            println!("name,value");
            for (name, v) in rows {
                println!("{name},{v}");
            }
        }
        Format::Text => {
            for (name, v) in rows {
                println!("{name:<12} {v}");
            }
        }
    }
    Ok(())
}

fn cmd_ef_lowrank(args: &LowRankArgs) -> Result<()> {
    let cfg = LowRankEfConfig {
        rows: args.rows,
        cols: args.cols,
        rank: args.rank,
        period: (!args.fixed).then_some(args.period),
        steps: args.steps,
        lr: args.lr,
        seed: args.seed,
        ..LowRankEfConfig::default()
    };
    let records = run_lowrank_ef(&cfg)?;
    let mut out = String::from("step,loss,grad_norm,error_norm,projected_error_norm,refreshed\n");
    for r in &records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            num(r.loss),
            num(r.grad_norm),
            num(r.error_norm),
            num(r.projected_error_norm),
            u8::from(r.refreshed)
        )
        .unwrap();
    }
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| default_dir().join(format!("ef_lowrank_s{}.csv", args.seed)));
    write_output(&path, out.as_bytes())?;
    println!("{} steps, wrote {}", records.len(), path.display());
    Ok(())
}
