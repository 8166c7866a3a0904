use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpidesk::apps::CheckpointPlan;
use mpidesk::bench::{self, BenchConfig, Op};
use mpidesk::report::emit_report;
use mpidesk::workflow::{self, App, Resumed, RunSpec};
use mpidesk::Stack;
use mpidesk_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mpidesk", version, about = "Desk-scale message passing with ABI translation and checkpoint/restart")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a mini-app, optionally checkpointing part way through.
    Run(RunArgs),
    /// Resume a checkpointed run, possibly on another backend.
    Restart(RestartArgs),
    /// Collective latency sweep across backends and stacks.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    app: App,
    #[arg(long, env = "MPIDESK_BACKEND", default_value = "index")]
    backend: String,
    #[arg(long, value_enum, default_value = "native")]
    stack: Stack,
    #[arg(long, default_value_t = workflow::DEFAULT_RANKS)]
    ranks: u32,
    #[arg(long, requires = "ckpt_dir")]
    ckpt_at: Option<u64>,
    #[arg(long, requires = "ckpt_at")]
    ckpt_dir: Option<PathBuf>,
    /// Wave steps or ring laps.
    #[arg(long)]
    steps: Option<u64>,
    /// Global wave length; must be a multiple of --ranks.
    #[arg(long, default_value_t = workflow::DEFAULT_WAVE_LENGTH)]
    length: usize,
    /// Append one line per message post and match to FILE.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Write every rank's translation table (TSV) to FILE.
    #[arg(long, value_name = "FILE")]
    dump_table: Option<PathBuf>,
}

#[derive(Args)]
struct RestartArgs {
    #[arg(long)]
    ckpt_dir: PathBuf,
    #[arg(long, env = "MPIDESK_BACKEND", default_value = "index")]
    backend: String,
    /// Must match the checkpoint when given.
    #[arg(long)]
    ranks: Option<u32>,
    /// Report path for a resumed benchmark [default: <ckpt-dir>/post-restart.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    dump_table: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OpChoice {
    Alltoall,
    Bcast,
    Allreduce,
    All,
}

impl OpChoice {
    fn ops(self) -> Vec<Op> {
        match self {
            OpChoice::Alltoall => vec![Op::Alltoall],
            OpChoice::Bcast => vec![Op::Bcast],
            OpChoice::Allreduce => vec![Op::Allreduce],
            OpChoice::All => Op::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "all")]
    op: OpChoice,
    #[arg(long, default_value_t = workflow::DEFAULT_RANKS)]
    ranks: u32,
    #[arg(long, default_value_t = bench::DEFAULT_REPEATS)]
    repeats: u32,
    /// Message sizes in bytes, comma separated [default: 1,2,4,...,1048576].
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = bench::DEFAULT_ITERATIONS)]
    iterations: u32,
    #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
    warmup: u32,
    /// Skip the per-iteration oracle comparison.
    #[arg(long)]
    no_verify: bool,
    #[arg(long, default_value_t = bench::DEFAULT_PAUSE_MS)]
    pause_after_warmup_ms: u64,
    /// Checkpoint during the post-warmup pause (engine stack only).
    #[arg(long, requires = "ckpt_dir")]
    ckpt_during_pause: bool,
    #[arg(long)]
    ckpt_dir: Option<PathBuf>,
    /// Backends to sweep [default: index,ref; with --ckpt-during-pause,
    /// $MPIDESK_BACKEND or index].
    #[arg(long, value_delimiter = ',')]
    backends: Option<Vec<String>>,
    /// Stacks to sweep [default: all three; with --ckpt-during-pause, engine].
    #[arg(long, value_enum, value_delimiter = ',')]
    stacks: Option<Vec<Stack>>,
    #[arg(long, default_value_t = bench::DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_tables(path: Option<&Path>, tables: Option<String>) -> Result<()> {
    if let Some(path) = path {
        let tables = tables.ok_or_else(|| {
            Error::BackendFailure("the native stack has no translation table to dump".into())
        })?;
        fs::write(path, tables)?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let spec = RunSpec {
        app: args.app,
        backend: args.backend.clone(),
        stack: args.stack,
        ranks: args.ranks,
        steps: args.steps,
        length: args.length,
        checkpoint: args.ckpt_at.zip(args.ckpt_dir).map(|(at, dir)| CheckpointPlan { at, dir }),
        trace: args.trace,
    };
    let report = workflow::run_app(&spec)?;
    write_tables(args.dump_table.as_deref(), report.tables)?;
    if let Some(plan) = spec.checkpoint.filter(|_| report.checkpointed) {
        println!("checkpoint step={} dir={}", plan.at, plan.dir.display());
    }
    println!("hash={}", report.hash);
    Ok(())
}

fn restart(args: RestartArgs) -> Result<()> {
    match workflow::restart_run(&args.ckpt_dir, &args.backend, args.ranks, args.trace.as_deref())? {
        Resumed::App(report) => {
            write_tables(args.dump_table.as_deref(), report.tables)?;
            println!("hash={}", report.hash);
        }
        Resumed::Bench { records, tables } => {
            write_tables(args.dump_table.as_deref(), tables)?;
            let out = args.out.unwrap_or_else(|| args.ckpt_dir.join("post-restart.csv"));
            fs::write(&out, emit_report(&records))?;
            println!("report={} rows={}", out.display(), records.len());
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let config = BenchConfig {
        ops: args.op.ops(),
        sizes: args.sizes.unwrap_or_else(bench::default_sizes),
        iterations: args.iterations,
        warmup: args.warmup,
        repeats: args.repeats,
        verify: !args.no_verify,
        pause_after_warmup_ms: args.pause_after_warmup_ms,
        seed: args.seed,
    };
    let checkpoint_dir = args.ckpt_dir.filter(|_| args.ckpt_during_pause);
    let backends = match (args.backends, &checkpoint_dir) {
        (Some(b), _) => b,
        (None, Some(_)) => vec![std::env::var("MPIDESK_BACKEND").unwrap_or_else(|_| "index".into())],
        (None, None) => mpidesk_core::backends::BACKEND_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let stacks = match (args.stacks, &checkpoint_dir) {
        (Some(s), _) => s,
        (None, Some(_)) => vec![Stack::Engine],
        (None, None) => Stack::ALL.to_vec(),
    };
    if checkpoint_dir.is_some() && (backends.len() != 1 || stacks != [Stack::Engine]) {
        return Err(Error::BackendFailure(
            "--ckpt-during-pause needs exactly one backend and the engine stack".into(),
        ));
    }
    for b in &backends {
        mpidesk::stack::check_backend(b)?;
    }
    let names: Vec<&str> = backends.iter().map(String::as_str).collect();
    let run = bench::run_osu(&config, args.ranks, &names, &stacks, checkpoint_dir.clone())?;
    fs::write(&args.out, emit_report(&run.records))?;
    if let Some(dir) = checkpoint_dir {
        println!("checkpoint dir={}", dir.display());
    }
    println!("report={} rows={}", args.out.display(), run.records.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Restart(a) => restart(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
