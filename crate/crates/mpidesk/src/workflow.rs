//! Run, checkpoint and restart orchestration shared by the CLI and tests.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mpidesk_core::engine::Manifest;
use mpidesk_core::transport::NetworkFabric;
use mpidesk_core::{Error, Result};

use crate::apps::ring::{RingParams, RingProgram};
use crate::apps::wave::{WaveParams, WaveProgram};
use crate::apps::{ring, wave, AppBlob, CheckpointPlan, Outcome};
use crate::bench::{self, BenchOutput, PHASE_POST_RESTART};
use crate::report::LatencyRecord;
use crate::stack::{check_backend, launch, relaunch, render_tables, RankResult, Stack};

pub const DEFAULT_WAVE_STEPS: u64 = 1000;
pub const DEFAULT_WAVE_LENGTH: usize = 1024;
pub const DEFAULT_RING_LAPS: u64 = 64;
pub const DEFAULT_RANKS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum App {
    Wave,
    Ring,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub app: App,
    pub backend: String,
    pub stack: Stack,
    pub ranks: u32,
    /// Wave steps or ring laps; the app's default when absent.
    pub steps: Option<u64>,
    pub length: usize,
    pub checkpoint: Option<CheckpointPlan>,
    pub trace: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(app: App, backend: &str, stack: Stack) -> RunSpec {
        RunSpec {
            app,
            backend: backend.to_string(),
            stack,
            ranks: DEFAULT_RANKS,
            steps: None,
            length: DEFAULT_WAVE_LENGTH,
            checkpoint: None,
            trace: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub hash: String,
    pub checkpointed: bool,
    /// Per-rank translation tables (adapter and engine stacks).
    pub tables: Option<String>,
}

fn fabric_for(ranks: u32, trace: Option<&Path>) -> Result<Arc<NetworkFabric>> {
    let fabric = NetworkFabric::new(ranks)?;
    if let Some(path) = trace {
        fabric.set_trace(Box::new(BufWriter::new(File::create(path)?)));
    }
    Ok(Arc::new(fabric))
}

fn app_report(results: Vec<RankResult<Outcome>>) -> Result<RunReport> {
    let tables = render_tables(&results);
    let root = &results[0].output;
    let hash = root
        .hash
        .clone()
        .ok_or_else(|| Error::BackendFailure("rank 0 produced no result hash".into()))?;
    Ok(RunReport { hash, checkpointed: root.checkpointed, tables })
}

pub fn run_app(spec: &RunSpec) -> Result<RunReport> {
    check_backend(&spec.backend)?;
    let fabric = fabric_for(spec.ranks, spec.trace.as_deref())?;
    let results = match spec.app {
        App::Wave => {
            let params = WaveParams { length: spec.length, steps: spec.steps.unwrap_or(DEFAULT_WAVE_STEPS) };
            params.validate(spec.ranks, spec.checkpoint.as_ref().map(|c| c.at))?;
            let program = WaveProgram { params, checkpoint: spec.checkpoint.clone() };
            launch(spec.stack, &spec.backend, &fabric, &program)
        }
        App::Ring => {
            let params = RingParams { laps: spec.steps.unwrap_or(DEFAULT_RING_LAPS) };
            let program = RingProgram { params, checkpoint: spec.checkpoint.clone() };
            launch(spec.stack, &spec.backend, &fabric, &program)
        }
    };
    let results = results?;
    fabric.flush_trace()?;
    app_report(results)
}

/// What a restarted run finished with.
#[derive(Debug, Clone)]
pub enum Resumed {
    App(RunReport),
    Bench { records: Vec<LatencyRecord>, tables: Option<String> },
}

enum RankOutput {
    App(Outcome),
    Bench(BenchOutput),
}

/// Restarts the checkpoint in `dir` on `backend` and runs it to completion.
/// `ranks`, when given, must match the checkpoint.
pub fn restart_run(dir: &Path, backend: &str, ranks: Option<u32>, trace: Option<&Path>) -> Result<Resumed> {
    check_backend(backend)?;
    let nranks = match ranks {
        Some(n) => n,
        None => Manifest::read(dir)?.nranks,
    };
    let fabric = fabric_for(nranks, trace)?;
    let results = relaunch(dir, backend, &fabric, |_, session, blob| match AppBlob::from_bytes(&blob)? {
        AppBlob::Wave(s) => wave::resume(session, s).map(RankOutput::App),
        AppBlob::Ring(s) => ring::resume(session, s).map(RankOutput::App),
        AppBlob::Bench(s) => bench::resume(session, s).map(RankOutput::Bench),
    })?;
    fabric.flush_trace()?;

    let tables = render_tables(&results);
    let mut outputs = results.into_iter().map(|r| r.output);
    match outputs.next() {
        Some(RankOutput::Bench(b)) => Ok(Resumed::Bench {
            records: bench::records_from(&b.cells, backend, Stack::Engine, PHASE_POST_RESTART),
            tables,
        }),
        Some(RankOutput::App(root)) => {
            let hash = root
                .hash
                .ok_or_else(|| Error::BackendFailure("rank 0 produced no result hash".into()))?;
            Ok(Resumed::App(RunReport { hash, checkpointed: false, tables }))
        }
        None => Err(Error::BackendFailure("checkpoint has no ranks".into())),
    }
}
