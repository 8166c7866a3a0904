//! Running one generic rank program on a chosen stack.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use mpidesk_core::adapter::AdapterInstance;
use mpidesk_core::api::MessagePassing;
use mpidesk_core::backends::NativeBinding;
use mpidesk_core::engine::{restart, EngineSession};
use mpidesk_core::transport::{run_ranks, NetworkFabric, RankId};
use mpidesk_core::{Error, Result};

/// Which layers sit between the application and the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum Stack {
    Native,
    Adapter,
    Engine,
}

impl Stack {
    pub const ALL: [Stack; 3] = [Stack::Native, Stack::Adapter, Stack::Engine];

    pub fn name(self) -> &'static str {
        match self {
            Stack::Native => "native",
            Stack::Adapter => "adapter",
            Stack::Engine => "engine",
        }
    }

    pub fn from_name(name: &str) -> Option<Stack> {
        Stack::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Stack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-rank body that is generic over the stack it runs on.
pub trait RankProgram: Sync {
    type Output: Send;

    fn run<M: MessagePassing>(&self, rank: RankId, m: &mut M) -> Result<Self::Output>;
}

/// What one rank produced, plus its translation table when the stack has
/// one.
#[derive(Debug)]
pub struct RankResult<T> {
    pub output: T,
    pub table: Option<String>,
}

pub fn launch<P: RankProgram>(
    stack: Stack,
    backend: &str,
    fabric: &Arc<NetworkFabric>,
    program: &P,
) -> Result<Vec<RankResult<P::Output>>> {
    run_ranks(fabric, |rank, f| match stack {
        Stack::Native => {
            let mut m = NativeBinding::new(backend, f, rank)?;
            Ok(RankResult { output: program.run(rank, &mut m)?, table: None })
        }
        Stack::Adapter => {
            let mut m = AdapterInstance::bind_backend(backend, f, rank)?;
            let output = program.run(rank, &mut m)?;
            Ok(RankResult { output, table: Some(m.dump_table()) })
        }
        Stack::Engine => {
            let mut m = EngineSession::launch(backend, f, rank)?;
            let output = program.run(rank, &mut m)?;
            Ok(RankResult { output, table: Some(m.adapter().dump_table()) })
        }
    })
}

/// Restarts every rank from `dir` under `backend` and hands each session
/// its application blob.
pub fn relaunch<T, F>(dir: &Path, backend: &str, fabric: &Arc<NetworkFabric>, body: F) -> Result<Vec<RankResult<T>>>
where
    T: Send,
    F: Fn(RankId, &mut EngineSession, Vec<u8>) -> Result<T> + Sync,
{
    run_ranks(fabric, |rank, f| {
        let (mut session, blob) = restart(dir, backend, f, rank)?;
        let output = body(rank, &mut session, blob)?;
        Ok(RankResult { output, table: Some(session.adapter().dump_table()) })
    })
}

/// Joins per-rank translation tables into one TSV document.
pub fn render_tables<T>(results: &[RankResult<T>]) -> Option<String> {
    let mut out = String::new();
    for (rank, r) in results.iter().enumerate() {
        out.push_str(&format!("# rank {rank}\n"));
        out.push_str(r.table.as_deref()?);
    }
    Some(out)
}

pub fn check_backend(name: &str) -> Result<()> {
    if mpidesk_core::backends::BACKEND_NAMES.contains(&name) {
        Ok(())
    } else {
        Err(Error::BackendFailure(format!("unknown backend {name:?}")))
    }
}
