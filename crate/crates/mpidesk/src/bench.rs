//! OSU-style latency harness for the three collectives.
//!
//! For each repeat, op and message size: untimed warmup iterations, then
//! timed iterations of the collective, each result compared with a serial
//! oracle that recomputes every rank's input locally. Samples are rank 0's
//! wall-clock time around the call.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use mpidesk_core::abi::Predefined;
use mpidesk_core::api::{HandleRepr, MessagePassing};
use mpidesk_core::transport::{NetworkFabric, RankId};
use mpidesk_core::{Error, Result};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::apps::AppBlob;
use crate::report::LatencyRecord;
use crate::stack::{launch, RankProgram, Stack};
use crate::wire::{bytes_f64, f64_bytes, sha256_hex};

pub const DEFAULT_ITERATIONS: u32 = 100;
pub const DEFAULT_WARMUP: u32 = 10;
pub const DEFAULT_REPEATS: u32 = 5;
pub const DEFAULT_PAUSE_MS: u64 = 100;
pub const DEFAULT_SEED: u64 = 0x05_0C_07_05;

pub const PHASE_RUN: &str = "run";
pub const PHASE_PRE_CHECKPOINT: &str = "pre-checkpoint";
pub const PHASE_POST_RESTART: &str = "post-restart";

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Alltoall,
    Bcast,
    Allreduce,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Alltoall, Op::Bcast, Op::Allreduce];

    pub fn name(self) -> &'static str {
        match self {
            Op::Alltoall => "alltoall",
            Op::Bcast => "bcast",
            Op::Allreduce => "allreduce",
        }
    }

    pub fn from_name(name: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|o| o.name() == name)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Powers of two from 1 B to 1 MiB.
pub fn default_sizes() -> Vec<usize> {
    (0..=20).map(|k| 1usize << k).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ops: Vec<Op>,
    pub sizes: Vec<usize>,
    pub iterations: u32,
    pub warmup: u32,
    pub repeats: u32,
    pub verify: bool,
    pub pause_after_warmup_ms: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ops: Op::ALL.to_vec(),
            sizes: default_sizes(),
            iterations: DEFAULT_ITERATIONS,
            warmup: DEFAULT_WARMUP,
            repeats: DEFAULT_REPEATS,
            verify: true,
            pause_after_warmup_ms: DEFAULT_PAUSE_MS,
            seed: DEFAULT_SEED,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BackendFailure(format!("bench config: {m}")));
        if self.ops.is_empty() {
            return bad("no ops selected");
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sizes must be non-empty and strictly increasing");
        }
        if self.iterations == 0 || self.repeats == 0 {
            return bad("iterations and repeats must be at least 1");
        }
        Ok(())
    }
}

/// Allreduce reduces F64 elements; sizes below one element still move one.
pub fn allreduce_count(size: usize) -> usize {
    (size / 8).max(1)
}

/// Position in the (repeat, op, size) sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cursor {
    pub repeat: u32,
    pub op: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSnapshot {
    pub config: BenchConfig,
    /// The sweep resumes with the timed iterations at this position.
    pub cursor: Cursor,
    pub comm: u64,
}

/// Deterministic input of `rank` for one (op, size) cell.
fn input(seed: u64, op: Op, size: usize, nranks: usize, rank: usize) -> Vec<u8> {
    let mix = seed ^ ((op as u64) << 56) ^ ((size as u64) << 8) ^ rank as u64;
    let mut rng = StdRng::seed_from_u64(mix);
    match op {
        Op::Bcast => {
            let mut b = vec![0u8; size];
            rng.fill_bytes(&mut b);
            b
        }
        Op::Alltoall => {
            let mut b = vec![0u8; size * nranks];
            rng.fill_bytes(&mut b);
            b
        }
        Op::Allreduce => {
            let v: Vec<f64> = (0..allreduce_count(size)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            f64_bytes(&v)
        }
    }
}

/// What `me` must hold after the collective, computed serially from every
/// rank's input.
pub fn oracle(seed: u64, op: Op, size: usize, nranks: usize, me: usize) -> Vec<u8> {
    match op {
        Op::Bcast => input(seed, op, size, nranks, 0),
        Op::Alltoall => (0..nranks)
            .flat_map(|j| {
                let theirs = input(seed, op, size, nranks, j);
                theirs[me * size..(me + 1) * size].to_vec()
            })
            .collect(),
        Op::Allreduce => {
            let mut acc = bytes_f64(&input(seed, op, size, nranks, 0));
            for r in 1..nranks {
                for (a, x) in acc.iter_mut().zip(bytes_f64(&input(seed, op, size, nranks, r))) {
                    *a += x;
                }
            }
            f64_bytes(&acc)
        }
    }
}

/// One (op, size) cell as seen by one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub op: Op,
    pub size: usize,
    /// Rank 0's per-iteration latencies in microseconds, all repeats.
    pub samples_us: Vec<f64>,
    /// SHA-256 of the last result buffer.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub cells: Vec<Cell>,
    pub checkpointed: bool,
}

#[derive(Debug, Clone)]
pub struct BenchProgram {
    pub config: BenchConfig,
    /// Checkpoint into this directory during the post-warmup pause.
    pub checkpoint_dir: Option<PathBuf>,
}

impl RankProgram for BenchProgram {
    type Output = BenchOutput;

    fn run<M: MessagePassing>(&self, _rank: RankId, m: &mut M) -> Result<BenchOutput> {
        self.config.validate()?;
        let world = m.comm_world();
        let comm = m.comm_dup(world)?;
        sweep(m, &self.config, comm, Cursor::default(), true, self.checkpoint_dir.as_ref())
    }
}

pub fn resume<M: MessagePassing>(m: &mut M, snap: BenchSnapshot) -> Result<BenchOutput> {
    let comm = M::Handle::from_raw(snap.comm);
    sweep(m, &snap.config, comm, snap.cursor, false, None)
}

fn sweep<M: MessagePassing>(
    m: &mut M,
    cfg: &BenchConfig,
    comm: M::Handle,
    start: Cursor,
    warm_start: bool,
    ckpt_dir: Option<&PathBuf>,
) -> Result<BenchOutput> {
    let me = m.comm_rank(comm)? as usize;
    let n = m.comm_size(comm)? as usize;
    let byte = m.predefined(Predefined::Byte);
    let f64t = m.predefined(Predefined::F64);
    let sum = m.predefined(Predefined::Sum);

    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    let mut fixtures: HashMap<(usize, usize), (Vec<u8>, Option<Vec<u8>>)> = HashMap::new();
    let mut checkpointed = false;
    let mut first = true;
    for repeat in start.repeat..cfg.repeats {
        for (oi, &op) in cfg.ops.iter().enumerate() {
            for (si, &size) in cfg.sizes.iter().enumerate() {
                let here = Cursor { repeat, op: oi, size: si };
                if first && (here.repeat, here.op, here.size) < (start.repeat, start.op, start.size) {
                    continue;
                }
                // inputs and oracle results are reused by later repeats
                let (sendbuf, expected) = &*fixtures.entry((oi, si)).or_insert_with(|| {
                    let expected = cfg.verify.then(|| oracle(cfg.seed, op, size, n, me));
                    (input(cfg.seed, op, size, n, me), expected)
                });
                let mut recvbuf = vec![0u8; expected_len(op, size, n)];
                let call = |m: &mut M, recvbuf: &mut Vec<u8>| -> Result<()> {
                    match op {
                        Op::Bcast => {
                            if me == 0 {
                                recvbuf.copy_from_slice(sendbuf);
                            }
                            m.bcast(recvbuf, size as u32, byte, 0, comm)
                        }
                        Op::Alltoall => m.alltoall(sendbuf, recvbuf, size as u32, byte, comm),
                        Op::Allreduce => {
                            m.allreduce(sendbuf, recvbuf, allreduce_count(size) as u32, f64t, sum, comm)
                        }
                    }
                };

                let resuming = first && !warm_start;
                if !resuming {
                    for _ in 0..cfg.warmup {
                        call(m, &mut recvbuf)?;
                    }
                }
                if first && warm_start {
                    let t0 = Instant::now();
                    if let Some(dir) = ckpt_dir {
                        let snap = BenchSnapshot { config: cfg.clone(), cursor: here, comm: comm.to_raw() };
                        m.checkpoint(&AppBlob::Bench(snap).to_bytes(), dir)?;
                        checkpointed = true;
                    }
                    let pause = Duration::from_millis(cfg.pause_after_warmup_ms);
                    if let Some(rest) = pause.checked_sub(t0.elapsed()) {
                        thread::sleep(rest);
                    }
                }
                first = false;

                m.barrier(comm)?;
                let cell = cells.entry((oi, si)).or_insert_with(|| Cell {
                    op,
                    size,
                    samples_us: Vec::new(),
                    digest: String::new(),
                });
                for it in 0..cfg.iterations {
                    recvbuf.fill(0xA5 ^ it as u8);
                    let t0 = Instant::now();
                    call(m, &mut recvbuf)?;
                    let dt = t0.elapsed();
                    if let Some(want) = expected {
                        if *want != recvbuf {
                            return Err(Error::BackendFailure(format!(
                                "{op} of {size} B on rank {me}, iteration {it}: result differs from the serial oracle"
                            )));
                        }
                    }
                    cell.samples_us.push(dt.as_secs_f64() * 1e6);
                }
                cell.digest = sha256_hex(&recvbuf);
            }
        }
    }
    m.barrier(comm)?;
    Ok(BenchOutput { cells: cells.into_values().collect(), checkpointed })
}

fn expected_len(op: Op, size: usize, n: usize) -> usize {
    match op {
        Op::Bcast => size,
        Op::Alltoall => size * n,
        Op::Allreduce => allreduce_count(size) * 8,
    }
}

pub fn median(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    match k {
        0 => f64::NAN,
        _ if k % 2 == 1 => v[k / 2],
        _ => (v[k / 2 - 1] + v[k / 2]) / 2.0,
    }
}

/// Sample standard deviation; zero for fewer than two samples.
pub fn stddev(samples: &[f64]) -> f64 {
    let k = samples.len();
    if k < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / k as f64;
    (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
}

/// Turns rank 0's cells into report rows.
pub fn records_from(cells: &[Cell], backend: &str, stack: Stack, phase: &str) -> Vec<LatencyRecord> {
    cells
        .iter()
        .map(|c| LatencyRecord {
            op: c.op,
            backend: backend.to_string(),
            stack,
            phase: phase.to_string(),
            msg_size: c.size,
            median_us: median(&c.samples_us),
            stddev_us: stddev(&c.samples_us),
            overhead_pct: None,
        })
        .collect()
}

/// Result of a full sweep over backends and stacks.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub records: Vec<LatencyRecord>,
    /// Per-rank result digests for each (backend, stack), in cell order.
    pub digests: BTreeMap<(String, Stack), Vec<Vec<String>>>,
}

pub fn run_osu(
    config: &BenchConfig,
    nranks: u32,
    backends: &[&str],
    stacks: &[Stack],
    checkpoint_dir: Option<PathBuf>,
) -> Result<BenchRun> {
    config.validate()?;
    let phase = if checkpoint_dir.is_some() { PHASE_PRE_CHECKPOINT } else { PHASE_RUN };
    let mut records = Vec::new();
    let mut digests = BTreeMap::new();
    for &backend in backends {
        for &stack in stacks {
            let fabric = Arc::new(NetworkFabric::new(nranks)?);
            let program = BenchProgram { config: config.clone(), checkpoint_dir: checkpoint_dir.clone() };
            let out = launch(stack, backend, &fabric, &program)?;
            records.extend(records_from(&out[0].output.cells, backend, stack, phase));
            let per_rank = out
                .iter()
                .map(|r| r.output.cells.iter().map(|c| c.digest.clone()).collect())
                .collect();
            digests.insert((backend.to_string(), stack), per_rank);
        }
    }
    crate::report::fill_overheads(&mut records);
    Ok(BenchRun { records, digests })
}
