//! The eight acceptance criteria, run in order. Each prints one line:
//!
//!     PASS 1 cross-backend restart: ...
//!     FAIL 4 quiescence contract: ...
//!
//! Run with `cargo test -p mpidesk --test acceptance -- --nocapture` to see
//! the lines; the test fails if any criterion does.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mpidesk::apps::CheckpointPlan;
use mpidesk::bench::{self, BenchConfig};
use mpidesk::report::parse_report;
use mpidesk::workflow::{restart_run, run_app, App, Resumed, RunSpec};
use mpidesk::Stack;
use mpidesk_core::abi::{AbiHandle, HandleKind, Predefined};
use mpidesk_core::adapter::AdapterInstance;
use mpidesk_core::api::MessagePassing;
use mpidesk_core::backends::{index_handle_space, ref_key_space, NativeBinding, NativeHandle};
use mpidesk_core::engine::{
    scan_for_native_values, CheckpointImage, CreationLog, CreationRecipe, EngineSession, ImageHeader,
    LogEntry, VirtualId, IMAGE_VERSION, MANIFEST_FILE,
};
use mpidesk_core::transport::{run_ranks, ControlReport, GlobalDecision, NetworkFabric, RankId};
use mpidesk_core::Error;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

const BACKENDS: [&str; 2] = ["index", "ref"];

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn hex_sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Serial leapfrog on the whole domain, with zero values beyond both ends.
fn wave_oracle(len: usize, steps: u64) -> String {
    let u0: Vec<f64> = (0..len)
        .map(|i| {
            let d = (i as f64 / (len - 1) as f64 - 0.3) / 0.05;
            (-d * d).exp()
        })
        .collect();
    let (mut prev, mut cur) = (u0.clone(), u0);
    for _ in 0..steps {
        let next: Vec<f64> = (0..len)
            .map(|i| {
                let l = if i == 0 { 0.0 } else { cur[i - 1] };
                let r = if i + 1 == len { 0.0 } else { cur[i + 1] };
                2.0 * cur[i] - prev[i] + 0.25 * (l - 2.0 * cur[i] + r)
            })
            .collect();
        prev = std::mem::replace(&mut cur, next);
    }
    hex_sha(&cur.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())
}

// ---------------------------------------------------------------- 1 and 2

struct Restarted {
    dirs: Vec<tempfile::TempDir>,
}

fn criterion_1() -> (Verdict, Restarted) {
    let mut kept = Restarted { dirs: Vec::new() };
    let verdict = (|| {
        let h0 = ok(run_app(&RunSpec::new(App::Wave, "index", Stack::Native)), "uninterrupted run")?.hash;
        let oracle = wave_oracle(1024, 1000);
        ensure!(h0 == oracle, "native run {h0} differs from the serial oracle {oracle}");
        let mut slowest = Duration::ZERO;
        for from in BACKENDS {
            for to in BACKENDS {
                let dir = ok(tempfile::tempdir(), "tempdir")?;
                let started = Instant::now();
                let spec = RunSpec {
                    checkpoint: Some(CheckpointPlan { at: 500, dir: dir.path().into() }),
                    ..RunSpec::new(App::Wave, from, Stack::Engine)
                };
                let first = ok(run_app(&spec), "checkpointed run")?;
                ensure!(first.checkpointed, "{from}: no checkpoint was taken");
                let hash = match ok(restart_run(dir.path(), to, None, None), "restart")? {
                    Resumed::App(r) => r.hash,
                    Resumed::Bench { .. } => return Err("restart resumed a benchmark".into()),
                };
                let took = started.elapsed();
                slowest = slowest.max(took);
                ensure!(hash == h0, "{from}->{to}: {hash} != H0 {h0}");
                ensure!(took < Duration::from_secs(10), "{from}->{to} took {took:?}");
                kept.dirs.push(dir);
            }
        }
        Ok(format!("4 pairs bit-identical to H0={}..., slowest pair {slowest:.2?}", &h0[..12]))
    })();
    (verdict, kept)
}

/// Every native handle either backend could plausibly have issued in these
/// runs: all five index kinds over the first 4096 slots and the first 65536
/// reference keys.
fn handle_space() -> Vec<NativeHandle> {
    let mut all = index_handle_space(4096);
    all.extend(ref_key_space(65536));
    all
}

fn criterion_2(restarted: &Restarted) -> Verdict {
    let space = handle_space();
    let mut images = 0;
    for dir in &restarted.dirs {
        for entry in ok(fs::read_dir(dir.path()), "listing checkpoint")? {
            let path = ok(entry, "dir entry")?.path();
            if path.extension().is_some_and(|e| e == "img") {
                let bytes = ok(fs::read(&path), "reading image")?;
                let leaks = ok(scan_for_native_values(&bytes, &space), "scan")?;
                ensure!(leaks.is_empty(), "{}: {:?}", path.display(), &leaks[..leaks.len().min(3)]);
                images += 1;
            }
        }
    }
    ensure!(images == 16, "expected 16 images, scanned {images}");

    // The scan must see a planted handle, or the clean result means nothing.
    let first = restarted.dirs[0].path().join("rank0.img");
    let mut img = ok(CheckpointImage::read(&first), "reading image")?;
    for planted in [index_handle_space(4096)[7], ref_key_space(64)[5]] {
        img.app_state.extend(planted.0.to_le_bytes());
        let leaks = ok(scan_for_native_values(&img.serialize(), &space), "scan")?;
        ensure!(!leaks.is_empty(), "a planted {:#x} went unnoticed", planted.0);
    }
    Ok(format!("{images} images clean against {} native values; planted values detected", space.len()))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    const SEEDS: u64 = 100;
    for seed in 0..SEEDS {
        let mut rng = StdRng::seed_from_u64(seed);
        let ranks = rng.gen_range(1..=4u32);

        let length = ranks as usize * rng.gen_range(2..24usize);
        let steps = rng.gen_range(1..60u64);
        let wave: Vec<String> = BACKENDS
            .iter()
            .map(|b| {
                let spec = RunSpec { ranks, steps: Some(steps), length, ..RunSpec::new(App::Wave, b, Stack::Adapter) };
                ok(run_app(&spec), "wave").map(|r| r.hash)
            })
            .collect::<Result<_, _>>()?;
        ensure!(wave[0] == wave[1], "seed {seed}: wave differs across backends");
        ensure!(wave[0] == wave_oracle(length, steps), "seed {seed}: wave differs from the serial oracle");

        let laps = rng.gen_range(1..24u64);
        let ring: Vec<String> = BACKENDS
            .iter()
            .map(|b| {
                let spec = RunSpec { ranks, steps: Some(laps), ..RunSpec::new(App::Ring, b, Stack::Adapter) };
                ok(run_app(&spec), "ring").map(|r| r.hash)
            })
            .collect::<Result<_, _>>()?;
        ensure!(ring[0] == ring[1], "seed {seed}: ring differs across backends");

        let mut sizes: Vec<usize> = (0..4).map(|_| rng.gen_range(1..5000)).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let config = BenchConfig {
            sizes,
            iterations: 2,
            warmup: 1,
            repeats: 1,
            pause_after_warmup_ms: 0,
            seed: rng.gen(),
            ..BenchConfig::default()
        };
        let run = ok(bench::run_osu(&config, ranks, &BACKENDS, &[Stack::Adapter], None), "collectives")?;
        let idx = &run.digests[&("index".to_string(), Stack::Adapter)];
        let rf = &run.digests[&("ref".to_string(), Stack::Adapter)];
        ensure!(idx == rf, "seed {seed}: collective results differ across backends");
    }
    Ok(format!("{SEEDS} seeds of wave, ring and all three collectives identical under both backends"))
}

// ---------------------------------------------------------------- 4

#[derive(Clone, Copy, PartialEq)]
enum Hold {
    Nothing,
    /// An irecv from the left neighbour that nobody has sent to yet.
    Recv,
    /// An isend to the right neighbour whose request is not yet completed.
    Send,
}

fn quiescence_trial(trial: u64, dir: &Path) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(0x9_0000 + trial);
    let n = rng.gen_range(1..=4u32);
    let backend = BACKENDS[rng.gen_range(0..2)];
    let mut plan: Vec<Hold> =
        (0..n).map(|_| [Hold::Nothing, Hold::Recv, Hold::Send][rng.gen_range(0..3)]).collect();
    if plan.iter().all(|h| *h == Hold::Nothing) {
        plan[rng.gen_range(0..n as usize)] = if rng.gen() { Hold::Recv } else { Hold::Send };
    }
    let fabric = Arc::new(ok(NetworkFabric::new(n), "fabric")?);
    let observed = run_ranks(&fabric, |rank, f| {
        let mut e = EngineSession::launch(backend, f.clone(), rank)?;
        let world = e.comm_world();
        let i64t = e.predefined(Predefined::I64);
        let r = rank.0 as usize;
        let n = n as usize;
        let (left, right) = ((r + n - 1) % n, (r + 1) % n);
        let held = match plan[r] {
            Hold::Nothing => None,
            Hold::Recv => Some(e.irecv(1, i64t, left as i32, 8, world)?),
            Hold::Send => Some(e.isend(&(r as i64).to_le_bytes(), 1, i64t, right as i32, 9, world)?),
        };
        let blocked = e.checkpoint(b"state", dir);

        if plan[right] == Hold::Recv {
            e.send(&(r as i64).to_le_bytes(), 1, i64t, right as i32, 8, world)?;
        }
        if plan[left] == Hold::Send {
            let mut buf = [0u8; 8];
            e.recv(&mut buf, 1, i64t, left as i32, 9, world)?;
        }
        if let Some(req) = held {
            e.wait(req)?;
        }
        let written = e.checkpoint(b"state", dir);
        let inflight = f.inflight();
        let (sent, recv) = e.counters();
        let report = ControlReport { sent, recv, pending: e.pending_requests() as u64 };
        let decision = f.control_round(rank, report)?;
        Ok((blocked, written, inflight, decision))
    });
    let observed = ok(observed, "ranks")?;
    for (r, (blocked, written, inflight, decision)) in observed.into_iter().enumerate() {
        ensure!(
            matches!(blocked, Err(Error::PendingAtCheckpoint(_))),
            "trial {trial} rank {r}: first checkpoint gave {blocked:?}"
        );
        ensure!(written.is_ok(), "trial {trial} rank {r}: resolved checkpoint gave {written:?}");
        ensure!(inflight == 0, "trial {trial} rank {r}: {inflight} in flight after checkpoint");
        ensure!(decision == GlobalDecision::Quiescent, "trial {trial}: control round not quiescent");
        ensure!(dir.join(format!("rank{r}.img")).exists(), "trial {trial}: rank {r} image missing");
    }
    ensure!(dir.join(MANIFEST_FILE).exists(), "trial {trial}: manifest missing");
    ensure!(fabric.inflight() == 0, "trial {trial}: fabric not drained");
    Ok(())
}

fn criterion_4() -> Verdict {
    const TRIALS: u64 = 60;
    for trial in 0..TRIALS {
        let dir = ok(tempfile::tempdir(), "tempdir")?;
        quiescence_trial(trial, dir.path())?;
    }
    Ok(format!("{TRIALS} randomized trials: pending -> PendingAtCheckpoint on every rank, resolved -> Quiescent, inflight 0, images written"))
}

// ---------------------------------------------------------------- 5

fn translation_sequence(backend: &str, rng: &mut StdRng) -> Result<(), String> {
    let fabric = Arc::new(ok(NetworkFabric::new(1), "fabric")?);
    let mut a = ok(AdapterInstance::bind_backend(backend, fabric, RankId(0)), "bind")?;
    let mut comms = vec![a.comm_world(), a.predefined(Predefined::CommSelf)];
    let mut types = vec![a.predefined(Predefined::I32), a.predefined(Predefined::F64)];
    let mut stale: HashSet<AbiHandle> = HashSet::new();
    let pick = |v: &[AbiHandle], rng: &mut StdRng| v[rng.gen_range(0..v.len())];
    for _ in 0..rng.gen_range(1..40) {
        let fresh = match rng.gen_range(0..6) {
            0 => Some(ok(a.comm_dup(pick(&comms, rng)), "dup")?),
            1 => {
                let undefined = rng.gen_bool(0.3);
                let color = if undefined { a.undefined() } else { rng.gen_range(0..3) };
                let c = ok(a.comm_split(pick(&comms, rng), color, rng.gen_range(-2..3)), "split")?;
                ensure!(c.is_null() == undefined, "split nullness");
                (!c.is_null()).then_some(c)
            }
            2 => Some(ok(a.type_contiguous(rng.gen_range(1..5), pick(&types, rng)), "contiguous")?),
            3 => {
                let c = pick(&comms, rng);
                let t = pick(&types, rng);
                ensure!(ok(a.comm_size(c), "size")? == 1, "comm size");
                ensure!(ok(a.type_size(t), "type size")? >= 4, "type size");
                ensure!(matches!(a.comm_size(t), Err(Error::KindMismatch(_))), "datatype used as comm");
                None
            }
            _ => {
                let dynamic: Vec<_> = comms.iter().chain(&types).copied().filter(|h| !h.is_predefined()).collect();
                if !dynamic.is_empty() {
                    let h = pick(&dynamic, rng);
                    if h.kind() == Ok(HandleKind::Comm) {
                        ok(a.comm_free(h), "comm free")?;
                        comms.retain(|x| *x != h);
                    } else {
                        ok(a.type_free(h), "type free")?;
                        types.retain(|x| *x != h);
                    }
                    stale.insert(h);
                }
                None
            }
        };
        if let Some(h) = fresh {
            ensure!(!stale.contains(&h), "{backend}: fresh handle {h:?} aliases a freed one");
            if h.kind() == Ok(HandleKind::Comm) {
                comms.push(h);
            } else {
                types.push(h);
            }
        }
        ensure!(a.table().is_bijective(), "{backend}: table lost bijectivity");
        for h in &stale {
            ensure!(matches!(a.abi_to_native(*h), Err(Error::InvalidHandle(_))), "{backend}: stale {h:?} resolved");
            let used = if h.kind() == Ok(HandleKind::Comm) { a.comm_size(*h).map(|_| ()) } else { a.type_size(*h).map(|_| ()) };
            ensure!(matches!(used, Err(Error::InvalidHandle(_))), "{backend}: stale {h:?} usable");
        }
    }
    let live: HashSet<_> = comms.iter().chain(&types).copied().collect();
    ensure!(live.len() == comms.len() + types.len(), "{backend}: duplicate live handles");
    let natives: HashSet<_> = live.iter().map(|h| a.abi_to_native(*h)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure!(natives.len() == live.len(), "{backend}: two live handles share a native object");
    Ok(())
}

fn criterion_5() -> Verdict {
    const SEQUENCES: u64 = 10_000;
    for backend in BACKENDS {
        let mut rng = StdRng::seed_from_u64(0x5EED_0005);
        for _ in 0..SEQUENCES {
            translation_sequence(backend, &mut rng)?;
        }
    }
    Ok(format!("{SEQUENCES} sequences per backend; bijective throughout, stale handles InvalidHandle, no aliasing"))
}

// ---------------------------------------------------------------- 6

/// One message: who sends it to whom, on which communicator and tag, and its
/// position in that (src, comm, tag) stream.
#[derive(Clone, Copy)]
struct Msg {
    src: u32,
    dst: u32,
    comm: u32,
    tag: i32,
    k: u32,
}

fn encode(m: &Msg) -> [u8; 16] {
    let mut b = [0u8; 16];
    b[..4].copy_from_slice(&m.src.to_le_bytes());
    b[4..8].copy_from_slice(&m.comm.to_le_bytes());
    b[8..12].copy_from_slice(&m.tag.to_le_bytes());
    b[12..].copy_from_slice(&m.k.to_le_bytes());
    b
}

fn stream_program<M: MessagePassing>(rank: RankId, m: &mut M, plan: &[Msg], seed: u64) -> mpidesk_core::Result<Vec<String>> {
    let mut rng = StdRng::seed_from_u64(seed ^ rank.0 as u64);
    let world = m.comm_world();
    let comms = [world, m.comm_dup(world)?];
    let byte = m.predefined(Predefined::Byte);
    for msg in plan.iter().filter(|x| x.src == rank.0) {
        if rng.gen_bool(0.3) {
            std::thread::yield_now();
        }
        m.send(&encode(msg), 16, byte, msg.dst as i32, msg.tag, comms[msg.comm as usize])?;
    }
    // Outstanding count per (comm, src, tag) for messages addressed to me.
    let mut remaining: BTreeMap<(u32, u32, i32), u32> = BTreeMap::new();
    for msg in plan.iter().filter(|x| x.dst == rank.0) {
        *remaining.entry((msg.comm, msg.src, msg.tag)).or_default() += 1;
    }
    let mut next: HashMap<(u32, u32, i32), u32> = HashMap::new();
    let mut faults = Vec::new();
    while !remaining.is_empty() {
        let keys: Vec<_> = remaining.keys().copied().collect();
        let (comm, src, tag) = keys[rng.gen_range(0..keys.len())];
        // Mix exact, wildcard-source, wildcard-tag and fully wildcard receives.
        let (want_src, want_tag) = match rng.gen_range(0..4) {
            0 => (src as i32, tag),
            1 => (m.any_source(), tag),
            2 => (src as i32, m.any_tag()),
            _ => (m.any_source(), m.any_tag()),
        };
        let mut buf = [0u8; 16];
        let st = m.recv(&mut buf, 16, byte, want_src, want_tag, comms[comm as usize])?;
        let got_src = u32::from_le_bytes(buf[..4].try_into().unwrap());
        let got_comm = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        let got_tag = i32::from_le_bytes(buf[8..12].try_into().unwrap());
        let k = u32::from_le_bytes(buf[12..].try_into().unwrap());
        if got_comm != comm || st.source != got_src as i32 || st.tag != got_tag {
            faults.push(format!("rank {rank}: status/payload disagree on {got_src}/{got_comm}/{got_tag}"));
        }
        let key = (got_comm, got_src, got_tag);
        let expect = next.entry(key).or_default();
        if k != *expect {
            faults.push(format!("rank {rank}: stream {key:?} delivered #{k} when #{expect} was due"));
        }
        *expect += 1;
        match remaining.get_mut(&key) {
            Some(c) if *c > 1 => *c -= 1,
            Some(_) => {
                remaining.remove(&key);
            }
            None => faults.push(format!("rank {rank}: unexpected message on {key:?}")),
        }
    }
    m.comm_free(comms[1])?;
    Ok(faults)
}

fn criterion_6() -> Verdict {
    const TRIALS: u64 = 1000;
    for trial in 0..TRIALS {
        let mut rng = StdRng::seed_from_u64(0x6_0000 + trial);
        let n = rng.gen_range(2..=4u32);
        let backend = BACKENDS[rng.gen_range(0..2)];
        let mut counters: HashMap<(u32, u32, u32, i32), u32> = HashMap::new();
        let plan: Vec<Msg> = (0..rng.gen_range(1..48))
            .map(|_| {
                let (src, dst, comm, tag) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..2), rng.gen_range(0..3));
                let k = counters.entry((src, dst, comm, tag)).or_default();
                *k += 1;
                Msg { src, dst, comm, tag, k: *k - 1 }
            })
            .collect();
        let seed = rng.gen();
        let fabric = Arc::new(ok(NetworkFabric::new(n), "fabric")?);
        let faults = match trial % 3 {
            0 => run_ranks(&fabric, |r, f| stream_program(r, &mut NativeBinding::new(backend, f, r)?, &plan, seed)),
            1 => run_ranks(&fabric, |r, f| {
                stream_program(r, &mut AdapterInstance::bind_backend(backend, f, r)?, &plan, seed)
            }),
            _ => run_ranks(&fabric, |r, f| stream_program(r, &mut EngineSession::launch(backend, f, r)?, &plan, seed)),
        };
        let faults: Vec<String> = ok(faults, "ranks")?.concat();
        ensure!(faults.is_empty(), "trial {trial} ({backend}): {}", faults[0]);
        ensure!(fabric.inflight() == 0, "trial {trial}: messages left over");
    }
    Ok(format!("{TRIALS} randomized trials over all stacks; every (src, comm, tag) stream in order"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let out = dir.path().join("bench.csv");
    let started = Instant::now();
    let status = ok(
        Command::new(env!("CARGO_BIN_EXE_mpidesk"))
            .args(["bench", "--op", "all", "--ranks", "4", "--repeats", "5", "--out"])
            .arg(&out)
            .output(),
        "launching mpidesk",
    )?;
    ensure!(status.status.success(), "mpidesk bench failed: {}", String::from_utf8_lossy(&status.stderr));
    let text = ok(fs::read_to_string(&out), "reading report")?;
    let rows = ok(parse_report(&text), "parsing report")?;
    let sizes = bench::default_sizes().len();
    let want = 3 * 2 * 3 * sizes;
    ensure!(rows.len() == want, "{} rows, want {want}", rows.len());
    let summaries = text.lines().filter(|l| l.starts_with("# max_overhead ")).count();
    ensure!(summaries == 6, "{summaries} summary lines, want one per op and backend");
    for r in rows.iter().filter(|r| r.stack != Stack::Native) {
        ensure!(
            r.overhead_pct.is_some_and(f64::is_finite),
            "{} {} {} size {}: overhead {:?}",
            r.op,
            r.backend,
            r.stack.name(),
            r.msg_size,
            r.overhead_pct
        );
    }
    let bench_time = started.elapsed();

    // Results (not timings) of the engine stack against the adapter stack,
    // over the same default sizes and seed.
    let config = BenchConfig { iterations: 2, warmup: 1, repeats: 1, pause_after_warmup_ms: 0, ..BenchConfig::default() };
    let run = ok(bench::run_osu(&config, 4, &BACKENDS, &[Stack::Adapter, Stack::Engine], None), "digest sweep")?;
    for b in BACKENDS {
        let adapter = &run.digests[&(b.to_string(), Stack::Adapter)];
        let engine = &run.digests[&(b.to_string(), Stack::Engine)];
        ensure!(adapter == engine, "{b}: engine results differ from adapter results");
    }
    Ok(format!(
        "{want} rows + {summaries} summaries in {bench_time:.1?}, every iteration oracle-checked; overheads finite; engine == adapter bit-exactly"
    ))
}

// ---------------------------------------------------------------- 8

fn random_image(rng: &mut StdRng) -> CheckpointImage {
    let mut entries: Vec<LogEntry> = Predefined::ALL
        .iter()
        .map(|&p| LogEntry {
            vid: VirtualId::predefined(p),
            recipe: CreationRecipe::Predefined(p),
            recorded_size: 0,
            recorded_rank: 0,
            freed: false,
        })
        .collect();
    let mut next = [4096u32; 2];
    for _ in 0..rng.gen_range(0..32) {
        let live = |k: HandleKind, entries: &[LogEntry]| -> Vec<VirtualId> {
            entries.iter().map(|e| e.vid).filter(|v| !v.is_null() && v.kind() == Ok(k)).collect()
        };
        let what = rng.gen_range(0..3);
        let (recipe, kind) = if what < 2 {
            let c = live(HandleKind::Comm, &entries);
            let parent = c[rng.gen_range(0..c.len())];
            let recipe = if what == 0 {
                CreationRecipe::CommDup { parent }
            } else {
                CreationRecipe::CommSplit { parent, color: rng.gen_range(-1..4), key: rng.gen() }
            };
            (recipe, HandleKind::Comm)
        } else {
            let t = live(HandleKind::Datatype, &entries);
            (CreationRecipe::TypeContiguous { count: rng.gen_range(1..9), base: t[rng.gen_range(0..t.len())] }, HandleKind::Datatype)
        };
        let vid = if matches!(recipe, CreationRecipe::CommSplit { color: -1, .. }) {
            VirtualId::NULL
        } else {
            let slot = &mut next[(kind == HandleKind::Datatype) as usize];
            *slot += 1;
            VirtualId::new(kind, *slot - 1).unwrap()
        };
        entries.push(LogEntry {
            vid,
            recipe,
            recorded_size: rng.gen(),
            recorded_rank: rng.gen(),
            freed: !vid.is_null() && rng.gen_bool(0.3),
        });
    }
    CheckpointImage {
        header: ImageHeader { format_version: IMAGE_VERSION, rank: rng.gen(), nranks: rng.gen(), sent: rng.gen(), recv: rng.gen() },
        log: CreationLog::from_entries(entries).unwrap(),
        app_state: (0..rng.gen_range(0..512)).map(|_| rng.gen()).collect(),
    }
}

fn criterion_8() -> Verdict {
    const IMAGES: usize = 1000;
    let mut rng = StdRng::seed_from_u64(0x8_0008);
    let mut freed = 0;
    for i in 0..IMAGES {
        let img = random_image(&mut rng);
        freed += img.log.entries().iter().filter(|e| e.freed).count();
        let bytes = img.serialize();
        let back = ok(CheckpointImage::deserialize(&bytes), "deserialize")?;
        ensure!(back == img, "image {i} changed in the round trip");

        let mut magic = bytes.clone();
        magic[rng.gen_range(0..4)] ^= 1 << rng.gen_range(0..8);
        ensure!(CheckpointImage::deserialize(&magic).is_err(), "image {i}: corrupted magic accepted");
        let mut version = bytes;
        let v = loop {
            let v: u32 = rng.gen();
            if v != IMAGE_VERSION {
                break v;
            }
        };
        version[4..8].copy_from_slice(&v.to_le_bytes());
        ensure!(CheckpointImage::deserialize(&version).is_err(), "image {i}: version {v} accepted");
    }
    ensure!(freed > 0, "no freed entries were generated");
    Ok(format!("{IMAGES} random images ({freed} freed entries) round-trip; bad magic and version rejected"))
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let (v1, restarted) = criterion_1();
    let have_images = v1.is_ok();
    results.push((1, "cross-backend restart", v1));
    let v2 = if have_images { criterion_2(&restarted) } else { Err("no images: criterion 1 failed".into()) };
    results.push((2, "image purity", v2));
    results.push((3, "adapter interoperability", criterion_3()));
    results.push((4, "quiescence contract", criterion_4()));
    results.push((5, "translation bijectivity", criterion_5()));
    results.push((6, "non-overtaking", criterion_6()));
    results.push((7, "benchmark harness shape", criterion_7()));
    results.push((8, "image round-trip", criterion_8()));

    let mut failed = Vec::new();
    for (n, name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(why) => {
                println!("FAIL {n} {name}: {why}");
                failed.push(*n);
            }
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
