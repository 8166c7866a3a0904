//! Mini-apps and harness against independent serial oracles.

use std::path::PathBuf;

use mpidesk::apps::CheckpointPlan;
use mpidesk::bench::{self, BenchConfig, Op, PHASE_POST_RESTART, PHASE_PRE_CHECKPOINT};
use mpidesk::report::{emit_report, parse_report};
use mpidesk::workflow::{restart_run, run_app, App, Resumed, RunSpec};
use mpidesk::Stack;
use mpidesk_core::Error;
use sha2::{Digest, Sha256};

const BACKENDS: [&str; 2] = ["index", "ref"];

fn hex_sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

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

fn ring_oracle(n: usize, laps: u64) -> String {
    let hop = |t: i64, r: usize| t.wrapping_mul(3).wrapping_add(r as i64 + 1);
    let mut token = vec![0i64; n];
    let mut sub = vec![0i64; n];
    let mut hist = vec![Vec::new(); n];
    let pass = |order: &[usize], tok: &mut Vec<i64>, hist: &mut Vec<Vec<i64>>| {
        let mut v = hop(tok[order[0]], order[0]);
        for &r in &order[1..] {
            tok[r] = v;
            hist[r].push(v);
            v = hop(v, r);
        }
        tok[order[0]] = v;
        hist[order[0]].push(v);
    };
    for lap in 0..laps {
        pass(&(0..n).collect::<Vec<_>>(), &mut token, &mut hist);
        let mut sub_got = vec![Vec::new(); n];
        for p in 0..2 {
            let order: Vec<usize> = (0..n).filter(|r| r % 2 == p).rev().collect();
            if !order.is_empty() {
                pass(&order, &mut sub, &mut sub_got);
            }
        }
        for r in 0..n {
            hist[r].extend(&sub_got[r]);
        }
        if lap % 4 == 3 {
            let st = token.iter().fold(0i64, |a, b| a.wrapping_add(*b));
            let ss = sub.iter().fold(0i64, |a, b| a.wrapping_add(*b));
            for h in hist.iter_mut() {
                h.extend([st, ss]);
            }
        }
    }
    let flat: Vec<u8> = hist.concat().iter().flat_map(|x| x.to_le_bytes()).collect();
    hex_sha(&flat)
}

fn spec(app: App, backend: &str, stack: Stack, ranks: u32, steps: u64, length: usize) -> RunSpec {
    RunSpec { ranks, steps: Some(steps), length, ..RunSpec::new(app, backend, stack) }
}

#[test]
fn wave_matches_serial_oracle_everywhere() {
    for ranks in [1, 2, 4] {
        let want = wave_oracle(64, 40);
        for b in BACKENDS {
            for s in Stack::ALL {
                let got = run_app(&spec(App::Wave, b, s, ranks, 40, 64)).unwrap();
                assert_eq!(got.hash, want, "{b}/{s} with {ranks} ranks");
            }
        }
    }
}

#[test]
fn ring_matches_serial_oracle_everywhere() {
    for ranks in [1, 2, 3, 4, 5] {
        let want = ring_oracle(ranks as usize, 9);
        for b in BACKENDS {
            for s in Stack::ALL {
                let got = run_app(&spec(App::Ring, b, s, ranks, 9, 0)).unwrap();
                assert_eq!(got.hash, want, "{b}/{s} with {ranks} ranks");
            }
        }
    }
}

fn checkpointed(app: App, from: &str, ranks: u32, steps: u64, at: u64, dir: PathBuf) -> RunSpec {
    RunSpec {
        checkpoint: Some(CheckpointPlan { at, dir }),
        ..spec(app, from, Stack::Engine, ranks, steps, 48)
    }
}

#[test]
fn checkpoint_restart_reproduces_both_apps() {
    for app in [App::Wave, App::Ring] {
        let want = match app {
            App::Wave => wave_oracle(48, 30),
            App::Ring => ring_oracle(3, 30),
        };
        for from in BACKENDS {
            for to in BACKENDS {
                let dir = tempfile::tempdir().unwrap();
                let first = run_app(&checkpointed(app, from, 3, 30, 13, dir.path().into())).unwrap();
                assert!(first.checkpointed);
                assert_eq!(first.hash, want, "{app:?} uninterrupted part, {from}");
                match restart_run(dir.path(), to, None, None).unwrap() {
                    Resumed::App(r) => assert_eq!(r.hash, want, "{app:?} {from}->{to}"),
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }
}

#[test]
fn restart_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    run_app(&checkpointed(App::Wave, "ref", 3, 10, 5, dir.path().into())).unwrap();
    let err = restart_run(dir.path(), "index", Some(4), None).unwrap_err();
    assert!(matches!(err, Error::BackendFailure(_)), "{err}");
    let err = restart_run(dir.path(), "mpich", None, None).unwrap_err();
    assert!(matches!(err, Error::BackendFailure(_)), "{err}");

    let zero = checkpointed(App::Wave, "ref", 3, 10, 0, dir.path().into());
    assert!(run_app(&zero).is_err());
    let late = checkpointed(App::Ring, "ref", 3, 10, 10, dir.path().into());
    assert!(run_app(&late).is_err());
    let uneven = spec(App::Wave, "index", Stack::Native, 3, 10, 100);
    assert!(run_app(&uneven).is_err());
    // only the engine can checkpoint
    let native = RunSpec { stack: Stack::Native, ..checkpointed(App::Wave, "ref", 3, 10, 5, dir.path().into()) };
    assert!(run_app(&native).is_err());
}

#[test]
fn trace_file_lists_posts_and_matches() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    let s = RunSpec { trace: Some(trace.clone()), ..spec(App::Wave, "ref", Stack::Adapter, 2, 3, 8) };
    run_app(&s).unwrap();
    let text = std::fs::read_to_string(trace).unwrap();
    let posts = text.lines().filter(|l| l.starts_with("EVT post ")).count();
    let matches = text.lines().filter(|l| l.starts_with("EVT match ")).count();
    assert!(posts > 0);
    assert_eq!(posts, matches);
    assert!(text.lines().all(|l| l.split(' ').count() == 8), "{text}");
}

fn small_config(seed: u64) -> BenchConfig {
    BenchConfig {
        sizes: vec![1, 8, 24, 1000],
        iterations: 3,
        warmup: 1,
        repeats: 2,
        pause_after_warmup_ms: 0,
        seed,
        ..BenchConfig::default()
    }
}

#[test]
fn bench_record_shape_and_oracle() {
    let run = bench::run_osu(&small_config(7), 4, &BACKENDS, &Stack::ALL, None).unwrap();
    assert_eq!(run.records.len(), 3 * 2 * 3 * 4);
    let text = emit_report(&run.records);
    assert_eq!(text.lines().filter(|l| l.starts_with("# max_overhead ")).count(), 6);
    assert_eq!(parse_report(&text).unwrap().len(), run.records.len());
    for r in &run.records {
        let p = r.overhead_pct.expect("every row has a native baseline");
        assert!(p.is_finite());
        if r.stack == Stack::Native {
            assert_eq!(p, 0.0);
        }
    }
    // results are stack- and backend-independent
    let reference = &run.digests[&("index".to_string(), Stack::Native)];
    for d in run.digests.values() {
        assert_eq!(d, reference);
    }
}

#[test]
fn bench_oracle_matches_hand_computed_cases() {
    // allreduce of one element: the fold of every rank's first value
    let n = 3;
    let want = bench::oracle(1, Op::Allreduce, 4, n, 0);
    assert_eq!(want.len(), 8);
    for me in 1..n {
        assert_eq!(bench::oracle(1, Op::Allreduce, 4, n, me), want);
    }
    // alltoall: my block j is rank j's block for me, so diagonal blocks are
    // each rank's own
    let a = bench::oracle(1, Op::Alltoall, 2, n, 1);
    let b = bench::oracle(1, Op::Alltoall, 2, n, 2);
    assert_eq!(a.len(), 6);
    assert_ne!(a, b);
    assert_eq!(bench::allreduce_count(1), 1);
    assert_eq!(bench::allreduce_count(64), 8);
}

#[test]
fn bench_checkpoint_during_pause_then_restart_elsewhere() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(3);
    cfg.ops = vec![Op::Alltoall];
    cfg.pause_after_warmup_ms = 20;
    let pre = bench::run_osu(&cfg, 4, &["ref"], &[Stack::Engine], Some(dir.path().into())).unwrap();
    assert!(pre.records.iter().all(|r| r.phase == PHASE_PRE_CHECKPOINT && r.backend == "ref"));
    assert_eq!(pre.records.len(), 4);

    match restart_run(dir.path(), "index", None, None).unwrap() {
        Resumed::Bench { records, .. } => {
            assert_eq!(records.len(), 4);
            for r in &records {
                assert_eq!((r.backend.as_str(), r.stack, r.phase.as_str()), ("index", Stack::Engine, PHASE_POST_RESTART));
                // both repeats' timed iterations ran after the restart
                assert!(r.median_us.is_finite());
            }
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bench_rejects_bad_configs() {
    let mut cfg = small_config(1);
    cfg.sizes = vec![8, 4];
    assert!(bench::run_osu(&cfg, 2, &["ref"], &[Stack::Native], None).is_err());
    let mut cfg = small_config(1);
    cfg.iterations = 0;
    assert!(cfg.validate().is_err());
    // the native stack cannot checkpoint during the pause
    let dir = tempfile::tempdir().unwrap();
    assert!(bench::run_osu(&small_config(1), 2, &["ref"], &[Stack::Native], Some(dir.path().into())).is_err());
}

#[test]
fn default_sizes_span_one_byte_to_one_mebibyte() {
    let s = bench::default_sizes();
    assert_eq!((s[0], *s.last().unwrap(), s.len()), (1, 1 << 20, 21));
    assert!(s.windows(2).all(|w| w[1] == 2 * w[0]));
}
