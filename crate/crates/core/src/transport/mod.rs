//! In-process simulated network.
//!
//! Every rank owns an inbox holding one FIFO queue per source rank, so the
//! fabric has `nranks²` directed channels. Matching picks the earliest arrival
//! among eligible envelopes; within one `(src, context_id, tag)` stream that is
//! always the lowest sequence number.

mod control;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

pub use control::{ControlReport, GlobalDecision, DEFAULT_CONTROL_TIMEOUT};
use control::ControlPlane;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RankId(pub u32);

impl fmt::Display for RankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub src: RankId,
    pub dst: RankId,
    pub context_id: u32,
    pub tag: i32,
    pub payload: Vec<u8>,
    /// Assigned by the fabric when the envelope is posted.
    pub seq: u64,
}

impl Envelope {
    pub fn new(src: RankId, dst: RankId, context_id: u32, tag: i32, payload: Vec<u8>) -> Self {
        Envelope { src, dst, context_id, tag, payload, seq: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFilter {
    Any,
    Rank(RankId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagFilter {
    Any,
    Tag(i32),
}

impl TagFilter {
    fn accepts(self, tag: i32) -> bool {
        match self {
            TagFilter::Any => true,
            TagFilter::Tag(t) => t == tag,
        }
    }
}

#[derive(Default)]
struct Inbox {
    /// Indexed by source rank; each entry carries its arrival stamp.
    queues: Vec<VecDeque<(u64, Envelope)>>,
    next_arrival: u64,
    /// Next sequence number per (src, context_id, tag) stream into this rank.
    next_seq: HashMap<(u32, u32, i32), u64>,
}

impl Inbox {
    fn take_match(&mut self, src: SourceFilter, tag: TagFilter, context_id: u32) -> Option<Envelope> {
        let mut best: Option<(u64, usize, usize)> = None;
        let candidates: Box<dyn Iterator<Item = usize>> = match src {
            SourceFilter::Any => Box::new(0..self.queues.len()),
            SourceFilter::Rank(r) => Box::new(std::iter::once(r.0 as usize)),
        };
        for s in candidates {
            let Some(queue) = self.queues.get(s) else { continue };
            let hit = queue
                .iter()
                .enumerate()
                .find(|(_, (_, e))| e.context_id == context_id && tag.accepts(e.tag));
            if let Some((pos, (arrival, _))) = hit {
                if best.is_none_or(|(a, _, _)| *arrival < a) {
                    best = Some((*arrival, s, pos));
                }
            }
        }
        let (_, s, pos) = best?;
        self.queues[s].remove(pos).map(|(_, e)| e)
    }
}

struct Mailbox {
    inbox: Mutex<Inbox>,
    ready: Condvar,
}

/// Totals observed under a fabric-wide lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FabricSnapshot {
    pub inflight: u64,
    pub queued: u64,
    pub posted: u64,
    pub matched: u64,
}

pub struct NetworkFabric {
    nranks: u32,
    mailboxes: Vec<Mailbox>,
    inflight: AtomicU64,
    posted: AtomicU64,
    matched: AtomicU64,
    shutdown: AtomicBool,
    match_timeout: Option<Duration>,
    trace: Mutex<Option<Box<dyn Write + Send>>>,
    control: ControlPlane,
}

impl fmt::Debug for NetworkFabric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkFabric")
            .field("nranks", &self.nranks)
            .field("inflight", &self.inflight())
            .finish_non_exhaustive()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl NetworkFabric {
    pub fn new(nranks: u32) -> Result<NetworkFabric> {
        if nranks == 0 {
            return Err(Error::BackendFailure("fabric needs at least one rank".into()));
        }
        let mailboxes = (0..nranks)
            .map(|_| Mailbox {
                inbox: Mutex::new(Inbox {
                    queues: (0..nranks).map(|_| VecDeque::new()).collect(),
                    ..Inbox::default()
                }),
                ready: Condvar::new(),
            })
            .collect();
        Ok(NetworkFabric {
            nranks,
            mailboxes,
            inflight: AtomicU64::new(0),
            posted: AtomicU64::new(0),
            matched: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
            match_timeout: None,
            trace: Mutex::new(None),
            control: ControlPlane::new(nranks, DEFAULT_CONTROL_TIMEOUT),
        })
    }

    /// Makes blocking receives fail with `BackendFailure` after `timeout`.
    pub fn with_match_timeout(mut self, timeout: Duration) -> Self {
        self.match_timeout = Some(timeout);
        self
    }

    pub fn with_control_timeout(mut self, timeout: Duration) -> Self {
        self.control = ControlPlane::new(self.nranks, timeout);
        self
    }

    /// Appends one `EVT <post|match> src dst ctx tag seq len` line per event.
    pub fn set_trace(&self, sink: Box<dyn Write + Send>) {
        *lock(&self.trace) = Some(sink);
    }

    pub fn flush_trace(&self) -> Result<()> {
        if let Some(sink) = lock(&self.trace).as_mut() {
            sink.flush()?;
        }
        Ok(())
    }

    pub fn nranks(&self) -> u32 {
        self.nranks
    }

    pub fn channel_count(&self) -> usize {
        self.mailboxes.iter().map(|m| lock(&m.inbox).queues.len()).sum()
    }

    pub fn inflight(&self) -> u64 {
        self.inflight.load(Ordering::SeqCst)
    }

    pub fn check_rank(&self, rank: RankId) -> Result<()> {
        if rank.0 < self.nranks {
            Ok(())
        } else {
            Err(Error::BackendFailure(format!(
                "rank {rank} outside fabric of {} ranks",
                self.nranks
            )))
        }
    }

    fn trace_event(&self, what: &str, e: &Envelope) {
        if let Some(sink) = lock(&self.trace).as_mut() {
            // Tracing is best effort; a failing sink must not break delivery.
            let _ = writeln!(
                sink,
                "EVT {what} {} {} {} {} {} {}",
                e.src,
                e.dst,
                e.context_id,
                e.tag,
                e.seq,
                e.payload.len()
            );
        }
    }

    /// Queues `e` on channel `(e.src, e.dst)` and returns its sequence number.
    pub fn post_envelope(&self, mut e: Envelope) -> Result<u64> {
        self.check_rank(e.src)?;
        self.check_rank(e.dst)?;
        if self.is_shut_down() {
            return Err(Error::BackendFailure("fabric shut down".into()));
        }
        let mailbox = &self.mailboxes[e.dst.0 as usize];
        let mut inbox = lock(&mailbox.inbox);
        let seq = inbox.next_seq.entry((e.src.0, e.context_id, e.tag)).or_insert(0);
        e.seq = *seq;
        *seq += 1;
        let arrival = inbox.next_arrival;
        inbox.next_arrival += 1;
        self.inflight.fetch_add(1, Ordering::SeqCst);
        self.posted.fetch_add(1, Ordering::SeqCst);
        self.trace_event("post", &e);
        let seq = e.seq;
        inbox.queues[e.src.0 as usize].push_back((arrival, e));
        drop(inbox);
        mailbox.ready.notify_all();
        Ok(seq)
    }

    /// Non-blocking variant of [`NetworkFabric::match_recv`].
    pub fn try_match(
        &self,
        dst: RankId,
        src: SourceFilter,
        tag: TagFilter,
        context_id: u32,
    ) -> Result<Option<Envelope>> {
        self.check_rank(dst)?;
        let mut inbox = lock(&self.mailboxes[dst.0 as usize].inbox);
        Ok(self.take_locked(&mut inbox, src, tag, context_id))
    }

    fn take_locked(
        &self,
        inbox: &mut Inbox,
        src: SourceFilter,
        tag: TagFilter,
        context_id: u32,
    ) -> Option<Envelope> {
        let e = inbox.take_match(src, tag, context_id)?;
        self.inflight.fetch_sub(1, Ordering::SeqCst);
        self.matched.fetch_add(1, Ordering::SeqCst);
        self.trace_event("match", &e);
        Some(e)
    }

    /// Blocks until an envelope for `dst` satisfies the filters, then removes
    /// and returns it.
    pub fn match_recv(
        &self,
        dst: RankId,
        src: SourceFilter,
        tag: TagFilter,
        context_id: u32,
    ) -> Result<Envelope> {
        self.check_rank(dst)?;
        let deadline = self.match_timeout.map(|t| Instant::now() + t);
        let mailbox = &self.mailboxes[dst.0 as usize];
        let mut inbox = lock(&mailbox.inbox);
        loop {
            if let Some(e) = self.take_locked(&mut inbox, src, tag, context_id) {
                return Ok(e);
            }
            if self.is_shut_down() {
                return Err(Error::BackendFailure("fabric shut down while receiving".into()));
            }
            inbox = match deadline {
                None => mailbox.ready.wait(inbox).unwrap_or_else(|p| p.into_inner()),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(Error::BackendFailure(format!(
                            "rank {dst} timed out waiting for ctx {context_id}"
                        )));
                    }
                    mailbox
                        .ready
                        .wait_timeout(inbox, deadline - now)
                        .unwrap_or_else(|p| p.into_inner())
                        .0
                }
            };
        }
    }

    /// Locks every inbox (in rank order) and reports consistent totals.
    pub fn snapshot(&self) -> FabricSnapshot {
        let guards: Vec<_> = self.mailboxes.iter().map(|m| lock(&m.inbox)).collect();
        let queued = guards
            .iter()
            .flat_map(|g| g.queues.iter())
            .map(|q| q.len() as u64)
            .sum();
        let snap = FabricSnapshot {
            inflight: self.inflight(),
            queued,
            posted: self.posted.load(Ordering::SeqCst),
            matched: self.matched.load(Ordering::SeqCst),
        };
        drop(guards);
        snap
    }

    /// Wakes every blocked receiver and control participant with an error.
    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for m in &self.mailboxes {
            let _guard = lock(&m.inbox);
            m.ready.notify_all();
        }
        self.control.wake_all();
    }

    pub fn is_shut_down(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    /// One coordinator round: blocks until every rank has reported, then
    /// returns the same decision to all of them.
    pub fn control_round(&self, rank: RankId, report: ControlReport) -> Result<GlobalDecision> {
        self.check_rank(rank)?;
        self.control.round(rank, report, || self.snapshot().inflight, || self.is_shut_down())
    }
}

/// Runs `body` once per rank on its own thread and collects the results in
/// rank order. If any rank fails, the fabric is shut down so peers blocked on
/// it return instead of hanging.
pub fn run_ranks<T, F>(fabric: &Arc<NetworkFabric>, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RankId, Arc<NetworkFabric>) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..fabric.nranks())
            .map(|r| {
                let fabric = Arc::clone(fabric);
                let body = &body;
                scope.spawn(move || {
                    let out = body(RankId(r), Arc::clone(&fabric));
                    if out.is_err() {
                        fabric.shutdown();
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::BackendFailure("rank thread panicked".into())))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        return Ok(out);
    }
    // Report the root cause rather than a peer's shutdown notice.
    let root = errors
        .iter()
        .position(|e| !matches!(e, Error::BackendFailure(m) if m.contains("shut down")))
        .unwrap_or(0);
    Err(errors.swap_remove(root))
}
