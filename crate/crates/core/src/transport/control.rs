//! Out-of-band coordinator channel. Nothing sent here is visible to the
//! application message counters or to `inflight`.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{lock, RankId};
use crate::error::{Error, Result};

pub const DEFAULT_CONTROL_TIMEOUT: Duration = Duration::from_secs(30);

/// What one rank tells the coordinator in a round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControlReport {
    pub sent: u64,
    pub recv: u64,
    /// Unresolved nonblocking requests held by the rank.
    pub pending: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalDecision {
    Quiescent,
    NotQuiescent,
}

struct RoundState {
    generation: u64,
    reported: Vec<bool>,
    arrived: u32,
    totals: ControlReport,
    last_decision: GlobalDecision,
}

pub(super) struct ControlPlane {
    nranks: u32,
    timeout: Duration,
    state: Mutex<RoundState>,
    done: Condvar,
}

impl ControlPlane {
    pub(super) fn new(nranks: u32, timeout: Duration) -> Self {
        ControlPlane {
            nranks,
            timeout,
            state: Mutex::new(RoundState {
                generation: 0,
                reported: vec![false; nranks as usize],
                arrived: 0,
                totals: ControlReport::default(),
                last_decision: GlobalDecision::NotQuiescent,
            }),
            done: Condvar::new(),
        }
    }

    pub(super) fn wake_all(&self) {
        let _guard = lock(&self.state);
        self.done.notify_all();
    }

    pub(super) fn round(
        &self,
        rank: RankId,
        report: ControlReport,
        inflight: impl Fn() -> u64,
        shut_down: impl Fn() -> bool,
    ) -> Result<GlobalDecision> {
        let mut st = lock(&self.state);
        if st.reported[rank.0 as usize] {
            return Err(Error::BackendFailure(format!(
                "rank {rank} reported twice in control round {}",
                st.generation
            )));
        }
        st.reported[rank.0 as usize] = true;
        st.arrived += 1;
        st.totals.sent += report.sent;
        st.totals.recv += report.recv;
        st.totals.pending += report.pending;

        if st.arrived == self.nranks {
            // Every participant is parked here, so the fabric snapshot is
            // taken at a point where no rank is mid-call.
            let quiet = st.totals.sent == st.totals.recv && st.totals.pending == 0 && inflight() == 0;
            st.last_decision = if quiet {
                GlobalDecision::Quiescent
            } else {
                GlobalDecision::NotQuiescent
            };
            st.generation += 1;
            st.arrived = 0;
            st.totals = ControlReport::default();
            st.reported.iter_mut().for_each(|r| *r = false);
            self.done.notify_all();
            return Ok(st.last_decision);
        }

        let generation = st.generation;
        let deadline = Instant::now() + self.timeout;
        while st.generation == generation {
            if shut_down() {
                return Err(Error::BackendFailure("fabric shut down during control round".into()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::BackendFailure(format!(
                    "control round {generation} timed out after {:?} with {}/{} reports",
                    self.timeout, st.arrived, self.nranks
                )));
            }
            st = self
                .done
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        Ok(st.last_decision)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::transport::{run_ranks, Envelope, NetworkFabric};

    fn report(sent: u64, recv: u64) -> ControlReport {
        ControlReport { sent, recv, pending: 0 }
    }

    #[test]
    fn balanced_counters_are_quiescent() {
        let f = Arc::new(NetworkFabric::new(4).unwrap());
        let out = run_ranks(&f, |rank, fabric| {
            // 12 sent and 12 received in total, unevenly spread
            let (s, r) = [(5, 1), (3, 3), (4, 0), (0, 8)][rank.0 as usize];
            fabric.control_round(rank, report(s, r))
        })
        .unwrap();
        assert!(out.iter().all(|d| *d == GlobalDecision::Quiescent));
    }

    #[test]
    fn unbalanced_counters_are_not_quiescent() {
        let f = Arc::new(NetworkFabric::new(2).unwrap());
        let out = run_ranks(&f, |rank, fabric| {
            let (s, r) = if rank.0 == 0 { (12, 0) } else { (0, 11) };
            fabric.control_round(rank, report(s, r))
        })
        .unwrap();
        assert!(out.iter().all(|d| *d == GlobalDecision::NotQuiescent));
    }

    #[test]
    fn inflight_message_blocks_quiescence() {
        let f = Arc::new(NetworkFabric::new(2).unwrap());
        f.post_envelope(Envelope::new(RankId(1), RankId(1), 0, 0, vec![1])).unwrap();
        let out = run_ranks(&f, |rank, fabric| fabric.control_round(rank, report(1, 1))).unwrap();
        assert!(out.iter().all(|d| *d == GlobalDecision::NotQuiescent));
    }

    #[test]
    fn pending_requests_block_quiescence() {
        let f = Arc::new(NetworkFabric::new(2).unwrap());
        let out = run_ranks(&f, |rank, fabric| {
            fabric.control_round(rank, ControlReport { pending: rank.0 as u64, ..Default::default() })
        })
        .unwrap();
        assert!(out.iter().all(|d| *d == GlobalDecision::NotQuiescent));
    }

    #[test]
    fn round_is_a_barrier() {
        let f = Arc::new(NetworkFabric::new(4).unwrap());
        let arrived = AtomicU32::new(0);
        run_ranks(&f, |rank, fabric| {
            std::thread::sleep(Duration::from_millis(10 * rank.0 as u64));
            arrived.fetch_add(1, Ordering::SeqCst);
            fabric.control_round(rank, ControlReport::default())?;
            assert_eq!(arrived.load(Ordering::SeqCst), 4);
            // a second round reuses the plane
            fabric.control_round(rank, ControlReport::default())
        })
        .unwrap();
    }

    #[test]
    fn missing_participant_times_out() {
        let f = NetworkFabric::new(2).unwrap().with_control_timeout(Duration::from_millis(20));
        let err = f.control_round(RankId(0), ControlReport::default()).unwrap_err();
        assert!(matches!(err, Error::BackendFailure(_)));
    }
}
