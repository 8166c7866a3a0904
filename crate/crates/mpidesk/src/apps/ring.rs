//! Token ring. Each lap passes a token once around the world communicator
//! and once around a parity sub-communicator whose order is reversed
//! (split by `rank % 2` with key `-rank`). Every hop transforms the token
//! with [`hop`]; every fourth lap the latest tokens are summed with an
//! allreduce. At the end rank 0 collects every rank's history with
//! wildcard-source receives.

use mpidesk_core::abi::Predefined;
use mpidesk_core::api::{HandleRepr, MessagePassing};
use mpidesk_core::transport::RankId;
use mpidesk_core::Result;
use serde::{Deserialize, Serialize};

use super::{AppBlob, CheckpointPlan, Outcome};
use crate::stack::RankProgram;
use crate::wire::{bytes_i64, i64_bytes, sha256_hex};

const TAG_HISTORY: i32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingParams {
    pub laps: u64,
}

pub fn hop(token: i64, world_rank: u32) -> i64 {
    token.wrapping_mul(3).wrapping_add(world_rank as i64 + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingSnapshot {
    pub params: RingParams,
    pub lap: u64,
    pub token: i64,
    pub sub_token: i64,
    pub history: Vec<i64>,
    pub sub: u64,
}

#[derive(Debug, Clone)]
pub struct RingProgram {
    pub params: RingParams,
    pub checkpoint: Option<CheckpointPlan>,
}

struct State<H> {
    snap: RingSnapshot,
    sub: H,
}

impl RankProgram for RingProgram {
    type Output = Outcome;

    fn run<M: MessagePassing>(&self, _rank: RankId, m: &mut M) -> Result<Outcome> {
        super::check_ckpt_at(self.checkpoint.as_ref().map(|c| c.at), self.params.laps)?;
        let world = m.comm_world();
        let r = m.comm_rank(world)? as i32;
        let sub = m.comm_split(world, r % 2, -r)?;
        let snap = RingSnapshot {
            params: self.params,
            lap: 0,
            token: 0,
            sub_token: 0,
            history: Vec::new(),
            sub: sub.to_raw(),
        };
        laps(m, State { snap, sub }, self.checkpoint.as_ref())
    }
}

pub fn resume<M: MessagePassing>(m: &mut M, snapshot: RingSnapshot) -> Result<Outcome> {
    let sub = M::Handle::from_raw(snapshot.sub);
    laps(m, State { snap: snapshot, sub }, None)
}

/// One pass around `comm`, started by its rank 0 with `token`. Returns the
/// value this rank received.
fn pass<M: MessagePassing>(m: &mut M, comm: M::Handle, token: i64, tag: i32, world_rank: u32) -> Result<i64> {
    let i64t = m.predefined(Predefined::I64);
    let me = m.comm_rank(comm)? as i32;
    let n = m.comm_size(comm)? as i32;
    let mut buf = [0u8; 8];
    if me == 0 {
        m.send(&hop(token, world_rank).to_le_bytes(), 1, i64t, 1 % n, tag, comm)?;
        m.recv(&mut buf, 1, i64t, n - 1, tag, comm)?;
        Ok(i64::from_le_bytes(buf))
    } else {
        m.recv(&mut buf, 1, i64t, me - 1, tag, comm)?;
        let got = i64::from_le_bytes(buf);
        m.send(&hop(got, world_rank).to_le_bytes(), 1, i64t, (me + 1) % n, tag, comm)?;
        Ok(got)
    }
}

fn laps<M: MessagePassing>(m: &mut M, mut s: State<M::Handle>, plan: Option<&CheckpointPlan>) -> Result<Outcome> {
    let world = m.comm_world();
    let me = m.comm_rank(world)?;
    let n = m.comm_size(world)?;
    let i64t = m.predefined(Predefined::I64);
    let sum = m.predefined(Predefined::Sum);
    let mut checkpointed = false;
    while s.snap.lap < s.snap.params.laps {
        let lap = s.snap.lap;
        let got = pass(m, world, s.snap.token, (lap % 7) as i32, me)?;
        s.snap.token = got;
        s.snap.history.push(got);
        let got = pass(m, s.sub, s.snap.sub_token, 100 + (lap % 5) as i32, me)?;
        s.snap.sub_token = got;
        s.snap.history.push(got);
        if lap % 4 == 3 {
            let mine = i64_bytes(&[s.snap.token, s.snap.sub_token]);
            let mut total = [0u8; 16];
            m.allreduce(&mine, &mut total, 2, i64t, sum, world)?;
            s.snap.history.extend(bytes_i64(&total));
        }
        s.snap.lap += 1;

        if let Some(plan) = plan.filter(|p| p.at == s.snap.lap) {
            m.checkpoint(&AppBlob::Ring(s.snap.clone()).to_bytes(), &plan.dir)?;
            checkpointed = true;
        }
    }

    let len = s.snap.history.len();
    let hash = if me == 0 {
        let mut all = vec![Vec::new(); n as usize];
        all[0] = s.snap.history.clone();
        let mut buf = vec![0u8; len * 8];
        let any = m.any_source();
        for _ in 1..n {
            let st = m.recv(&mut buf, len as u32, i64t, any, TAG_HISTORY, world)?;
            all[st.source as usize] = bytes_i64(&buf);
        }
        let flat: Vec<i64> = all.concat();
        Some(sha256_hex(&i64_bytes(&flat)))
    } else {
        m.send(&i64_bytes(&s.snap.history), len as u32, i64t, 0, TAG_HISTORY, world)?;
        None
    };
    m.barrier(world)?;
    Ok(Outcome { hash, checkpointed })
}
