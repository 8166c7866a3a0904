//! 1-D wave equation, explicit second-order finite differences, block
//! partitioned over the ranks with one ghost cell per side.
//!
//! `u_next[i] = 2 u[i] - u_prev[i] + C2 (u[i-1] - 2 u[i] + u[i+1])` with
//! zero values outside the global domain, a Gaussian pulse as the initial
//! displacement and zero initial velocity (`u_prev == u_curr` at step 0).

use mpidesk_core::abi::Predefined;
use mpidesk_core::api::{HandleRepr, MessagePassing};
use mpidesk_core::transport::RankId;
use mpidesk_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{AppBlob, CheckpointPlan, Outcome};
use crate::stack::RankProgram;
use crate::wire::{bytes_f64, f64_bytes, sha256_hex};

/// Squared Courant number.
pub const C2: f64 = 0.25;

const TAG_LEFTWARD: i32 = 0;
const TAG_RIGHTWARD: i32 = 1;
const TAG_GATHER: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveParams {
    pub length: usize,
    pub steps: u64,
}

impl WaveParams {
    pub fn validate(&self, nranks: u32, ckpt_at: Option<u64>) -> Result<()> {
        if self.length == 0 || self.length % nranks as usize != 0 {
            return Err(Error::BackendFailure(format!(
                "wave length {} is not a positive multiple of {nranks} ranks",
                self.length
            )));
        }
        super::check_ckpt_at(ckpt_at, self.steps)
    }
}

/// Initial displacement at global point `i`.
pub fn initial_value(i: usize, length: usize) -> f64 {
    let x = i as f64 / length.saturating_sub(1).max(1) as f64;
    let d = (x - 0.3) / 0.05;
    (-d * d).exp()
}

/// Everything a rank needs to resume; handles are stored as the stack's
/// raw values, which for the engine are virtual ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveSnapshot {
    pub params: WaveParams,
    pub step: u64,
    /// `f64::to_bits` of each value, so JSON round-trips are exact.
    pub u_prev: Vec<u64>,
    pub u_curr: Vec<u64>,
    pub comm: u64,
    pub halo: u64,
    pub block: u64,
}

struct Rank<H> {
    params: WaveParams,
    step: u64,
    u_prev: Vec<f64>,
    u_curr: Vec<f64>,
    comm: H,
    halo: H,
    block: H,
}

impl<H: HandleRepr> Rank<H> {
    fn snapshot(&self) -> WaveSnapshot {
        WaveSnapshot {
            params: self.params,
            step: self.step,
            u_prev: self.u_prev.iter().map(|x| x.to_bits()).collect(),
            u_curr: self.u_curr.iter().map(|x| x.to_bits()).collect(),
            comm: self.comm.to_raw(),
            halo: self.halo.to_raw(),
            block: self.block.to_raw(),
        }
    }

    fn restore(s: WaveSnapshot) -> Self {
        Rank {
            params: s.params,
            step: s.step,
            u_prev: s.u_prev.into_iter().map(f64::from_bits).collect(),
            u_curr: s.u_curr.into_iter().map(f64::from_bits).collect(),
            comm: H::from_raw(s.comm),
            halo: H::from_raw(s.halo),
            block: H::from_raw(s.block),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WaveProgram {
    pub params: WaveParams,
    pub checkpoint: Option<CheckpointPlan>,
}

impl RankProgram for WaveProgram {
    type Output = Outcome;

    fn run<M: MessagePassing>(&self, _rank: RankId, m: &mut M) -> Result<Outcome> {
        let world = m.comm_world();
        let nranks = m.comm_size(world)?;
        self.params.validate(nranks, self.checkpoint.as_ref().map(|c| c.at))?;
        let comm = m.comm_dup(world)?;
        let me = m.comm_rank(comm)? as usize;
        let f64t = m.predefined(Predefined::F64);
        let halo = m.type_contiguous(1, f64t)?;
        let local = self.params.length / nranks as usize;
        let block = m.type_contiguous(local as u32, f64t)?;
        let u0: Vec<f64> = (me * local..(me + 1) * local)
            .map(|i| initial_value(i, self.params.length))
            .collect();
        let state = Rank {
            params: self.params,
            step: 0,
            u_prev: u0.clone(),
            u_curr: u0,
            comm,
            halo,
            block,
        };
        evolve(m, state, self.checkpoint.as_ref())
    }
}

/// Continues a checkpointed run to completion.
pub fn resume<M: MessagePassing>(m: &mut M, snapshot: WaveSnapshot) -> Result<Outcome> {
    evolve(m, Rank::restore(snapshot), None)
}

fn evolve<M: MessagePassing>(m: &mut M, mut s: Rank<M::Handle>, plan: Option<&CheckpointPlan>) -> Result<Outcome> {
    let me = m.comm_rank(s.comm)? as i32;
    let n = m.comm_size(s.comm)? as i32;
    let local = s.u_curr.len();
    let mut checkpointed = false;
    let mut next = vec![0.0; local];
    while s.step < s.params.steps {
        if me > 0 {
            m.send(&f64_bytes(&s.u_curr[..1]), 1, s.halo, me - 1, TAG_LEFTWARD, s.comm)?;
        }
        if me < n - 1 {
            m.send(&f64_bytes(&s.u_curr[local - 1..]), 1, s.halo, me + 1, TAG_RIGHTWARD, s.comm)?;
        }
        let mut ghost = [0u8; 8];
        let left = if me > 0 {
            m.recv(&mut ghost, 1, s.halo, me - 1, TAG_RIGHTWARD, s.comm)?;
            f64::from_le_bytes(ghost)
        } else {
            0.0
        };
        let right = if me < n - 1 {
            m.recv(&mut ghost, 1, s.halo, me + 1, TAG_LEFTWARD, s.comm)?;
            f64::from_le_bytes(ghost)
        } else {
            0.0
        };

        for i in 0..local {
            let l = if i == 0 { left } else { s.u_curr[i - 1] };
            let r = if i + 1 == local { right } else { s.u_curr[i + 1] };
            let c = s.u_curr[i];
            next[i] = 2.0 * c - s.u_prev[i] + C2 * (l - 2.0 * c + r);
        }
        std::mem::swap(&mut s.u_prev, &mut s.u_curr);
        std::mem::swap(&mut s.u_curr, &mut next);
        s.step += 1;

        if let Some(plan) = plan.filter(|p| p.at == s.step) {
            let blob = AppBlob::Wave(s.snapshot()).to_bytes();
            m.checkpoint(&blob, &plan.dir)?;
            checkpointed = true;
        }
    }

    // gather the final field on rank 0
    let hash = if me == 0 {
        let mut field = s.u_curr.clone();
        field.resize(local * n as usize, 0.0);
        let mut buf = vec![0u8; local * 8];
        for src in 1..n {
            m.recv(&mut buf, 1, s.block, src, TAG_GATHER, s.comm)?;
            let at = src as usize * local;
            field[at..at + local].copy_from_slice(&bytes_f64(&buf));
        }
        Some(sha256_hex(&f64_bytes(&field)))
    } else {
        m.send(&f64_bytes(&s.u_curr), 1, s.block, 0, TAG_GATHER, s.comm)?;
        None
    };
    m.barrier(s.comm)?;
    Ok(Outcome { hash, checkpointed })
}
