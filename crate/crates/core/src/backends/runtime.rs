//! Message-passing logic shared by both backends. Each backend supplies an
//! [`ObjectStore`] that decides how objects are named (its native ABI);
//! everything observable by the application is computed here.
//!
//! Collectives are linear: gather to communicator rank 0, combine, fan out.
//! Reductions fold in ascending rank order, `((r0 ⊕ r1) ⊕ r2) ⊕ ...`.

use std::sync::Arc;

use super::object::{BackendObject, Communicator, Datatype, ElementKind, ReduceKind, Request};
use super::{BackendApi, NativeCompletion, NativeConstants, NativeHandle, NativeStatus};
use crate::abi::{HandleKind, Predefined};
use crate::error::{Error, Result};
use crate::transport::{Envelope, NetworkFabric, RankId, SourceFilter, TagFilter};

/// Where a backend keeps its objects and how it names them.
pub trait ObjectStore: Default + Send + 'static {
    fn name() -> &'static str;
    fn constants() -> &'static NativeConstants;
    fn insert(&mut self, obj: BackendObject) -> Result<NativeHandle>;
    fn get(&self, h: NativeHandle) -> Result<&BackendObject>;
    fn remove(&mut self, h: NativeHandle) -> Result<BackendObject>;
    fn handles(&self) -> Vec<NativeHandle>;
}

const TAG_BARRIER: i32 = 1;
const TAG_BCAST: i32 = 2;
const TAG_REDUCE: i32 = 3;
const TAG_ALLTOALL: i32 = 4;
const TAG_ALLGATHER: i32 = 5;

const WORLD_CONTEXT: u32 = 0;
const SELF_CONTEXT: u32 = 1;

pub struct Runtime<S: ObjectStore> {
    fabric: Arc<NetworkFabric>,
    rank: RankId,
    store: S,
    predefined: Vec<(Predefined, NativeHandle)>,
    next_context: u32,
    initialized: bool,
}

impl<S: ObjectStore> Runtime<S> {
    pub fn new(fabric: Arc<NetworkFabric>, rank: RankId) -> Self {
        Runtime {
            fabric,
            rank,
            store: S::default(),
            predefined: Vec::new(),
            next_context: SELF_CONTEXT + 1,
            initialized: false,
        }
    }

    fn ensure_init(&self) -> Result<()> {
        if self.initialized {
            Ok(())
        } else {
            Err(Error::BackendFailure(format!("{} backend used before init", S::name())))
        }
    }

    fn object(&self, h: NativeHandle, want: HandleKind) -> Result<&BackendObject> {
        self.ensure_init()?;
        if h.is_null() {
            return Err(Error::InvalidHandle(format!("null handle where a {want} was expected")));
        }
        let obj = self.store.get(h)?;
        if obj.kind() != want {
            return Err(Error::KindMismatch(format!(
                "handle {h:?} is a {}, expected a {want}",
                obj.kind()
            )));
        }
        Ok(obj)
    }

    fn comm(&self, h: NativeHandle) -> Result<Communicator> {
        match self.object(h, HandleKind::Comm)? {
            BackendObject::Communicator(c) => Ok(c.clone()),
            _ => unreachable!("kind checked"),
        }
    }

    fn dtype(&self, h: NativeHandle) -> Result<Datatype> {
        match self.object(h, HandleKind::Datatype)? {
            BackendObject::Datatype(d) => Ok(*d),
            _ => unreachable!("kind checked"),
        }
    }

    fn op(&self, h: NativeHandle) -> Result<ReduceKind> {
        match self.object(h, HandleKind::Op)? {
            BackendObject::ReduceOp(op) => Ok(*op),
            _ => unreachable!("kind checked"),
        }
    }

    fn is_predefined(&self, h: NativeHandle) -> bool {
        self.predefined.iter().any(|(_, p)| *p == h)
    }

    fn free_object(&mut self, h: NativeHandle, want: HandleKind) -> Result<()> {
        self.object(h, want)?;
        if self.is_predefined(h) {
            return Err(Error::InvalidHandle(format!("predefined {want} {h:?} cannot be freed")));
        }
        self.store.remove(h).map(|_| ())
    }

    fn status(&self, source: i32, tag: i32, truncated: bool, count: u64) -> NativeStatus {
        let c = S::constants();
        let err = if truncated { c.err_truncate } else { c.err_success };
        NativeStatus::new(c.status_layout, source, tag, err, count)
    }

    fn peer(comm: &Communicator, r: i32) -> Result<u32> {
        u32::try_from(r)
            .ok()
            .and_then(|r| comm.world_rank_of(r))
            .ok_or_else(|| {
                Error::InvalidHandle(format!("rank {r} outside communicator of size {}", comm.size()))
            })
    }

    fn byte_len(count: u32, dt: &Datatype) -> u64 {
        count as u64 * dt.extent_bytes
    }

    fn check_buffer(len: usize, need: u64, what: &str) -> Result<usize> {
        if (len as u64) < need {
            return Err(Error::Truncated(format!("{what} holds {len} bytes, {need} required")));
        }
        Ok(need as usize)
    }

    fn source_filter(&self, comm: &Communicator, src: i32) -> Result<Option<u32>> {
        if src == S::constants().any_source {
            Ok(None)
        } else {
            Self::peer(comm, src).map(Some)
        }
    }

    fn tag_filter(tag: i32, any: i32) -> Result<Option<i32>> {
        if tag == any {
            Ok(None)
        } else if tag < 0 {
            Err(Error::InvalidHandle(format!("invalid receive tag {tag}")))
        } else {
            Ok(Some(tag))
        }
    }

    fn finish_recv(&self, comm: &Communicator, env: Envelope, capacity: u64) -> (NativeStatus, Vec<u8>) {
        let mut data = env.payload;
        let truncated = data.len() as u64 > capacity;
        data.truncate(capacity as usize);
        let source = comm.comm_rank_of(env.src.0).map_or(-1, |r| r as i32);
        (self.status(source, env.tag, truncated, data.len() as u64), data)
    }

    fn coll_send(&self, comm: &Communicator, to: u32, tag: i32, payload: Vec<u8>) -> Result<()> {
        let dst = comm.world_rank_of(to).expect("collective peer in range");
        self.fabric
            .post_envelope(Envelope::new(self.rank, RankId(dst), comm.collective_context(), tag, payload))
            .map(|_| ())
    }

    fn coll_recv(&self, comm: &Communicator, from: u32, tag: i32) -> Result<Vec<u8>> {
        let src = comm.world_rank_of(from).expect("collective peer in range");
        let env = self.fabric.match_recv(
            self.rank,
            SourceFilter::Rank(RankId(src)),
            TagFilter::Tag(tag),
            comm.collective_context(),
        )?;
        Ok(env.payload)
    }

    /// Every member's contribution, indexed by communicator rank.
    fn allgather(&self, comm: &Communicator, mine: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let n = comm.size();
        if n == 1 {
            return Ok(vec![mine]);
        }
        if comm.my_rank != 0 {
            self.coll_send(comm, 0, TAG_ALLGATHER, mine)?;
            let packed = self.coll_recv(comm, 0, TAG_ALLGATHER)?;
            return Ok(unpack_frames(&packed));
        }
        let mut parts = vec![mine];
        for j in 1..n {
            parts.push(self.coll_recv(comm, j, TAG_ALLGATHER)?);
        }
        let packed = pack_frames(&parts);
        for j in 1..n {
            self.coll_send(comm, j, TAG_ALLGATHER, packed.clone())?;
        }
        Ok(parts)
    }

    /// Agrees on a context id no member has used yet.
    fn agree_context(&mut self, comm: &Communicator, extra: &[u8]) -> Result<(u32, Vec<Vec<u8>>)> {
        let mut mine = self.next_context.to_le_bytes().to_vec();
        mine.extend_from_slice(extra);
        let parts = self.allgather(comm, mine)?;
        let ctx = parts
            .iter()
            .map(|p| u32::from_le_bytes(p[..4].try_into().unwrap()))
            .max()
            .expect("communicator is never empty");
        self.next_context = ctx + 1;
        Ok((ctx, parts))
    }

    fn insert_comm(&mut self, comm: Communicator) -> Result<NativeHandle> {
        self.store.insert(BackendObject::Communicator(comm))
    }
}

fn pack_frames(parts: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(p);
    }
    out
}

fn unpack_frames(mut bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    while bytes.len() >= 4 {
        let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        out.push(bytes[4..4 + n].to_vec());
        bytes = &bytes[4 + n..];
    }
    out
}

impl<S: ObjectStore> BackendApi for Runtime<S> {
    fn name(&self) -> &'static str {
        S::name()
    }

    fn constants(&self) -> &'static NativeConstants {
        S::constants()
    }

    fn rank(&self) -> RankId {
        self.rank
    }

    fn init(&mut self) -> Result<()> {
        if self.initialized {
            return Err(Error::BackendFailure(format!(
                "{} backend already initialized on rank {}",
                S::name(),
                self.rank
            )));
        }
        let n = self.fabric.nranks();
        for which in Predefined::ALL {
            let obj = match which {
                Predefined::CommWorld => BackendObject::Communicator(Communicator {
                    context_id: WORLD_CONTEXT,
                    group: (0..n).collect(),
                    my_rank: self.rank.0,
                }),
                Predefined::CommSelf => BackendObject::Communicator(Communicator {
                    context_id: SELF_CONTEXT,
                    group: vec![self.rank.0],
                    my_rank: 0,
                }),
                Predefined::Byte => BackendObject::Datatype(Datatype::basic(ElementKind::Byte)),
                Predefined::I32 => BackendObject::Datatype(Datatype::basic(ElementKind::I32)),
                Predefined::I64 => BackendObject::Datatype(Datatype::basic(ElementKind::I64)),
                Predefined::F64 => BackendObject::Datatype(Datatype::basic(ElementKind::F64)),
                Predefined::Sum => BackendObject::ReduceOp(ReduceKind::Sum),
                Predefined::Max => BackendObject::ReduceOp(ReduceKind::Max),
                Predefined::Min => BackendObject::ReduceOp(ReduceKind::Min),
                Predefined::Prod => BackendObject::ReduceOp(ReduceKind::Prod),
            };
            let h = self.store.insert(obj)?;
            self.predefined.push((which, h));
        }
        self.initialized = true;
        Ok(())
    }

    fn predefined(&self, which: Predefined) -> Result<NativeHandle> {
        self.ensure_init()?;
        Ok(self
            .predefined
            .iter()
            .find(|(p, _)| *p == which)
            .map(|(_, h)| *h)
            .expect("all predefined objects registered at init"))
    }

    fn live_handles(&self) -> Vec<NativeHandle> {
        self.store.handles()
    }

    fn comm_size(&self, comm: NativeHandle) -> Result<u32> {
        Ok(self.comm(comm)?.size())
    }

    fn comm_rank(&self, comm: NativeHandle) -> Result<u32> {
        Ok(self.comm(comm)?.my_rank)
    }

    fn comm_split(&mut self, comm: NativeHandle, color: i32, key: i32) -> Result<NativeHandle> {
        let parent = self.comm(comm)?;
        let undefined = S::constants().undefined;
        if color < 0 && color != undefined {
            return Err(Error::InvalidHandle(format!("invalid split color {color}")));
        }
        let mut extra = color.to_le_bytes().to_vec();
        extra.extend_from_slice(&key.to_le_bytes());
        let (ctx, parts) = self.agree_context(&parent, &extra)?;
        if color == undefined {
            return Ok(NativeHandle::NULL);
        }
        let mut members: Vec<(i32, u32)> = parts
            .iter()
            .enumerate()
            .filter_map(|(old_rank, p)| {
                let c = i32::from_le_bytes(p[4..8].try_into().unwrap());
                let k = i32::from_le_bytes(p[8..12].try_into().unwrap());
                (c == color).then_some((k, old_rank as u32))
            })
            .collect();
        members.sort_unstable();
        let my_rank = members
            .iter()
            .position(|&(_, old)| old == parent.my_rank)
            .expect("caller belongs to its own color") as u32;
        let group = members
            .iter()
            .map(|&(_, old)| parent.group[old as usize])
            .collect();
        self.insert_comm(Communicator { context_id: ctx, group, my_rank })
    }

    fn comm_dup(&mut self, comm: NativeHandle) -> Result<NativeHandle> {
        let parent = self.comm(comm)?;
        let (ctx, _) = self.agree_context(&parent, &[])?;
        self.insert_comm(Communicator { context_id: ctx, ..parent })
    }

    fn comm_free(&mut self, comm: NativeHandle) -> Result<()> {
        self.free_object(comm, HandleKind::Comm)
    }

    fn comm_group(&mut self, comm: NativeHandle) -> Result<NativeHandle> {
        let c = self.comm(comm)?;
        self.store.insert(BackendObject::Group(c.group))
    }

    fn group_size(&self, group: NativeHandle) -> Result<u32> {
        match self.object(group, HandleKind::Group)? {
            BackendObject::Group(g) => Ok(g.len() as u32),
            _ => unreachable!("kind checked"),
        }
    }

    fn group_rank(&self, group: NativeHandle) -> Result<Option<u32>> {
        match self.object(group, HandleKind::Group)? {
            BackendObject::Group(g) => Ok(g.iter().position(|&w| w == self.rank.0).map(|p| p as u32)),
            _ => unreachable!("kind checked"),
        }
    }

    fn group_free(&mut self, group: NativeHandle) -> Result<()> {
        self.free_object(group, HandleKind::Group)
    }

    fn type_contiguous(&mut self, count: u32, base: NativeHandle) -> Result<NativeHandle> {
        let base = self.dtype(base)?;
        if count == 0 {
            return Err(Error::InvalidHandle("contiguous count must be at least 1".into()));
        }
        self.store.insert(BackendObject::Datatype(Datatype::contiguous(count, &base)))
    }

    fn type_size(&self, dtype: NativeHandle) -> Result<u64> {
        Ok(self.dtype(dtype)?.extent_bytes)
    }

    fn type_free(&mut self, dtype: NativeHandle) -> Result<()> {
        self.free_object(dtype, HandleKind::Datatype)
    }

    fn send(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: NativeHandle,
        dst: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<()> {
        let c = self.comm(comm)?;
        let dt = self.dtype(dtype)?;
        let dst_world = Self::peer(&c, dst)?;
        if tag < 0 {
            return Err(Error::InvalidHandle(format!("invalid send tag {tag}")));
        }
        let len = Self::check_buffer(buf.len(), Self::byte_len(count, &dt), "send buffer")?;
        self.fabric
            .post_envelope(Envelope::new(
                self.rank,
                RankId(dst_world),
                c.p2p_context(),
                tag,
                buf[..len].to_vec(),
            ))
            .map(|_| ())
    }

    fn recv(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        src: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<NativeStatus> {
        let c = self.comm(comm)?;
        let dt = self.dtype(dtype)?;
        let src_world = self.source_filter(&c, src)?;
        let tag = Self::tag_filter(tag, S::constants().any_tag)?;
        let capacity = Self::check_buffer(buf.len(), Self::byte_len(count, &dt), "receive buffer")? as u64;
        let env = self.fabric.match_recv(
            self.rank,
            src_world.map_or(SourceFilter::Any, |w| SourceFilter::Rank(RankId(w))),
            tag.map_or(TagFilter::Any, TagFilter::Tag),
            c.p2p_context(),
        )?;
        let (status, data) = self.finish_recv(&c, env, capacity);
        buf[..data.len()].copy_from_slice(&data);
        Ok(status)
    }

    fn isend(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: NativeHandle,
        dst: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<NativeHandle> {
        self.send(buf, count, dtype, dst, tag, comm)?;
        let c = self.comm(comm)?;
        let len = Self::byte_len(count, &self.dtype(dtype)?);
        let st = self.status(c.my_rank as i32, tag, false, len);
        self.store.insert(BackendObject::Request(Request::SendDone(st)))
    }

    fn irecv(
        &mut self,
        count: u32,
        dtype: NativeHandle,
        src: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<NativeHandle> {
        let c = self.comm(comm)?;
        let dt = self.dtype(dtype)?;
        let src_world = self.source_filter(&c, src)?;
        let tag = Self::tag_filter(tag, S::constants().any_tag)?;
        let capacity = Self::byte_len(count, &dt);
        self.store.insert(BackendObject::Request(Request::RecvPending {
            comm: c,
            src_world,
            tag,
            capacity,
        }))
    }

    fn wait(&mut self, request: NativeHandle) -> Result<NativeCompletion> {
        let done = match self.object(request, HandleKind::Request)? {
            BackendObject::Request(Request::SendDone(st)) => (*st, None),
            BackendObject::Request(Request::RecvPending { comm, src_world, tag, capacity }) => {
                let env = self.fabric.match_recv(
                    self.rank,
                    src_world.map_or(SourceFilter::Any, |w| SourceFilter::Rank(RankId(w))),
                    tag.map_or(TagFilter::Any, TagFilter::Tag),
                    comm.p2p_context(),
                )?;
                let (st, data) = self.finish_recv(comm, env, *capacity);
                (st, Some(data))
            }
            _ => unreachable!("kind checked"),
        };
        self.store.remove(request)?;
        Ok(done)
    }

    fn test(&mut self, request: NativeHandle) -> Result<Option<NativeCompletion>> {
        let done = match self.object(request, HandleKind::Request)? {
            BackendObject::Request(Request::SendDone(st)) => Some((*st, None)),
            BackendObject::Request(Request::RecvPending { comm, src_world, tag, capacity }) => self
                .fabric
                .try_match(
                    self.rank,
                    src_world.map_or(SourceFilter::Any, |w| SourceFilter::Rank(RankId(w))),
                    tag.map_or(TagFilter::Any, TagFilter::Tag),
                    comm.p2p_context(),
                )?
                .map(|env| {
                    let (st, data) = self.finish_recv(comm, env, *capacity);
                    (st, Some(data))
                }),
            _ => unreachable!("kind checked"),
        };
        if done.is_some() {
            self.store.remove(request)?;
        }
        Ok(done)
    }

    fn barrier(&mut self, comm: NativeHandle) -> Result<()> {
        let c = self.comm(comm)?;
        let n = c.size();
        if n == 1 {
            return Ok(());
        }
        if c.my_rank == 0 {
            for j in 1..n {
                self.coll_recv(&c, j, TAG_BARRIER)?;
            }
            for j in 1..n {
                self.coll_send(&c, j, TAG_BARRIER, Vec::new())?;
            }
        } else {
            self.coll_send(&c, 0, TAG_BARRIER, Vec::new())?;
            self.coll_recv(&c, 0, TAG_BARRIER)?;
        }
        Ok(())
    }

    fn bcast(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        root: i32,
        comm: NativeHandle,
    ) -> Result<()> {
        let c = self.comm(comm)?;
        let dt = self.dtype(dtype)?;
        Self::peer(&c, root)?;
        let root = root as u32;
        let len = Self::check_buffer(buf.len(), Self::byte_len(count, &dt), "broadcast buffer")?;
        if c.size() == 1 {
            return Ok(());
        }
        if c.my_rank == root {
            for j in (0..c.size()).filter(|&j| j != root) {
                self.coll_send(&c, j, TAG_BCAST, buf[..len].to_vec())?;
            }
        } else {
            let data = self.coll_recv(&c, root, TAG_BCAST)?;
            if data.len() != len {
                return Err(Error::Truncated(format!(
                    "broadcast of {} bytes into a {len}-byte buffer",
                    data.len()
                )));
            }
            buf[..len].copy_from_slice(&data);
        }
        Ok(())
    }

    fn allreduce(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        op: NativeHandle,
        comm: NativeHandle,
    ) -> Result<()> {
        let c = self.comm(comm)?;
        let dt = self.dtype(dtype)?;
        let op = self.op(op)?;
        if dt.element_kind == ElementKind::Byte {
            return Err(Error::KindMismatch(format!("{op:?} is not defined on byte datatypes")));
        }
        let need = Self::byte_len(count, &dt);
        let len = Self::check_buffer(sendbuf.len(), need, "reduction send buffer")?;
        Self::check_buffer(recvbuf.len(), need, "reduction receive buffer")?;
        let n = c.size();
        let result = if n == 1 {
            sendbuf[..len].to_vec()
        } else if c.my_rank == 0 {
            let mut acc = sendbuf[..len].to_vec();
            for j in 1..n {
                let part = self.coll_recv(&c, j, TAG_REDUCE)?;
                if part.len() != len {
                    return Err(Error::Truncated(format!(
                        "rank {j} contributed {} bytes, expected {len}",
                        part.len()
                    )));
                }
                op.apply(dt.element_kind, &mut acc, &part)?;
            }
            for j in 1..n {
                self.coll_send(&c, j, TAG_REDUCE, acc.clone())?;
            }
            acc
        } else {
            self.coll_send(&c, 0, TAG_REDUCE, sendbuf[..len].to_vec())?;
            self.coll_recv(&c, 0, TAG_REDUCE)?
        };
        if result.len() != len {
            return Err(Error::Truncated("reduction result length mismatch".into()));
        }
        recvbuf[..len].copy_from_slice(&result);
        Ok(())
    }

    fn alltoall(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        comm: NativeHandle,
    ) -> Result<()> {
        let c = self.comm(comm)?;
        let dt = self.dtype(dtype)?;
        let block = Self::byte_len(count, &dt) as usize;
        if block == 0 {
            return Ok(());
        }
        let n = c.size() as usize;
        Self::check_buffer(sendbuf.len(), (n * block) as u64, "alltoall send buffer")?;
        Self::check_buffer(recvbuf.len(), (n * block) as u64, "alltoall receive buffer")?;
        let me = c.my_rank as usize;
        for j in (0..n).filter(|&j| j != me) {
            self.coll_send(&c, j as u32, TAG_ALLTOALL, sendbuf[j * block..(j + 1) * block].to_vec())?;
        }
        recvbuf[me * block..(me + 1) * block].copy_from_slice(&sendbuf[me * block..(me + 1) * block]);
        for j in (0..n).filter(|&j| j != me) {
            let data = self.coll_recv(&c, j as u32, TAG_ALLTOALL)?;
            if data.len() != block {
                return Err(Error::Truncated(format!(
                    "alltoall block from rank {j} has {} bytes, expected {block}",
                    data.len()
                )));
            }
            recvbuf[j * block..(j + 1) * block].copy_from_slice(&data);
        }
        Ok(())
    }
}
