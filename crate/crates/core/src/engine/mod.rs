//! Transparent checkpointing on top of the adapter.
//!
//! The application holds [`VirtualId`]s. The engine maps them to the current
//! standard handles, records how every object was created, and at a safe
//! point writes an image holding only application state, the creation log
//! and counters. Restart binds a fresh adapter (possibly to the other
//! backend), replays the log and rebinds every id.

mod image;
mod recipe;
mod restart;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

pub use image::{
    image_file_name, scan_for_native_values, CheckpointImage, ImageHeader, Leak, Manifest,
    IMAGE_MAGIC, IMAGE_VERSION, MANIFEST_FILE,
};
pub use recipe::{CreationLog, CreationRecipe, LogEntry, VirtualId};
pub use restart::restart;

use crate::abi::{AbiHandle, AbiStatus, HandleKind, Predefined, ABI_ANY_SOURCE, ABI_ANY_TAG, ABI_COMM_WORLD, ABI_UNDEFINED, FIRST_DYNAMIC_INDEX};
use crate::adapter::AdapterInstance;
use crate::api::{Completion, HandleRepr, MessagePassing};
use crate::error::{Error, Result};
use crate::transport::{ControlReport, GlobalDecision, NetworkFabric, RankId};

/// Control rounds attempted before a checkpoint gives up on quiescence.
pub const QUIESCENCE_ROUNDS: usize = 3;

impl HandleRepr for VirtualId {
    fn to_raw(self) -> u64 {
        self.raw() as u64
    }

    fn from_raw(raw: u64) -> Self {
        VirtualId::from_raw(raw as u32)
    }
}

#[derive(Debug, Default)]
struct VidTable {
    to_abi: HashMap<VirtualId, AbiHandle>,
    to_vid: HashMap<AbiHandle, VirtualId>,
    next_index: HashMap<HandleKind, u32>,
}

impl VidTable {
    fn bind(&mut self, vid: VirtualId, abi: AbiHandle) -> Result<()> {
        if self.to_abi.contains_key(&vid) || self.to_vid.contains_key(&abi) {
            return Err(Error::ReplayMismatch(format!("{vid} or {abi} is already bound")));
        }
        self.to_abi.insert(vid, abi);
        self.to_vid.insert(abi, vid);
        Ok(())
    }

    fn allocate(&mut self, kind: HandleKind, abi: AbiHandle) -> Result<VirtualId> {
        let slot = self.next_index.entry(kind).or_insert(FIRST_DYNAMIC_INDEX);
        let vid = VirtualId::new(kind, *slot)?;
        *slot += 1;
        self.bind(vid, abi)?;
        Ok(vid)
    }

    fn unbind(&mut self, vid: VirtualId) -> Result<AbiHandle> {
        let abi = self
            .to_abi
            .remove(&vid)
            .ok_or_else(|| Error::InvalidHandle(format!("{vid} is not live")))?;
        self.to_vid.remove(&abi);
        Ok(abi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Send,
    Recv,
}

pub struct EngineSession {
    adapter: AdapterInstance,
    fabric: Arc<NetworkFabric>,
    rank: RankId,
    vids: VidTable,
    log: CreationLog,
    pending: HashMap<VirtualId, Direction>,
    sent: u64,
    recv: u64,
}

impl std::fmt::Debug for EngineSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineSession")
            .field("rank", &self.rank)
            .field("adapter", &self.adapter)
            .field("log_len", &self.log.len())
            .field("pending", &self.pending.len())
            .field("sent", &self.sent)
            .field("recv", &self.recv)
            .finish()
    }
}

impl EngineSession {
    /// Binds `backend` and starts a session whose log holds the predefined
    /// objects.
    pub fn launch(backend: &str, fabric: Arc<NetworkFabric>, rank: RankId) -> Result<Self> {
        let adapter = AdapterInstance::bind_backend(backend, Arc::clone(&fabric), rank)?;
        let mut session = EngineSession::bare(adapter, fabric, rank);
        for p in Predefined::ALL {
            let vid = VirtualId::predefined(p);
            session.vids.bind(vid, p.handle())?;
            let (recorded_size, recorded_rank) = session.recorded_shape(vid, p.handle())?;
            session.log.push(LogEntry {
                vid,
                recipe: CreationRecipe::Predefined(p),
                recorded_size,
                recorded_rank,
                freed: false,
            });
        }
        Ok(session)
    }

    fn bare(adapter: AdapterInstance, fabric: Arc<NetworkFabric>, rank: RankId) -> Self {
        EngineSession {
            adapter,
            fabric,
            rank,
            vids: VidTable::default(),
            log: CreationLog::default(),
            pending: HashMap::new(),
            sent: 0,
            recv: 0,
        }
    }

    pub fn rank(&self) -> RankId {
        self.rank
    }

    pub fn adapter(&self) -> &AdapterInstance {
        &self.adapter
    }

    pub fn log(&self) -> &CreationLog {
        &self.log
    }

    /// Engine-mediated point-to-point completions: `(sent, received)`.
    pub fn counters(&self) -> (u64, u64) {
        (self.sent, self.recv)
    }

    pub fn pending_requests(&self) -> usize {
        self.pending.len()
    }

    pub fn vid_to_abi(&self, vid: VirtualId) -> Result<AbiHandle> {
        self.vids
            .to_abi
            .get(&vid)
            .copied()
            .ok_or_else(|| Error::InvalidHandle(format!("{vid} is not live")))
    }

    /// Live ids in ascending order.
    pub fn live_vids(&self) -> Vec<VirtualId> {
        let mut v: Vec<_> = self.vids.to_abi.keys().copied().collect();
        v.sort_unstable();
        v
    }

    fn resolve(&self, vid: VirtualId, want: HandleKind) -> Result<AbiHandle> {
        if vid.is_null() {
            return Err(Error::InvalidHandle(format!("null id where a {want} was expected")));
        }
        let kind = vid
            .kind()
            .map_err(|_| Error::InvalidHandle(format!("{vid} carries an undefined kind tag")))?;
        if kind != want {
            return Err(Error::KindMismatch(format!("{vid} is a {kind}, expected a {want}")));
        }
        self.vid_to_abi(vid)
    }

    fn recorded_shape(&mut self, vid: VirtualId, abi: AbiHandle) -> Result<(u32, u32)> {
        if !abi.is_null() && vid.kind()? == HandleKind::Comm {
            Ok((self.adapter.comm_size(abi)?, self.adapter.comm_rank(abi)?))
        } else {
            Ok((0, 0))
        }
    }

    /// Pairs a newly created object with a fresh id and logs its recipe.
    fn register(&mut self, kind: HandleKind, abi: AbiHandle, recipe: CreationRecipe) -> Result<VirtualId> {
        let vid = if abi.is_null() { VirtualId::NULL } else { self.vids.allocate(kind, abi)? };
        let (recorded_size, recorded_rank) = self.recorded_shape(vid, abi)?;
        self.log.push(LogEntry { vid, recipe, recorded_size, recorded_rank, freed: false });
        Ok(vid)
    }

    fn free(&mut self, vid: VirtualId, kind: HandleKind) -> Result<()> {
        let abi = self.resolve(vid, kind)?;
        if abi.is_predefined() {
            return Err(Error::InvalidHandle(format!("predefined {vid} cannot be freed")));
        }
        match kind {
            HandleKind::Comm => self.adapter.comm_free(abi)?,
            HandleKind::Datatype => self.adapter.type_free(abi)?,
            _ => unreachable!("only communicators and datatypes are freed by id"),
        }
        self.vids.unbind(vid)?;
        self.log.mark_freed(vid)
    }

    fn complete(&mut self, request: VirtualId, done: Completion) -> Completion {
        match self.pending.remove(&request) {
            Some(Direction::Send) => self.sent += 1,
            Some(Direction::Recv) => self.recv += 1,
            None => {}
        }
        // Request ids are never logged; dropping the binding retires them.
        let _ = self.vids.unbind(request);
        done
    }

    /// Snapshot of this rank's checkpoint image.
    pub fn image(&self, app_state: &[u8]) -> CheckpointImage {
        CheckpointImage {
            header: ImageHeader {
                format_version: IMAGE_VERSION,
                rank: self.rank.0,
                nranks: self.fabric.nranks(),
                sent: self.sent,
                recv: self.recv,
            },
            log: self.log.clone(),
            app_state: app_state.to_vec(),
        }
    }

    fn report(&self) -> ControlReport {
        ControlReport { sent: self.sent, recv: self.recv, pending: self.pending.len() as u64 }
    }

    /// Collective checkpoint at a safe point.
    ///
    /// Every rank runs the same number of control rounds, so a rank that
    /// fails the local pending check does not strand its peers.
    pub fn checkpoint_to(&mut self, app_state: &[u8], dir: &Path) -> Result<CheckpointImage> {
        let mut decision = GlobalDecision::NotQuiescent;
        for attempt in 0..QUIESCENCE_ROUNDS {
            decision = self.fabric.control_round(self.rank, self.report())?;
            if decision == GlobalDecision::Quiescent {
                break;
            }
            if attempt + 1 < QUIESCENCE_ROUNDS {
                self.adapter.barrier(ABI_COMM_WORLD)?;
            }
        }
        if !self.pending.is_empty() {
            return Err(Error::PendingAtCheckpoint(format!(
                "rank {} holds {} unresolved request(s)",
                self.rank,
                self.pending.len()
            )));
        }
        if decision != GlobalDecision::Quiescent {
            return Err(Error::PendingAtCheckpoint(format!(
                "no global quiescence after {QUIESCENCE_ROUNDS} control rounds"
            )));
        }

        let image = self.image(app_state);
        let written = self.write_image(&image, dir);
        // Final round doubles as a barrier and as a vote on the writes.
        let vote = ControlReport { pending: written.is_err() as u64, ..self.report() };
        let all_written = self.fabric.control_round(self.rank, vote)?;
        written?;
        if all_written != GlobalDecision::Quiescent {
            return Err(Error::BackendFailure("a peer failed to write its checkpoint image".into()));
        }
        Ok(image)
    }

    fn write_image(&self, image: &CheckpointImage, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        image.write(&dir.join(image_file_name(self.rank.0)))?;
        if self.rank.0 == 0 {
            Manifest::for_ranks(self.fabric.nranks()).write(dir)?;
        }
        Ok(())
    }
}

impl MessagePassing for EngineSession {
    type Handle = VirtualId;

    fn stack_name(&self) -> &'static str {
        "engine"
    }

    fn backend_name(&self) -> &'static str {
        self.adapter.backend_name()
    }

    fn predefined(&self, which: Predefined) -> VirtualId {
        VirtualId::predefined(which)
    }

    fn comm_null(&self) -> VirtualId {
        VirtualId::NULL
    }

    fn any_source(&self) -> i32 {
        ABI_ANY_SOURCE
    }

    fn any_tag(&self) -> i32 {
        ABI_ANY_TAG
    }

    fn undefined(&self) -> i32 {
        ABI_UNDEFINED
    }

    fn comm_size(&mut self, comm: VirtualId) -> Result<u32> {
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.adapter.comm_size(c)
    }

    fn comm_rank(&mut self, comm: VirtualId) -> Result<u32> {
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.adapter.comm_rank(c)
    }

    fn comm_split(&mut self, comm: VirtualId, color: i32, key: i32) -> Result<VirtualId> {
        let parent = self.resolve(comm, HandleKind::Comm)?;
        let abi = self.adapter.comm_split(parent, color, key)?;
        self.register(HandleKind::Comm, abi, CreationRecipe::CommSplit { parent: comm, color, key })
    }

    fn comm_dup(&mut self, comm: VirtualId) -> Result<VirtualId> {
        let parent = self.resolve(comm, HandleKind::Comm)?;
        let abi = self.adapter.comm_dup(parent)?;
        self.register(HandleKind::Comm, abi, CreationRecipe::CommDup { parent: comm })
    }

    fn comm_free(&mut self, comm: VirtualId) -> Result<()> {
        self.free(comm, HandleKind::Comm)
    }

    fn type_contiguous(&mut self, count: u32, base: VirtualId) -> Result<VirtualId> {
        let b = self.resolve(base, HandleKind::Datatype)?;
        let abi = self.adapter.type_contiguous(count, b)?;
        self.register(HandleKind::Datatype, abi, CreationRecipe::TypeContiguous { count, base })
    }

    fn type_size(&mut self, dtype: VirtualId) -> Result<u64> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        self.adapter.type_size(d)
    }

    fn type_free(&mut self, dtype: VirtualId) -> Result<()> {
        self.free(dtype, HandleKind::Datatype)
    }

    fn send(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: VirtualId,
        dst: i32,
        tag: i32,
        comm: VirtualId,
    ) -> Result<()> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.adapter.send(buf, count, d, dst, tag, c)?;
        self.sent += 1;
        Ok(())
    }

    fn recv(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: VirtualId,
        src: i32,
        tag: i32,
        comm: VirtualId,
    ) -> Result<AbiStatus> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        let st = self.adapter.recv(buf, count, d, src, tag, c)?;
        self.recv += 1;
        Ok(st)
    }

    fn isend(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: VirtualId,
        dst: i32,
        tag: i32,
        comm: VirtualId,
    ) -> Result<VirtualId> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        let req = self.adapter.isend(buf, count, d, dst, tag, c)?;
        let vid = self.vids.allocate(HandleKind::Request, req)?;
        self.pending.insert(vid, Direction::Send);
        Ok(vid)
    }

    fn irecv(
        &mut self,
        count: u32,
        dtype: VirtualId,
        src: i32,
        tag: i32,
        comm: VirtualId,
    ) -> Result<VirtualId> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        let req = self.adapter.irecv(count, d, src, tag, c)?;
        let vid = self.vids.allocate(HandleKind::Request, req)?;
        self.pending.insert(vid, Direction::Recv);
        Ok(vid)
    }

    fn wait(&mut self, request: VirtualId) -> Result<Completion> {
        let r = self.resolve(request, HandleKind::Request)?;
        let done = self.adapter.wait(r)?;
        Ok(self.complete(request, done))
    }

    fn test(&mut self, request: VirtualId) -> Result<Option<Completion>> {
        let r = self.resolve(request, HandleKind::Request)?;
        Ok(self.adapter.test(r)?.map(|done| self.complete(request, done)))
    }

    fn barrier(&mut self, comm: VirtualId) -> Result<()> {
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.adapter.barrier(c)
    }

    fn bcast(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: VirtualId,
        root: i32,
        comm: VirtualId,
    ) -> Result<()> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.adapter.bcast(buf, count, d, root, c)
    }

    fn allreduce(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: VirtualId,
        op: VirtualId,
        comm: VirtualId,
    ) -> Result<()> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        let o = self.resolve(op, HandleKind::Op)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.adapter.allreduce(sendbuf, recvbuf, count, d, o, c)
    }

    fn alltoall(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: VirtualId,
        comm: VirtualId,
    ) -> Result<()> {
        let d = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.adapter.alltoall(sendbuf, recvbuf, count, d, c)
    }

    fn checkpoint(&mut self, app_state: &[u8], dir: &Path) -> Result<()> {
        self.checkpoint_to(app_state, dir).map(|_| ())
    }
}
