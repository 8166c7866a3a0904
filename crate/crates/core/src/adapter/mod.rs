//! Standard-ABI front end over whichever backend is bound at run time.
//!
//! Every call translates handle arguments to the backend's native handles,
//! rewrites wildcard and "undefined" sentinels to the backend's values, calls
//! the backend, and maps results back: new objects get standard handles and
//! native status records are read field by field into [`AbiStatus`]. Buffer
//! contents pass through untouched.

mod table;

use std::sync::Arc;

pub use table::TranslationTable;

use crate::abi::{
    AbiHandle, AbiStatus, HandleKind, Predefined, ABI_ANY_SOURCE, ABI_ANY_TAG, ABI_COMM_NULL,
    ABI_UNDEFINED,
};
use crate::api::{Completion, HandleRepr, MessagePassing};
use crate::backends::{self, BackendApi, NativeConstants, NativeHandle, NativeStatus};
use crate::error::{Error, Result};
use crate::transport::{NetworkFabric, RankId};

impl HandleRepr for AbiHandle {
    fn to_raw(self) -> u64 {
        self.raw() as u64
    }

    fn from_raw(raw: u64) -> Self {
        AbiHandle::from_raw(raw as u32)
    }
}

pub struct AdapterInstance {
    backend_name: &'static str,
    backend: Box<dyn BackendApi>,
    table: TranslationTable,
    constants: &'static NativeConstants,
}

impl std::fmt::Debug for AdapterInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterInstance")
            .field("backend", &self.backend_name)
            .field("rank", &self.backend.rank())
            .field("entries", &self.table.len())
            .finish()
    }
}

impl AdapterInstance {
    /// Starts a fresh backend session and pairs every predefined standard
    /// handle with the backend's own object.
    pub fn bind_backend(name: &str, fabric: Arc<NetworkFabric>, rank: RankId) -> Result<Self> {
        let mut backend = backends::create(name, fabric, rank)?;
        backend.init()?;
        let mut table = TranslationTable::default();
        for p in Predefined::ALL {
            table.register_predefined(p.handle(), backend.predefined(p)?)?;
        }
        Ok(AdapterInstance {
            backend_name: backend.name(),
            constants: backend.constants(),
            backend,
            table,
        })
    }

    pub fn table(&self) -> &TranslationTable {
        &self.table
    }

    pub fn backend(&self) -> &dyn BackendApi {
        self.backend.as_ref()
    }

    pub fn rank(&self) -> RankId {
        self.backend.rank()
    }

    pub fn dump_table(&self) -> String {
        self.table.to_tsv()
    }

    pub fn abi_to_native(&self, h: AbiHandle) -> Result<NativeHandle> {
        h.decode().map_err(|_| {
            Error::KindMismatch(format!("{h} carries an undefined kind tag"))
        })?;
        self.table
            .native(h)
            .ok_or_else(|| Error::InvalidHandle(format!("{h} is not registered with the adapter")))
    }

    pub fn native_to_abi(&mut self, kind: HandleKind, raw: NativeHandle) -> Result<AbiHandle> {
        if kind == HandleKind::Null {
            return Err(Error::KindMismatch("cannot register an object of kind Null".into()));
        }
        self.table.intern(kind, raw)
    }

    /// Resolves `h` as an argument of declared kind `want`.
    fn resolve(&self, h: AbiHandle, want: HandleKind) -> Result<NativeHandle> {
        let (kind, _) = h
            .decode()
            .map_err(|_| Error::KindMismatch(format!("{h} carries an undefined kind tag")))?;
        if h.is_null() {
            return Err(Error::InvalidHandle(format!("null handle where a {want} was expected")));
        }
        if kind != want {
            return Err(Error::KindMismatch(format!("{h} is a {kind}, expected a {want}")));
        }
        self.abi_to_native(h)
    }

    fn source(&self, src: i32) -> Result<i32> {
        match src {
            ABI_ANY_SOURCE => Ok(self.constants.any_source),
            s if s >= 0 => Ok(s),
            s => Err(Error::InvalidHandle(format!("invalid source rank {s}"))),
        }
    }

    fn tag(&self, tag: i32) -> Result<i32> {
        match tag {
            ABI_ANY_TAG => Ok(self.constants.any_tag),
            t if t >= 0 => Ok(t),
            t => Err(Error::InvalidHandle(format!("invalid tag {t}"))),
        }
    }

    fn send_tag(tag: i32) -> Result<i32> {
        if tag < 0 {
            return Err(Error::InvalidHandle(format!("invalid send tag {tag}")));
        }
        Ok(tag)
    }

    fn color(&self, color: i32) -> Result<i32> {
        match color {
            ABI_UNDEFINED => Ok(self.constants.undefined),
            c if c >= 0 => Ok(c),
            c => Err(Error::InvalidHandle(format!("invalid split color {c}"))),
        }
    }

    /// Reads the backend's status record by field name.
    pub fn status_to_abi(&self, st: &NativeStatus) -> AbiStatus {
        self.constants.status_to_abi(st)
    }

    fn completion(&self, (st, data): (NativeStatus, Option<Vec<u8>>)) -> Completion {
        Completion { status: self.status_to_abi(&st), data }
    }

    pub fn comm_group(&mut self, comm: AbiHandle) -> Result<AbiHandle> {
        let native = self.backend.comm_group(self.resolve(comm, HandleKind::Comm)?)?;
        self.native_to_abi(HandleKind::Group, native)
    }

    pub fn group_size(&self, group: AbiHandle) -> Result<u32> {
        self.backend.group_size(self.resolve(group, HandleKind::Group)?)
    }

    pub fn group_rank(&self, group: AbiHandle) -> Result<Option<u32>> {
        self.backend.group_rank(self.resolve(group, HandleKind::Group)?)
    }

    pub fn group_free(&mut self, group: AbiHandle) -> Result<()> {
        self.backend.group_free(self.resolve(group, HandleKind::Group)?)?;
        self.table.remove(group).map(|_| ())
    }
}

impl MessagePassing for AdapterInstance {
    type Handle = AbiHandle;

    fn stack_name(&self) -> &'static str {
        "adapter"
    }

    fn backend_name(&self) -> &'static str {
        self.backend_name
    }

    fn predefined(&self, which: Predefined) -> AbiHandle {
        which.handle()
    }

    fn comm_null(&self) -> AbiHandle {
        ABI_COMM_NULL
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

    fn comm_size(&mut self, comm: AbiHandle) -> Result<u32> {
        self.backend.comm_size(self.resolve(comm, HandleKind::Comm)?)
    }

    fn comm_rank(&mut self, comm: AbiHandle) -> Result<u32> {
        self.backend.comm_rank(self.resolve(comm, HandleKind::Comm)?)
    }

    fn comm_split(&mut self, comm: AbiHandle, color: i32, key: i32) -> Result<AbiHandle> {
        let parent = self.resolve(comm, HandleKind::Comm)?;
        let color = self.color(color)?;
        let native = self.backend.comm_split(parent, color, key)?;
        if native.is_null() {
            return Ok(ABI_COMM_NULL);
        }
        self.native_to_abi(HandleKind::Comm, native)
    }

    fn comm_dup(&mut self, comm: AbiHandle) -> Result<AbiHandle> {
        let native = self.backend.comm_dup(self.resolve(comm, HandleKind::Comm)?)?;
        self.native_to_abi(HandleKind::Comm, native)
    }

    fn comm_free(&mut self, comm: AbiHandle) -> Result<()> {
        self.backend.comm_free(self.resolve(comm, HandleKind::Comm)?)?;
        self.table.remove(comm).map(|_| ())
    }

    fn type_contiguous(&mut self, count: u32, base: AbiHandle) -> Result<AbiHandle> {
        let native = self
            .backend
            .type_contiguous(count, self.resolve(base, HandleKind::Datatype)?)?;
        self.native_to_abi(HandleKind::Datatype, native)
    }

    fn type_size(&mut self, dtype: AbiHandle) -> Result<u64> {
        self.backend.type_size(self.resolve(dtype, HandleKind::Datatype)?)
    }

    fn type_free(&mut self, dtype: AbiHandle) -> Result<()> {
        self.backend.type_free(self.resolve(dtype, HandleKind::Datatype)?)?;
        self.table.remove(dtype).map(|_| ())
    }

    fn send(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: AbiHandle,
        dst: i32,
        tag: i32,
        comm: AbiHandle,
    ) -> Result<()> {
        let dt = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.backend.send(buf, count, dt, dst, Self::send_tag(tag)?, c)
    }

    fn recv(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: AbiHandle,
        src: i32,
        tag: i32,
        comm: AbiHandle,
    ) -> Result<AbiStatus> {
        let dt = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        let st = self.backend.recv(buf, count, dt, self.source(src)?, self.tag(tag)?, c)?;
        Ok(self.status_to_abi(&st))
    }

    fn isend(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: AbiHandle,
        dst: i32,
        tag: i32,
        comm: AbiHandle,
    ) -> Result<AbiHandle> {
        let dt = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        let req = self.backend.isend(buf, count, dt, dst, Self::send_tag(tag)?, c)?;
        self.native_to_abi(HandleKind::Request, req)
    }

    fn irecv(
        &mut self,
        count: u32,
        dtype: AbiHandle,
        src: i32,
        tag: i32,
        comm: AbiHandle,
    ) -> Result<AbiHandle> {
        let dt = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        let req = self.backend.irecv(count, dt, self.source(src)?, self.tag(tag)?, c)?;
        self.native_to_abi(HandleKind::Request, req)
    }

    fn wait(&mut self, request: AbiHandle) -> Result<Completion> {
        let native = self.resolve(request, HandleKind::Request)?;
        let done = self.backend.wait(native)?;
        self.table.remove(request)?;
        Ok(self.completion(done))
    }

    fn test(&mut self, request: AbiHandle) -> Result<Option<Completion>> {
        let native = self.resolve(request, HandleKind::Request)?;
        match self.backend.test(native)? {
            Some(done) => {
                self.table.remove(request)?;
                Ok(Some(self.completion(done)))
            }
            None => Ok(None),
        }
    }

    fn barrier(&mut self, comm: AbiHandle) -> Result<()> {
        self.backend.barrier(self.resolve(comm, HandleKind::Comm)?)
    }

    fn bcast(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: AbiHandle,
        root: i32,
        comm: AbiHandle,
    ) -> Result<()> {
        let dt = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.backend.bcast(buf, count, dt, root, c)
    }

    fn allreduce(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: AbiHandle,
        op: AbiHandle,
        comm: AbiHandle,
    ) -> Result<()> {
        let dt = self.resolve(dtype, HandleKind::Datatype)?;
        let op = self.resolve(op, HandleKind::Op)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.backend.allreduce(sendbuf, recvbuf, count, dt, op, c)
    }

    fn alltoall(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: AbiHandle,
        comm: AbiHandle,
    ) -> Result<()> {
        let dt = self.resolve(dtype, HandleKind::Datatype)?;
        let c = self.resolve(comm, HandleKind::Comm)?;
        self.backend.alltoall(sendbuf, recvbuf, count, dt, c)
    }
}
