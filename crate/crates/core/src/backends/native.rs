//! The "native" stack: an application bound directly to one backend's own
//! handles, wildcards and status layout, with no translation layer.

use std::sync::Arc;

use super::{create, BackendApi, NativeHandle};
use crate::abi::{AbiStatus, Predefined};
use crate::api::{Completion, HandleRepr, MessagePassing};
use crate::error::Result;
use crate::transport::{NetworkFabric, RankId};

impl HandleRepr for NativeHandle {
    fn to_raw(self) -> u64 {
        self.0
    }

    fn from_raw(raw: u64) -> Self {
        NativeHandle(raw)
    }
}

pub struct NativeBinding {
    backend: Box<dyn BackendApi>,
    predefined: Vec<NativeHandle>,
}

impl NativeBinding {
    pub fn new(backend_name: &str, fabric: Arc<NetworkFabric>, rank: RankId) -> Result<Self> {
        let mut backend = create(backend_name, fabric, rank)?;
        backend.init()?;
        let predefined = Predefined::ALL
            .into_iter()
            .map(|p| backend.predefined(p))
            .collect::<Result<_>>()?;
        Ok(NativeBinding { backend, predefined })
    }

    pub fn backend(&self) -> &dyn BackendApi {
        self.backend.as_ref()
    }

    fn status(&self, st: &super::NativeStatus) -> AbiStatus {
        self.backend.constants().status_to_abi(st)
    }
}

impl MessagePassing for NativeBinding {
    type Handle = NativeHandle;

    fn stack_name(&self) -> &'static str {
        "native"
    }

    fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    fn predefined(&self, which: Predefined) -> NativeHandle {
        let pos = Predefined::ALL.iter().position(|p| *p == which).expect("listed");
        self.predefined[pos]
    }

    fn comm_null(&self) -> NativeHandle {
        NativeHandle::NULL
    }

    fn any_source(&self) -> i32 {
        self.backend.constants().any_source
    }

    fn any_tag(&self) -> i32 {
        self.backend.constants().any_tag
    }

    fn undefined(&self) -> i32 {
        self.backend.constants().undefined
    }

    fn comm_size(&mut self, comm: NativeHandle) -> Result<u32> {
        self.backend.comm_size(comm)
    }

    fn comm_rank(&mut self, comm: NativeHandle) -> Result<u32> {
        self.backend.comm_rank(comm)
    }

    fn comm_split(&mut self, comm: NativeHandle, color: i32, key: i32) -> Result<NativeHandle> {
        self.backend.comm_split(comm, color, key)
    }

    fn comm_dup(&mut self, comm: NativeHandle) -> Result<NativeHandle> {
        self.backend.comm_dup(comm)
    }

    fn comm_free(&mut self, comm: NativeHandle) -> Result<()> {
        self.backend.comm_free(comm)
    }

    fn type_contiguous(&mut self, count: u32, base: NativeHandle) -> Result<NativeHandle> {
        self.backend.type_contiguous(count, base)
    }

    fn type_size(&mut self, dtype: NativeHandle) -> Result<u64> {
        self.backend.type_size(dtype)
    }

    fn type_free(&mut self, dtype: NativeHandle) -> Result<()> {
        self.backend.type_free(dtype)
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
        self.backend.send(buf, count, dtype, dst, tag, comm)
    }

    fn recv(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        src: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<AbiStatus> {
        let st = self.backend.recv(buf, count, dtype, src, tag, comm)?;
        Ok(self.status(&st))
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
        self.backend.isend(buf, count, dtype, dst, tag, comm)
    }

    fn irecv(
        &mut self,
        count: u32,
        dtype: NativeHandle,
        src: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<NativeHandle> {
        self.backend.irecv(count, dtype, src, tag, comm)
    }

    fn wait(&mut self, request: NativeHandle) -> Result<Completion> {
        let (st, data) = self.backend.wait(request)?;
        Ok(Completion { status: self.status(&st), data })
    }

    fn test(&mut self, request: NativeHandle) -> Result<Option<Completion>> {
        Ok(self
            .backend
            .test(request)?
            .map(|(st, data)| Completion { status: self.status(&st), data }))
    }

    fn barrier(&mut self, comm: NativeHandle) -> Result<()> {
        self.backend.barrier(comm)
    }

    fn bcast(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        root: i32,
        comm: NativeHandle,
    ) -> Result<()> {
        self.backend.bcast(buf, count, dtype, root, comm)
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
        self.backend.allreduce(sendbuf, recvbuf, count, dtype, op, comm)
    }

    fn alltoall(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        comm: NativeHandle,
    ) -> Result<()> {
        self.backend.alltoall(sendbuf, recvbuf, count, dtype, comm)
    }
}
