//! The call surface an application is written against.
//!
//! Applications are generic over [`MessagePassing`], so the same code runs
//! directly on a backend, through the adapter, or through the checkpoint
//! engine. Only the handle type and the wildcard values differ per stack.

use std::fmt::Debug;
use std::hash::Hash;
use std::path::Path;

use crate::abi::{AbiStatus, Predefined};
use crate::error::{Error, Result};

/// Conversion of a stack's handle type to and from a plain integer, so
/// applications can store handles inside their own state.
pub trait HandleRepr: Copy + Eq + Hash + Debug + Send {
    fn to_raw(self) -> u64;
    fn from_raw(raw: u64) -> Self;
}

/// Result of completing a nonblocking request. `data` holds the received
/// bytes for receive requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub status: AbiStatus,
    pub data: Option<Vec<u8>>,
}

pub trait MessagePassing {
    type Handle: HandleRepr;

    /// `"native"`, `"adapter"` or `"engine"`.
    fn stack_name(&self) -> &'static str;
    fn backend_name(&self) -> &'static str;

    fn predefined(&self, which: Predefined) -> Self::Handle;
    fn comm_null(&self) -> Self::Handle;
    fn any_source(&self) -> i32;
    fn any_tag(&self) -> i32;
    fn undefined(&self) -> i32;

    fn comm_world(&self) -> Self::Handle {
        self.predefined(Predefined::CommWorld)
    }

    fn comm_size(&mut self, comm: Self::Handle) -> Result<u32>;
    fn comm_rank(&mut self, comm: Self::Handle) -> Result<u32>;
    fn comm_split(&mut self, comm: Self::Handle, color: i32, key: i32) -> Result<Self::Handle>;
    fn comm_dup(&mut self, comm: Self::Handle) -> Result<Self::Handle>;
    fn comm_free(&mut self, comm: Self::Handle) -> Result<()>;

    fn type_contiguous(&mut self, count: u32, base: Self::Handle) -> Result<Self::Handle>;
    fn type_size(&mut self, dtype: Self::Handle) -> Result<u64>;
    fn type_free(&mut self, dtype: Self::Handle) -> Result<()>;

    fn send(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: Self::Handle,
        dst: i32,
        tag: i32,
        comm: Self::Handle,
    ) -> Result<()>;
    fn recv(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: Self::Handle,
        src: i32,
        tag: i32,
        comm: Self::Handle,
    ) -> Result<AbiStatus>;
    fn isend(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: Self::Handle,
        dst: i32,
        tag: i32,
        comm: Self::Handle,
    ) -> Result<Self::Handle>;
    fn irecv(
        &mut self,
        count: u32,
        dtype: Self::Handle,
        src: i32,
        tag: i32,
        comm: Self::Handle,
    ) -> Result<Self::Handle>;
    fn wait(&mut self, request: Self::Handle) -> Result<Completion>;
    fn test(&mut self, request: Self::Handle) -> Result<Option<Completion>>;

    fn barrier(&mut self, comm: Self::Handle) -> Result<()>;
    fn bcast(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: Self::Handle,
        root: i32,
        comm: Self::Handle,
    ) -> Result<()>;
    fn allreduce(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: Self::Handle,
        op: Self::Handle,
        comm: Self::Handle,
    ) -> Result<()>;
    fn alltoall(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: Self::Handle,
        comm: Self::Handle,
    ) -> Result<()>;

    /// Collective safe-point checkpoint. Only the engine stack supports it.
    fn checkpoint(&mut self, _app_state: &[u8], _dir: &Path) -> Result<()> {
        Err(Error::BackendFailure(format!(
            "the {} stack cannot checkpoint",
            self.stack_name()
        )))
    }
}
