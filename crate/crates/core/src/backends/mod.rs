//! Two message-passing runtimes with the same behavior and incompatible
//! native ABIs.
//!
//! * [`IndexBackend`] hands out 32-bit handles `0x44 | kind | pool index`
//!   from a slot table that reuses freed slots.
//! * [`RefBackend`] hands out 64-bit address-like keys starting at
//!   `0x7F00_0000_0000` that are never reused.
//!
//! Wildcards, the "undefined" color, error codes and the status field order
//! also differ, so an application built for one cannot use the other without
//! translation.

mod index;
mod native;
mod object;
mod reference;
mod runtime;

use std::fmt;
use std::sync::Arc;

pub use index::{index_handle_space, IndexPool, INDEX_MARKER};
pub use native::NativeBinding;
pub use object::{BackendObject, Communicator, Datatype, ElementKind, ReduceKind, Request};
pub use reference::{ref_key_space, RefHeap, REF_KEY_BASE};
pub use runtime::{ObjectStore, Runtime};

use crate::abi::{AbiStatus, ErrorCode, Predefined};
use crate::error::{Error, Result};
use crate::transport::{NetworkFabric, RankId};

pub type IndexBackend = Runtime<IndexPool>;
pub type RefBackend = Runtime<RefHeap>;

pub const BACKEND_NAMES: [&str; 2] = ["index", "ref"];

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NativeHandle(pub u64);

impl NativeHandle {
    pub const NULL: NativeHandle = NativeHandle(0);

    pub fn is_null(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for NativeHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NativeHandle({:#x})", self.0)
    }
}

/// Positions of the named fields inside a [`NativeStatus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatusLayout {
    pub source: usize,
    pub tag: usize,
    pub error: usize,
    pub count: usize,
}

/// A backend's status record: four words whose meaning depends on the
/// backend's [`StatusLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NativeStatus {
    pub words: [i64; 4],
}

impl NativeStatus {
    pub fn new(layout: StatusLayout, source: i32, tag: i32, error: i32, count: u64) -> Self {
        let mut words = [0i64; 4];
        words[layout.source] = source as i64;
        words[layout.tag] = tag as i64;
        words[layout.error] = error as i64;
        words[layout.count] = count as i64;
        NativeStatus { words }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NativeConstants {
    pub any_source: i32,
    pub any_tag: i32,
    pub undefined: i32,
    pub err_success: i32,
    pub err_truncate: i32,
    pub status_layout: StatusLayout,
}

impl NativeConstants {
    /// Reads a native status field by field into the standard record.
    pub fn status_to_abi(&self, st: &NativeStatus) -> AbiStatus {
        let l = self.status_layout;
        let err = st.words[l.error] as i32;
        let error = if err == self.err_success {
            ErrorCode::Success
        } else if err == self.err_truncate {
            ErrorCode::Truncated
        } else {
            ErrorCode::BackendFailure
        };
        AbiStatus {
            source: st.words[l.source] as i32,
            tag: st.words[l.tag] as i32,
            error: error as i32,
            count_bytes: st.words[l.count] as u64,
        }
    }
}

/// Completion of a native request: status plus received bytes for receives.
pub type NativeCompletion = (NativeStatus, Option<Vec<u8>>);

/// Contract shared by both backends. Handles are native to the implementor.
pub trait BackendApi: Send {
    fn name(&self) -> &'static str;
    fn constants(&self) -> &'static NativeConstants;
    fn rank(&self) -> RankId;

    /// Creates the world and self communicators and registers predefined
    /// datatypes and ops. Allowed once per session.
    fn init(&mut self) -> Result<()>;
    fn predefined(&self, which: Predefined) -> Result<NativeHandle>;
    /// Every live object handle, for introspection.
    fn live_handles(&self) -> Vec<NativeHandle>;

    fn comm_size(&self, comm: NativeHandle) -> Result<u32>;
    fn comm_rank(&self, comm: NativeHandle) -> Result<u32>;
    fn comm_split(&mut self, comm: NativeHandle, color: i32, key: i32) -> Result<NativeHandle>;
    fn comm_dup(&mut self, comm: NativeHandle) -> Result<NativeHandle>;
    fn comm_free(&mut self, comm: NativeHandle) -> Result<()>;
    fn comm_group(&mut self, comm: NativeHandle) -> Result<NativeHandle>;
    fn group_size(&self, group: NativeHandle) -> Result<u32>;
    /// `None` when the caller is not a member.
    fn group_rank(&self, group: NativeHandle) -> Result<Option<u32>>;
    fn group_free(&mut self, group: NativeHandle) -> Result<()>;

    fn type_contiguous(&mut self, count: u32, base: NativeHandle) -> Result<NativeHandle>;
    fn type_size(&self, dtype: NativeHandle) -> Result<u64>;
    fn type_free(&mut self, dtype: NativeHandle) -> Result<()>;

    fn send(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: NativeHandle,
        dst: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<()>;
    fn recv(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        src: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<NativeStatus>;
    fn isend(
        &mut self,
        buf: &[u8],
        count: u32,
        dtype: NativeHandle,
        dst: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<NativeHandle>;
    fn irecv(
        &mut self,
        count: u32,
        dtype: NativeHandle,
        src: i32,
        tag: i32,
        comm: NativeHandle,
    ) -> Result<NativeHandle>;
    /// Blocks until `request` completes; the request is freed.
    fn wait(&mut self, request: NativeHandle) -> Result<NativeCompletion>;
    /// Frees the request only when it has completed.
    fn test(&mut self, request: NativeHandle) -> Result<Option<NativeCompletion>>;

    fn barrier(&mut self, comm: NativeHandle) -> Result<()>;
    fn bcast(
        &mut self,
        buf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        root: i32,
        comm: NativeHandle,
    ) -> Result<()>;
    fn allreduce(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        op: NativeHandle,
        comm: NativeHandle,
    ) -> Result<()>;
    fn alltoall(
        &mut self,
        sendbuf: &[u8],
        recvbuf: &mut [u8],
        count: u32,
        dtype: NativeHandle,
        comm: NativeHandle,
    ) -> Result<()>;
}

/// Creates an uninitialized backend session by name (`"index"` or `"ref"`).
pub fn create(name: &str, fabric: Arc<NetworkFabric>, rank: RankId) -> Result<Box<dyn BackendApi>> {
    fabric.check_rank(rank)?;
    match name {
        "index" => Ok(Box::new(IndexBackend::new(fabric, rank))),
        "ref" => Ok(Box::new(RefBackend::new(fabric, rank))),
        other => Err(Error::BackendFailure(format!(
            "unknown backend {other:?}; expected one of {BACKEND_NAMES:?}"
        ))),
    }
}
