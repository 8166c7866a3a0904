use std::path::Path;
use std::sync::Arc;

use super::image::{CheckpointImage, Manifest};
use super::recipe::{CreationRecipe, LogEntry, VirtualId};
use super::EngineSession;
use crate::abi::{AbiHandle, HandleKind};
use crate::adapter::AdapterInstance;
use crate::api::MessagePassing;
use crate::error::{Error, Result};
use crate::transport::{NetworkFabric, RankId};

/// Rebuilds a session from the checkpoint in `dir`, bound to `backend`
/// (which need not be the backend the checkpoint was taken on).
///
/// Collective: every rank of `fabric` must call it with the same `dir`.
/// Returns the session and the application blob stored by this rank.
pub fn restart(
    dir: &Path,
    backend: &str,
    fabric: Arc<NetworkFabric>,
    rank: RankId,
) -> Result<(EngineSession, Vec<u8>)> {
    let manifest = Manifest::read(dir)?;
    if manifest.nranks != fabric.nranks() {
        return Err(Error::BackendFailure(format!(
            "checkpoint holds {} ranks but the fabric has {}",
            manifest.nranks,
            fabric.nranks()
        )));
    }
    let image = CheckpointImage::read(&manifest.image_path(dir, rank.0)?)?;
    if image.header.rank != rank.0 || image.header.nranks != manifest.nranks {
        return Err(Error::BackendFailure(format!(
            "image for rank {} claims rank {} of {}",
            rank, image.header.rank, image.header.nranks
        )));
    }

    let adapter = AdapterInstance::bind_backend(backend, Arc::clone(&fabric), rank)?;
    let mut session = EngineSession::bare(adapter, fabric, rank);
    for entry in image.log.entries() {
        session.replay(entry)?;
    }
    // Freed objects were recreated above so their dependents could be; drop
    // them now, newest first.
    for entry in image.log.entries().iter().rev().filter(|e| e.freed && !e.vid.is_null()) {
        let kind = entry.vid.kind()?;
        session.free_replayed(entry.vid, kind)?;
    }

    session.vids.next_index = image.log.next_indexes();
    session.log = image.log;
    session.sent = image.header.sent;
    session.recv = image.header.recv;
    Ok((session, image.app_state))
}

impl EngineSession {
    fn replay(&mut self, entry: &LogEntry) -> Result<()> {
        let abi = match entry.recipe {
            CreationRecipe::Predefined(p) => {
                if entry.vid != VirtualId::predefined(p) {
                    return Err(Error::ReplayMismatch(format!(
                        "{} is logged as predefined {}",
                        entry.vid,
                        p.name()
                    )));
                }
                p.handle()
            }
            CreationRecipe::CommDup { parent } => {
                let p = self.resolve(parent, HandleKind::Comm)?;
                self.adapter.comm_dup(p)?
            }
            CreationRecipe::CommSplit { parent, color, key } => {
                let p = self.resolve(parent, HandleKind::Comm)?;
                self.adapter.comm_split(p, color, key)?
            }
            CreationRecipe::TypeContiguous { count, base } => {
                let b = self.resolve(base, HandleKind::Datatype)?;
                self.adapter.type_contiguous(count, b)?
            }
        };
        if abi.is_null() != entry.vid.is_null() {
            return Err(Error::ReplayMismatch(format!(
                "replaying {:?} for {} produced {abi}",
                entry.recipe, entry.vid
            )));
        }
        if abi.is_null() {
            return Ok(());
        }
        let (size, rank) = self.recorded_shape(entry.vid, abi)?;
        if (size, rank) != (entry.recorded_size, entry.recorded_rank) {
            return Err(Error::ReplayMismatch(format!(
                "{} was size {} rank {} at checkpoint, replay gives size {size} rank {rank}",
                entry.vid, entry.recorded_size, entry.recorded_rank
            )));
        }
        self.vids.bind(entry.vid, abi)
    }

    fn free_replayed(&mut self, vid: VirtualId, kind: HandleKind) -> Result<()> {
        let abi: AbiHandle = self.resolve(vid, kind)?;
        match kind {
            HandleKind::Comm => self.adapter.comm_free(abi)?,
            HandleKind::Datatype => self.adapter.type_free(abi)?,
            other => {
                return Err(Error::ReplayMismatch(format!("log marks a {other} as freed")));
            }
        }
        self.vids.unbind(vid).map(|_| ())
    }
}
