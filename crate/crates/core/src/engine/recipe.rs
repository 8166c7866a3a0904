use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::abi::{AbiHandle, HandleKind, Predefined, FIRST_DYNAMIC_INDEX};
use crate::error::{Error, Result};

/// Checkpoint-stable handle held by the application. Same `kind | index`
/// layout as [`AbiHandle`], in the engine's own namespace.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VirtualId(u32);

impl VirtualId {
    pub const NULL: VirtualId = VirtualId(0);

    pub fn new(kind: HandleKind, index: u32) -> Result<VirtualId> {
        AbiHandle::encode(kind, index).map(|h| VirtualId(h.raw()))
    }

    pub const fn from_raw(raw: u32) -> VirtualId {
        VirtualId(raw)
    }

    pub fn predefined(which: Predefined) -> VirtualId {
        VirtualId(which.handle().raw())
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    pub fn kind(self) -> Result<HandleKind> {
        AbiHandle::from_raw(self.0).kind()
    }

    pub fn index(self) -> u32 {
        AbiHandle::from_raw(self.0).index()
    }

    pub fn is_null(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for VirtualId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VirtualId({:#010x})", self.0)
    }
}

impl fmt::Display for VirtualId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vid:{:#010x}", self.0)
    }
}

/// How an object was made, in terms that do not depend on any backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CreationRecipe {
    Predefined(Predefined),
    CommDup { parent: VirtualId },
    /// `color` is the standard-ABI value, so `ABI_UNDEFINED` stays symbolic.
    CommSplit { parent: VirtualId, color: i32, key: i32 },
    TypeContiguous { count: u32, base: VirtualId },
}

impl CreationRecipe {
    pub fn dependencies(&self) -> Vec<VirtualId> {
        match *self {
            CreationRecipe::Predefined(_) => Vec::new(),
            CreationRecipe::CommDup { parent } | CreationRecipe::CommSplit { parent, .. } => vec![parent],
            CreationRecipe::TypeContiguous { base, .. } => vec![base],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    /// `VirtualId::NULL` when the creating call returned no object (a split
    /// with the undefined color); the entry still replays so peers can.
    pub vid: VirtualId,
    pub recipe: CreationRecipe,
    /// Communicator size and caller rank observed at creation; zero for
    /// other kinds.
    pub recorded_size: u32,
    pub recorded_rank: u32,
    pub freed: bool,
}

/// Creation records in call order. Appending at creation time keeps every
/// dependency ahead of its dependents, so log order is a valid replay order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CreationLog {
    entries: Vec<LogEntry>,
}

impl CreationLog {
    pub fn from_entries(entries: Vec<LogEntry>) -> Result<Self> {
        let log = CreationLog { entries };
        log.validate()?;
        Ok(log)
    }

    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mark_freed(&mut self, vid: VirtualId) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.vid == vid && !e.freed)
            .ok_or_else(|| Error::InvalidHandle(format!("{vid} has no live creation record")))?;
        entry.freed = true;
        Ok(())
    }

    /// Checks that ids are unique and every dependency was created earlier.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            for dep in e.recipe.dependencies() {
                if !seen.contains(&dep) {
                    return Err(Error::ReplayMismatch(format!(
                        "log entry {i} depends on {dep}, which is not created earlier"
                    )));
                }
            }
            if !e.vid.is_null() && !seen.insert(e.vid) {
                return Err(Error::ReplayMismatch(format!("{} appears twice in the log", e.vid)));
            }
        }
        Ok(())
    }

    /// Next free dynamic index per kind implied by the ids in the log.
    pub(crate) fn next_indexes(&self) -> HashMap<HandleKind, u32> {
        let mut next = HashMap::new();
        for e in self.entries.iter().filter(|e| !e.vid.is_null()) {
            if let Ok(kind) = e.vid.kind() {
                let slot = next.entry(kind).or_insert(FIRST_DYNAMIC_INDEX);
                if e.vid.index() >= *slot {
                    *slot = e.vid.index() + 1;
                }
            }
        }
        next
    }
}
