//! Slot-table object store: handles are `0x44 << 24 | kind << 20 | slot`.

use super::object::BackendObject;
use super::runtime::ObjectStore;
use super::{NativeConstants, NativeHandle, StatusLayout};
use crate::abi::HandleKind;
use crate::error::{Error, Result};

pub const INDEX_MARKER: u64 = 0x44;
const SLOT_BITS: u32 = 20;
const SLOT_MASK: u64 = (1 << SLOT_BITS) - 1;

static CONSTANTS: NativeConstants = NativeConstants {
    any_source: -2,
    any_tag: -2,
    undefined: -32766,
    err_success: 0,
    err_truncate: 14,
    // record {tag, src, err, bytes}
    status_layout: StatusLayout { tag: 0, source: 1, error: 2, count: 3 },
};

fn kind_code(kind: HandleKind) -> u64 {
    match kind {
        HandleKind::Null => 0x0,
        HandleKind::Comm => 0x2,
        HandleKind::Group => 0x8,
        HandleKind::Datatype => 0xC,
        HandleKind::Op => 0x3,
        HandleKind::Request => 0xA,
    }
}

/// Every handle value the first `slots` slots can carry, across all
/// object kinds.
pub fn index_handle_space(slots: u32) -> Vec<NativeHandle> {
    let codes = [HandleKind::Comm, HandleKind::Group, HandleKind::Datatype, HandleKind::Op, HandleKind::Request]
        .map(kind_code);
    codes
        .iter()
        .flat_map(|&c| (0..slots as u64).map(move |s| NativeHandle((INDEX_MARKER << 24) | (c << SLOT_BITS) | s)))
        .collect()
}

#[derive(Default)]
pub struct IndexPool {
    slots: Vec<Option<BackendObject>>,
    free: Vec<usize>,
}

impl IndexPool {
    fn slot_of(&self, h: NativeHandle) -> Result<usize> {
        let raw = h.0;
        if raw >> 32 != 0 || raw >> 24 != INDEX_MARKER {
            return Err(Error::InvalidHandle(format!("{raw:#x} is not an index-backend handle")));
        }
        let slot = (raw & SLOT_MASK) as usize;
        match self.slots.get(slot) {
            Some(Some(obj)) if kind_code(obj.kind()) == (raw >> SLOT_BITS) & 0xF => Ok(slot),
            _ => Err(Error::InvalidHandle(format!("{raw:#x} does not name a live object"))),
        }
    }
}

impl ObjectStore for IndexPool {
    fn name() -> &'static str {
        "index"
    }

    fn constants() -> &'static NativeConstants {
        &CONSTANTS
    }

    fn insert(&mut self, obj: BackendObject) -> Result<NativeHandle> {
        let code = kind_code(obj.kind());
        let slot = match self.free.pop() {
            Some(slot) => {
                self.slots[slot] = Some(obj);
                slot
            }
            None => {
                if self.slots.len() as u64 > SLOT_MASK {
                    return Err(Error::BackendFailure("index backend object pool exhausted".into()));
                }
                self.slots.push(Some(obj));
                self.slots.len() - 1
            }
        };
        Ok(NativeHandle((INDEX_MARKER << 24) | (code << SLOT_BITS) | slot as u64))
    }

    fn get(&self, h: NativeHandle) -> Result<&BackendObject> {
        let slot = self.slot_of(h)?;
        Ok(self.slots[slot].as_ref().expect("slot_of checks liveness"))
    }

    fn remove(&mut self, h: NativeHandle) -> Result<BackendObject> {
        let slot = self.slot_of(h)?;
        self.free.push(slot);
        Ok(self.slots[slot].take().expect("slot_of checks liveness"))
    }

    fn handles(&self) -> Vec<NativeHandle> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.as_ref().map(|o| {
                    NativeHandle((INDEX_MARKER << 24) | (kind_code(o.kind()) << SLOT_BITS) | i as u64)
                })
            })
            .collect()
    }
}
