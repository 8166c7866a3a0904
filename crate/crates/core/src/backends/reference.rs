//! Address-like object store: every object gets a fresh 64-bit key from a
//! monotonically increasing counter. Keys are never reused.

use std::collections::BTreeMap;

use super::object::BackendObject;
use super::runtime::ObjectStore;
use super::{NativeConstants, NativeHandle, StatusLayout};
use crate::error::{Error, Result};

pub const REF_KEY_BASE: u64 = 0x7F00_0000_0000;
const KEY_STRIDE: u64 = 0x40;

static CONSTANTS: NativeConstants = NativeConstants {
    any_source: -1,
    any_tag: -32767,
    undefined: -32766,
    err_success: 0,
    err_truncate: 15,
    // record {src, err, tag, bytes}
    status_layout: StatusLayout { source: 0, error: 1, tag: 2, count: 3 },
};

/// The first `count` keys the allocator hands out.
pub fn ref_key_space(count: u64) -> Vec<NativeHandle> {
    (0..count).map(|k| NativeHandle(REF_KEY_BASE + k * KEY_STRIDE)).collect()
}

pub struct RefHeap {
    objects: BTreeMap<u64, BackendObject>,
    next_key: u64,
}

impl Default for RefHeap {
    fn default() -> Self {
        RefHeap { objects: BTreeMap::new(), next_key: REF_KEY_BASE }
    }
}

impl ObjectStore for RefHeap {
    fn name() -> &'static str {
        "ref"
    }

    fn constants() -> &'static NativeConstants {
        &CONSTANTS
    }

    fn insert(&mut self, obj: BackendObject) -> Result<NativeHandle> {
        let key = self.next_key;
        self.next_key += KEY_STRIDE;
        self.objects.insert(key, obj);
        Ok(NativeHandle(key))
    }

    fn get(&self, h: NativeHandle) -> Result<&BackendObject> {
        self.objects
            .get(&h.0)
            .ok_or_else(|| Error::InvalidHandle(format!("{:#x} does not name a live object", h.0)))
    }

    fn remove(&mut self, h: NativeHandle) -> Result<BackendObject> {
        self.objects
            .remove(&h.0)
            .ok_or_else(|| Error::InvalidHandle(format!("{:#x} does not name a live object", h.0)))
    }

    fn handles(&self) -> Vec<NativeHandle> {
        self.objects.keys().map(|&k| NativeHandle(k)).collect()
    }
}
