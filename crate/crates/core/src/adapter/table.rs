use std::collections::HashMap;

use crate::abi::{AbiHandle, HandleKind, FIRST_DYNAMIC_INDEX};
use crate::backends::NativeHandle;
use crate::error::{Error, Result};

/// Bidirectional map between standard handles and one backend's native
/// handles. Dynamic indexes come from a per-kind counter and are retired,
/// never reused, when their pairing is removed.
#[derive(Debug, Clone)]
pub struct TranslationTable {
    to_native: HashMap<AbiHandle, NativeHandle>,
    to_abi: HashMap<(HandleKind, NativeHandle), AbiHandle>,
    next_index: [u32; HandleKind::ALL.len()],
}

impl Default for TranslationTable {
    fn default() -> Self {
        TranslationTable {
            to_native: HashMap::new(),
            to_abi: HashMap::new(),
            next_index: [FIRST_DYNAMIC_INDEX; HandleKind::ALL.len()],
        }
    }
}

impl TranslationTable {
    pub fn register_predefined(&mut self, abi: AbiHandle, native: NativeHandle) -> Result<()> {
        let kind = abi.kind()?;
        if !abi.is_predefined() {
            return Err(Error::InvalidHandle(format!("{abi} is not a predefined handle")));
        }
        self.insert(kind, abi, native)
    }

    fn insert(&mut self, kind: HandleKind, abi: AbiHandle, native: NativeHandle) -> Result<()> {
        if self.to_native.contains_key(&abi) || self.to_abi.contains_key(&(kind, native)) {
            return Err(Error::BackendFailure(format!(
                "pairing {abi} <-> {native:?} collides with an existing entry"
            )));
        }
        self.to_native.insert(abi, native);
        self.to_abi.insert((kind, native), abi);
        Ok(())
    }

    pub fn native(&self, abi: AbiHandle) -> Option<NativeHandle> {
        self.to_native.get(&abi).copied()
    }

    pub fn abi(&self, kind: HandleKind, native: NativeHandle) -> Option<AbiHandle> {
        self.to_abi.get(&(kind, native)).copied()
    }

    /// Returns the existing pairing for `native`, or pairs it with a fresh
    /// dynamic handle.
    pub fn intern(&mut self, kind: HandleKind, native: NativeHandle) -> Result<AbiHandle> {
        if let Some(abi) = self.abi(kind, native) {
            return Ok(abi);
        }
        let slot = &mut self.next_index[kind as usize];
        let abi = AbiHandle::encode(kind, *slot)?;
        *slot += 1;
        self.insert(kind, abi, native)?;
        Ok(abi)
    }

    pub fn remove(&mut self, abi: AbiHandle) -> Result<NativeHandle> {
        let kind = abi.kind()?;
        let native = self
            .to_native
            .remove(&abi)
            .ok_or_else(|| Error::InvalidHandle(format!("{abi} is not registered")))?;
        self.to_abi.remove(&(kind, native));
        Ok(native)
    }

    pub fn len(&self) -> usize {
        self.to_native.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_native.is_empty()
    }

    /// Pairs sorted by standard handle.
    pub fn entries(&self) -> Vec<(AbiHandle, NativeHandle)> {
        let mut v: Vec<_> = self.to_native.iter().map(|(a, n)| (*a, *n)).collect();
        v.sort_unstable();
        v
    }

    /// True when both directions hold exactly the same pairs.
    pub fn is_bijective(&self) -> bool {
        self.to_native.len() == self.to_abi.len()
            && self.to_native.iter().all(|(abi, native)| {
                abi.kind()
                    .is_ok_and(|k| self.to_abi.get(&(k, *native)) == Some(abi))
            })
    }

    /// TSV dump: `kind`, `abi` (hex), `native` (hex).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kind\tabi\tnative\n");
        for (abi, native) in self.entries() {
            let kind = abi.kind().map(HandleKind::name).unwrap_or("?");
            out.push_str(&format!("{kind}\t{:#010x}\t{:#x}\n", abi.raw(), native.0));
        }
        out
    }
}
