//! The standard ABI shared by applications, the adapter and the checkpoint
//! engine.
//!
//! A handle is a 32-bit value: the top 4 bits carry a [`HandleKind`] and the
//! low 28 bits an index. Indexes below [`FIRST_DYNAMIC_INDEX`] name predefined
//! objects and never change; dynamically created objects get indexes at or
//! above it. The raw value `0` is the null handle.

use std::fmt;

use crate::error::{Error, Result};

const KIND_SHIFT: u32 = 28;
const INDEX_MASK: u32 = (1 << KIND_SHIFT) - 1;

/// Largest index representable in a handle.
pub const MAX_INDEX: u32 = INDEX_MASK;

/// First index handed out to dynamically created objects.
pub const FIRST_DYNAMIC_INDEX: u32 = 4096;

/// Wildcard source for receives.
pub const ABI_ANY_SOURCE: i32 = -1;
/// Wildcard tag for receives.
pub const ABI_ANY_TAG: i32 = -1;
/// Color that excludes the caller from a split.
pub const ABI_UNDEFINED: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum HandleKind {
    Null = 0,
    Comm = 1,
    Group = 2,
    Datatype = 3,
    Op = 4,
    Request = 5,
}

impl HandleKind {
    pub const ALL: [HandleKind; 6] = [
        HandleKind::Null,
        HandleKind::Comm,
        HandleKind::Group,
        HandleKind::Datatype,
        HandleKind::Op,
        HandleKind::Request,
    ];

    pub fn from_code(code: u32) -> Option<HandleKind> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            HandleKind::Null => "Null",
            HandleKind::Comm => "Comm",
            HandleKind::Group => "Group",
            HandleKind::Datatype => "Datatype",
            HandleKind::Op => "Op",
            HandleKind::Request => "Request",
        }
    }
}

impl fmt::Display for HandleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A standard-ABI handle. Serialized as its raw value, little-endian.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbiHandle(u32);

impl AbiHandle {
    pub const NULL: AbiHandle = AbiHandle(0);

    pub fn encode(kind: HandleKind, index: u32) -> Result<AbiHandle> {
        if index > MAX_INDEX {
            return Err(Error::InvalidHandle(format!(
                "index {index:#x} does not fit in 28 bits"
            )));
        }
        Ok(AbiHandle(((kind as u32) << KIND_SHIFT) | index))
    }

    /// Wraps a raw value without validating it; use [`AbiHandle::decode`] to
    /// check well-formedness.
    pub const fn from_raw(raw: u32) -> AbiHandle {
        AbiHandle(raw)
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    pub fn decode(self) -> Result<(HandleKind, u32)> {
        let code = self.0 >> KIND_SHIFT;
        let kind = HandleKind::from_code(code).ok_or_else(|| {
            Error::InvalidHandle(format!("handle {:#010x} has undefined kind {code}", self.0))
        })?;
        Ok((kind, self.0 & INDEX_MASK))
    }

    pub fn kind(self) -> Result<HandleKind> {
        self.decode().map(|(k, _)| k)
    }

    pub fn index(self) -> u32 {
        self.0 & INDEX_MASK
    }

    pub fn is_null(self) -> bool {
        self.0 == 0
    }

    pub fn is_predefined(self) -> bool {
        self.index() < FIRST_DYNAMIC_INDEX
    }

    pub fn to_le_bytes(self) -> [u8; 4] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 4]) -> AbiHandle {
        AbiHandle(u32::from_le_bytes(bytes))
    }
}

impl fmt::Debug for AbiHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AbiHandle({:#010x})", self.0)
    }
}

impl fmt::Display for AbiHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

/// Predefined objects every backend must provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predefined {
    CommWorld,
    CommSelf,
    Byte,
    I32,
    I64,
    F64,
    Sum,
    Max,
    Min,
    Prod,
}

impl Predefined {
    pub const ALL: [Predefined; 10] = [
        Predefined::CommWorld,
        Predefined::CommSelf,
        Predefined::Byte,
        Predefined::I32,
        Predefined::I64,
        Predefined::F64,
        Predefined::Sum,
        Predefined::Max,
        Predefined::Min,
        Predefined::Prod,
    ];

    pub fn kind(self) -> HandleKind {
        match self {
            Predefined::CommWorld | Predefined::CommSelf => HandleKind::Comm,
            Predefined::Byte | Predefined::I32 | Predefined::I64 | Predefined::F64 => {
                HandleKind::Datatype
            }
            Predefined::Sum | Predefined::Max | Predefined::Min | Predefined::Prod => HandleKind::Op,
        }
    }

    fn index(self) -> u32 {
        match self {
            Predefined::CommWorld | Predefined::Byte | Predefined::Sum => 0,
            Predefined::CommSelf | Predefined::I32 | Predefined::Max => 1,
            Predefined::I64 | Predefined::Min => 2,
            Predefined::F64 | Predefined::Prod => 3,
        }
    }

    pub fn handle(self) -> AbiHandle {
        AbiHandle(((self.kind() as u32) << KIND_SHIFT) | self.index())
    }

    pub fn name(self) -> &'static str {
        match self {
            Predefined::CommWorld => "ABI_COMM_WORLD",
            Predefined::CommSelf => "ABI_COMM_SELF",
            Predefined::Byte => "ABI_BYTE",
            Predefined::I32 => "ABI_I32",
            Predefined::I64 => "ABI_I64",
            Predefined::F64 => "ABI_F64",
            Predefined::Sum => "ABI_SUM",
            Predefined::Max => "ABI_MAX",
            Predefined::Min => "ABI_MIN",
            Predefined::Prod => "ABI_PROD",
        }
    }

    pub fn from_name(name: &str) -> Option<Predefined> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn from_handle(h: AbiHandle) -> Option<Predefined> {
        Self::ALL.into_iter().find(|p| p.handle() == h)
    }
}

pub const ABI_COMM_NULL: AbiHandle = AbiHandle::NULL;
pub const ABI_COMM_WORLD: AbiHandle = AbiHandle(0x1000_0000);
pub const ABI_COMM_SELF: AbiHandle = AbiHandle(0x1000_0001);
pub const ABI_BYTE: AbiHandle = AbiHandle(0x3000_0000);
pub const ABI_I32: AbiHandle = AbiHandle(0x3000_0001);
pub const ABI_I64: AbiHandle = AbiHandle(0x3000_0002);
pub const ABI_F64: AbiHandle = AbiHandle(0x3000_0003);
pub const ABI_SUM: AbiHandle = AbiHandle(0x4000_0000);
pub const ABI_MAX: AbiHandle = AbiHandle(0x4000_0001);
pub const ABI_MIN: AbiHandle = AbiHandle(0x4000_0002);
pub const ABI_PROD: AbiHandle = AbiHandle(0x4000_0003);

/// A value from the constants table: either a handle or a plain integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbiConstant {
    Handle(AbiHandle),
    Int(i32),
}

const INT_CONSTANTS: [(&str, i32); 3] = [
    ("ABI_ANY_SOURCE", ABI_ANY_SOURCE),
    ("ABI_ANY_TAG", ABI_ANY_TAG),
    ("ABI_UNDEFINED", ABI_UNDEFINED),
];

/// Every named constant in table order.
pub fn constants() -> Vec<(&'static str, AbiConstant)> {
    let mut out = Vec::with_capacity(Predefined::ALL.len() + 1 + INT_CONSTANTS.len());
    out.push(("ABI_COMM_NULL", AbiConstant::Handle(ABI_COMM_NULL)));
    out.extend(
        Predefined::ALL
            .into_iter()
            .map(|p| (p.name(), AbiConstant::Handle(p.handle()))),
    );
    out.extend(INT_CONSTANTS.iter().map(|&(n, v)| (n, AbiConstant::Int(v))));
    out
}

pub fn constant_lookup(name: &str) -> Result<AbiConstant> {
    constants()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::InvalidHandle(format!("unknown constant {name:?}")))
}

/// Renders the constants table as TSV: `name`, `kind`, `raw` (hex).
pub fn constants_tsv() -> String {
    let mut out = String::from("name\tkind\traw\n");
    for (name, value) in constants() {
        let (kind, raw) = match value {
            AbiConstant::Handle(h) => (h.kind().map(HandleKind::name).unwrap_or("?"), h.raw()),
            AbiConstant::Int(v) => ("Int", v as u32),
        };
        out.push_str(&format!("{name}\t{kind}\t{raw:#010x}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum ErrorCode {
    Success = 0,
    InvalidHandle = 1,
    KindMismatch = 2,
    Truncated = 3,
    PendingAtCheckpoint = 4,
    ReplayMismatch = 5,
    BackendFailure = 6,
}

impl ErrorCode {
    pub fn from_i32(v: i32) -> Option<ErrorCode> {
        use ErrorCode::*;
        [
            Success,
            InvalidHandle,
            KindMismatch,
            Truncated,
            PendingAtCheckpoint,
            ReplayMismatch,
            BackendFailure,
        ]
        .into_iter()
        .find(|c| *c as i32 == v)
    }
}

/// Status of a completed receive (or send) at the standard layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AbiStatus {
    pub source: i32,
    pub tag: i32,
    pub error: i32,
    pub count_bytes: u64,
}

impl AbiStatus {
    pub fn error_code(&self) -> Option<ErrorCode> {
        ErrorCode::from_i32(self.error)
    }

    pub fn is_truncated(&self) -> bool {
        self.error == ErrorCode::Truncated as i32
    }
}
